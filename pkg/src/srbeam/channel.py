"""Scenario configuration, channel generation, and reflective-link covariance
construction for the symbiotic radio downlink.

Two channel generation modes are provided. The general mode samples every
link i.i.d. complex Gaussian. The clustered mode places each user's devices
on angle offsets around the user's direction and builds line-of-sight
steering channels, which is the geometry the angle-based covariance
approximation targets.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .numerics import project_psd, require_hermitian, sinc

__all__ = [
    "ConfigError",
    "SystemConfig",
    "ChannelSet",
    "CovarianceSet",
    "steering_vector",
    "path_loss",
    "sample_general_channels",
    "build_clustered_channels",
    "covariance_exact",
    "covariance_set_exact",
    "covariance_doa",
    "covariance_set_doa",
    "parse_system_config",
    "load_system_config",
]


class ConfigError(ValueError):
    """Raised for malformed or inconsistent scenario configuration."""


def _as_tuple(value, n_users: int, cast=float) -> tuple:
    if np.isscalar(value):
        return tuple(cast(value) for _ in range(n_users))
    out = tuple(cast(v) for v in value)
    if len(out) == 1 and n_users > 1:
        out = out * n_users
    if len(out) != n_users:
        raise ConfigError(f"per-user field has length {len(out)}, expected {n_users}")
    return out


@dataclass(frozen=True)
class SystemConfig:
    """Full physical description of one downlink scenario.

    Angles are radians, powers are watts, distances are meters, rates are
    bps/Hz. Per-user fields are tuples of length ``n_users``; scalar values
    passed to ``make`` are broadcast.
    """

    n_antennas: int
    n_users: int
    devices_per_user: tuple[int, ...]
    alpha: float
    symbol_ratio: int
    noise_power: tuple[float, ...]
    carrier_wavelength: float
    antenna_gain_bs_db: float
    antenna_gain_user_db: float
    pathloss_exponent: float
    user_distances: tuple[float, ...]
    user_doas: tuple[float, ...]
    angular_spreads: tuple[float, ...]
    reflective_deficit_db: float
    rate_target_cellular: tuple[float, ...]
    rate_target_iot: tuple[float, ...]
    outage_target: float

    def __post_init__(self):
        if self.n_antennas < 1:
            raise ConfigError("n_antennas must be >= 1")
        if self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        if self.symbol_ratio < 1:
            raise ConfigError("symbol_ratio must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.carrier_wavelength <= 0.0:
            raise ConfigError("carrier_wavelength must be positive")
        if self.pathloss_exponent <= 0.0:
            raise ConfigError("pathloss_exponent must be positive")
        if not 0.0 < self.outage_target < 1.0:
            raise ConfigError("outage_target must lie in (0, 1)")
        k = self.n_users
        for name in (
            "devices_per_user",
            "noise_power",
            "user_distances",
            "user_doas",
            "angular_spreads",
            "rate_target_cellular",
            "rate_target_iot",
        ):
            if len(getattr(self, name)) != k:
                raise ConfigError(f"{name} must have one entry per user")
        if any(l < 0 for l in self.devices_per_user):
            raise ConfigError("devices_per_user entries must be >= 0")
        if any(s <= 0.0 for s in self.noise_power):
            raise ConfigError("noise_power entries must be positive")
        if any(d <= 0.0 for d in self.user_distances):
            raise ConfigError("user_distances entries must be positive")
        if any(not 0.0 <= s < math.pi for s in self.angular_spreads):
            raise ConfigError("angular_spreads must lie in [0, pi)")
        if any(r <= 0.0 for r in self.rate_target_cellular):
            raise ConfigError("rate_target_cellular entries must be positive")
        if any(r <= 0.0 for r in self.rate_target_iot):
            raise ConfigError("rate_target_iot entries must be positive")

    @classmethod
    def make(cls, **kwargs) -> "SystemConfig":
        """Build a config with scalar-to-per-user broadcasting."""
        k = int(kwargs["n_users"])
        per_user_float = (
            "noise_power",
            "user_distances",
            "user_doas",
            "angular_spreads",
            "rate_target_cellular",
            "rate_target_iot",
        )
        out = dict(kwargs)
        out["n_antennas"] = int(kwargs["n_antennas"])
        out["n_users"] = k
        out["symbol_ratio"] = int(kwargs["symbol_ratio"])
        out["devices_per_user"] = _as_tuple(kwargs["devices_per_user"], k, cast=int)
        for name in per_user_float:
            out[name] = _as_tuple(kwargs[name], k, cast=float)
        for name in (
            "alpha",
            "carrier_wavelength",
            "antenna_gain_bs_db",
            "antenna_gain_user_db",
            "pathloss_exponent",
            "reflective_deficit_db",
            "outage_target",
        ):
            out[name] = float(kwargs[name])
        return cls(**out)

    def replace(self, **kwargs) -> "SystemConfig":
        merged = dataclasses.asdict(self)
        merged.update(kwargs)
        return SystemConfig.make(**merged)

    @property
    def total_devices(self) -> int:
        return int(sum(self.devices_per_user))

    def path_loss(self, k: int) -> float:
        return path_loss(self.user_distances[k], self)

    def reflective_gain(self, k: int) -> float:
        """|composite per-device reflective amplitude|^2 toward user k."""
        return self.path_loss(k) * 10.0 ** (-self.reflective_deficit_db / 10.0)


@dataclass(frozen=True)
class ChannelSet:
    """One realization of all links.

    ``bs_user`` is (K, M): rows are the direct BS-to-user channels.
    ``bs_device`` is (L, M): rows are BS-to-device channels.
    ``device_user`` is (L, K): scalar device-to-user links.
    ``association`` maps each device to its owning user in clustered mode,
    None in the general mode where every device couples to every user.
    """

    bs_user: np.ndarray
    bs_device: np.ndarray
    device_user: np.ndarray
    association: np.ndarray | None = None

    def __post_init__(self):
        k, m = self.bs_user.shape
        l = self.bs_device.shape[0]
        if self.bs_device.shape != (l, m):
            raise ConfigError("bs_device must be (L, M)")
        if self.device_user.shape != (l, k):
            raise ConfigError("device_user must be (L, K)")
        if self.association is not None and self.association.shape != (l,):
            raise ConfigError("association must be (L,)")
        for arr in (self.bs_user, self.bs_device, self.device_user, self.association):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_users(self) -> int:
        return self.bs_user.shape[0]

    @property
    def n_devices(self) -> int:
        return self.bs_device.shape[0]


@dataclass(frozen=True)
class CovarianceSet:
    """Per-user reflective-link covariance matrices, (K, M, M).

    ``provenance`` records whether the matrices came from instantaneous
    channel knowledge or from the angle/spread approximation.
    ``clip_mass`` is the per-user total eigenvalue mass removed by the PSD
    projection (zero in the exact mode).
    """

    matrices: np.ndarray
    provenance: str
    clip_mass: np.ndarray

    def __post_init__(self):
        if self.provenance not in ("exact", "doa_approx"):
            raise ConfigError(f"unknown covariance provenance {self.provenance!r}")
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise ConfigError("covariance matrices must be (K, M, M)")
        if self.clip_mass.shape != (self.matrices.shape[0],):
            raise ConfigError("clip_mass must be (K,)")
        self.matrices.setflags(write=False)
        self.clip_mass.setflags(write=False)


def steering_vector(theta: float, n_antennas: int) -> np.ndarray:
    """Half-wavelength ULA steering vector, entries exp(j * m * pi * sin(theta))."""
    return np.exp(1j * np.pi * np.arange(n_antennas) * math.sin(theta))


def path_loss(distance: float, cfg: SystemConfig) -> float:
    """Free-space-style large-scale gain lambda^2 Gb Gr / ((4 pi)^2 d^nu)."""
    if distance <= 0.0:
        raise ConfigError("distance must be positive")
    gb = 10.0 ** (cfg.antenna_gain_bs_db / 10.0)
    gr = 10.0 ** (cfg.antenna_gain_user_db / 10.0)
    return cfg.carrier_wavelength**2 * gb * gr / ((4.0 * math.pi) ** 2 * distance**cfg.pathloss_exponent)


def _cn_matrix(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def sample_general_channels(cfg: SystemConfig, seed) -> ChannelSet:
    """Draw an unclustered realization with i.i.d. complex Gaussian links.

    Direct links have per-entry variance equal to the user's path loss.
    Device-to-user scalars are scaled so the composite reflective paths
    alpha * g * h sit at the configured deficit below the direct link in
    expectation. With alpha = 0 the reflective links are identically zero
    and the scalars are zeroed as well.
    """
    rng = np.random.default_rng(seed)
    m, k, l = cfg.n_antennas, cfg.n_users, cfg.total_devices
    pl = np.array([cfg.path_loss(i) for i in range(k)])
    f = _cn_matrix(rng, (k, m)) * np.sqrt(pl)[:, None]
    h = _cn_matrix(rng, (l, m))
    g = _cn_matrix(rng, (l, k))
    if cfg.alpha > 0.0:
        target = np.array([cfg.reflective_gain(i) for i in range(k)])
        g = g * np.sqrt(target)[None, :] / cfg.alpha
    else:
        g = np.zeros((l, k), dtype=complex)
    return ChannelSet(bs_user=f, bs_device=h, device_user=g, association=None)


def _cluster_offsets(l_count: int, spread: float) -> np.ndarray:
    # midpoints of l_count equal subintervals of [-spread/2, spread/2]
    i = np.arange(l_count)
    return spread * ((2.0 * i + 1.0) / (2.0 * l_count) - 0.5)


def build_clustered_channels(cfg: SystemConfig, placement: str = "uniform_grid", seed=None) -> ChannelSet:
    """Build the line-of-sight clustered realization.

    Each user k gets a direct link sqrt(PL_k) * a(theta_k). Its devices sit
    at angles inside [theta_k - spread/2, theta_k + spread/2], either on the
    deterministic midpoint grid or drawn uniformly (requires a seed). The
    device-to-user scalar toward the owning user carries the whole composite
    reflective amplitude; scalars toward other users are zero, which is how
    the cross-cluster links drop out of every downstream formula.
    """
    if placement not in ("uniform_grid", "seeded_random"):
        raise ConfigError(f"unknown placement {placement!r}")
    if placement == "seeded_random":
        if seed is None:
            raise ConfigError("seeded_random placement requires a seed")
        rng = np.random.default_rng(seed)
    m, k = cfg.n_antennas, cfg.n_users
    l = cfg.total_devices
    f = np.zeros((k, m), dtype=complex)
    h = np.zeros((l, m), dtype=complex)
    g = np.zeros((l, k), dtype=complex)
    assoc = np.zeros(l, dtype=int)
    row = 0
    for i in range(k):
        f[i] = math.sqrt(cfg.path_loss(i)) * steering_vector(cfg.user_doas[i], m)
        li = cfg.devices_per_user[i]
        if li == 0:
            continue
        if placement == "uniform_grid":
            angles = cfg.user_doas[i] + _cluster_offsets(li, cfg.angular_spreads[i])
        else:
            half = 0.5 * cfg.angular_spreads[i]
            angles = rng.uniform(cfg.user_doas[i] - half, cfg.user_doas[i] + half, li)
        amp = math.sqrt(cfg.reflective_gain(i))
        for theta in angles:
            h[row] = steering_vector(theta, m)
            g[row, i] = amp
            assoc[row] = i
            row += 1
    return ChannelSet(bs_user=f, bs_device=h, device_user=g, association=assoc)


def covariance_exact(chs: ChannelSet, cfg: SystemConfig, k: int) -> np.ndarray:
    """Reflective-link covariance sum_l |alpha g_{l,k}|^2 h_l^H h_l for user k.

    In clustered mode only the user's own devices contribute (the others
    have zero scalar links anyway, but the associated mask keeps the rank
    bound independent of that convention).
    """
    m = chs.bs_user.shape[1]
    cov = np.zeros((m, m), dtype=complex)
    for l in range(chs.n_devices):
        if chs.association is not None and chs.association[l] != k:
            continue
        w = abs(cfg.alpha * chs.device_user[l, k]) ** 2
        if w == 0.0:
            continue
        cov += w * np.outer(chs.bs_device[l].conj(), chs.bs_device[l])
    return 0.5 * (cov + cov.conj().T)


def covariance_set_exact(chs: ChannelSet, cfg: SystemConfig) -> CovarianceSet:
    k = chs.n_users
    mats = np.stack([covariance_exact(chs, cfg, i) for i in range(k)])
    return CovarianceSet(matrices=mats, provenance="exact", clip_mass=np.zeros(k))


def covariance_doa(
    theta: float,
    spread: float,
    reflective_gain: float,
    alpha: float,
    l_count: int,
    n_antennas: int,
) -> np.ndarray:
    """Angle-based covariance approximation for one user's device cluster.

    Entry (m, n) is alpha^2 * gain * L * exp(-j (m-n) pi sin(theta))
    * sinc((spread/2) (m-n) pi cos(theta)), the dense-cluster limit of the
    exact sum. The Toeplitz matrix this produces can pick up slightly
    negative eigenvalues from the sinc envelope, so it is projected onto
    the PSD cone before being returned.
    """
    mat, _ = _covariance_doa_raw(theta, spread, reflective_gain, alpha, l_count, n_antennas)
    return mat


def _covariance_doa_raw(theta, spread, reflective_gain, alpha, l_count, n_antennas):
    lags = np.subtract.outer(np.arange(n_antennas), np.arange(n_antennas)).astype(float)
    scale = alpha**2 * reflective_gain * l_count
    phase = np.exp(-1j * lags * np.pi * math.sin(theta))
    envelope = np.vectorize(sinc)(0.5 * spread * lags * np.pi * math.cos(theta))
    mat = scale * phase * envelope
    mat = require_hermitian(mat, name="angular covariance")
    return project_psd(mat)


def covariance_set_doa(cfg: SystemConfig) -> CovarianceSet:
    """Per-user angle-based covariances from the scenario description alone."""
    mats = []
    clip = np.zeros(cfg.n_users)
    for k in range(cfg.n_users):
        mat, mass = _covariance_doa_raw(
            cfg.user_doas[k],
            cfg.angular_spreads[k],
            cfg.reflective_gain(k),
            cfg.alpha,
            cfg.devices_per_user[k],
            cfg.n_antennas,
        )
        mats.append(mat)
        clip[k] = mass
    return CovarianceSet(matrices=np.stack(mats), provenance="doa_approx", clip_mass=clip)


_INT_KEYS = {"n_antennas", "n_users", "symbol_ratio"}
_INT_LIST_KEYS = {"devices_per_user"}
_FLOAT_LIST_KEYS = {
    "noise_power",
    "user_distances",
    "user_doas",
    "angular_spreads",
    "rate_target_cellular",
    "rate_target_iot",
}
_FLOAT_KEYS = {
    "alpha",
    "carrier_wavelength",
    "antenna_gain_bs_db",
    "antenna_gain_user_db",
    "pathloss_exponent",
    "reflective_deficit_db",
    "outage_target",
}
_ALL_KEYS = _INT_KEYS | _INT_LIST_KEYS | _FLOAT_LIST_KEYS | _FLOAT_KEYS


def _parse_scalar(token: str) -> float:
    token = token.strip()
    if token.lower().endswith("dbm"):
        return 10.0 ** ((float(token[:-3]) - 30.0) / 10.0)
    return float(token)


def parse_system_config(text: str) -> SystemConfig:
    """Parse a flat key = value scenario file.

    Lines are ``key = value`` with ``#`` comments. Per-user fields take
    comma-separated lists or a scalar that is broadcast. Power values may
    carry a ``dBm`` suffix and are converted to watts.
    """
    raw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                raw[key] = int(value)
            elif key in _INT_LIST_KEYS:
                raw[key] = [int(tok) for tok in value.split(",")]
            elif key in _FLOAT_LIST_KEYS:
                raw[key] = [_parse_scalar(tok) for tok in value.split(",")]
            else:
                raw[key] = _parse_scalar(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    missing = _ALL_KEYS - raw.keys()
    if missing:
        raise ConfigError(f"missing required keys: {sorted(missing)}")
    return SystemConfig.make(**raw)


def load_system_config(path) -> SystemConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_system_config(fh.read())
