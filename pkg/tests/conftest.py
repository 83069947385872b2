import numpy as np
import pytest

from srbeam import SystemConfig, build_clustered_channels


def reference_config(**overrides) -> SystemConfig:
    """Two-user, six-antenna downlink with four backscatter devices per user.

    Noise -100 dBm, reflected links 20 dB below the direct path, device
    clusters 0.01 rad wide around -60/+60 degrees, users at 200 m and 180 m.
    """
    base = dict(
        n_antennas=6,
        n_users=2,
        devices_per_user=4,
        alpha=0.5,
        symbol_ratio=16,
        noise_power=1e-13,
        carrier_wavelength=0.33,
        antenna_gain_bs_db=6.0,
        antenna_gain_user_db=6.0,
        pathloss_exponent=3.5,
        user_distances=(200.0, 180.0),
        user_doas=(-np.pi / 3, np.pi / 3),
        angular_spreads=0.01,
        reflective_deficit_db=20.0,
        rate_target_cellular=3.0,
        rate_target_iot=0.12,
        outage_target=0.1,
    )
    base.update(overrides)
    return SystemConfig.make(**base)


@pytest.fixture(scope="session")
def ref_cfg() -> SystemConfig:
    return reference_config()


@pytest.fixture(scope="session")
def ref_channels(ref_cfg):
    return build_clustered_channels(ref_cfg, placement="uniform_grid")


def seeded_channels(cfg, seed, trial=0):
    return build_clustered_channels(
        cfg, placement="seeded_random", seed=np.random.SeedSequence((seed, trial))
    )
