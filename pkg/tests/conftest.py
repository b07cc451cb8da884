import numpy as np
import pytest

from fdlink import ChannelStats, SystemConfig, draw_channels, perturb_csi


@pytest.fixture(scope="session")
def default_config():
    """Desk-scale defaults: K=4, 2x2 antennas, single stream per direction."""
    return SystemConfig.from_scalars()


@pytest.fixture(scope="session")
def perfect_csi_config():
    return SystemConfig.from_scalars(csi_radius=0.0)


@pytest.fixture(scope="session")
def default_channels(default_config):
    """One seeded realization with estimation error inside the default ball."""
    true = draw_channels(default_config, ChannelStats(), 1234)
    _, channels = perturb_csi(true, default_config, 4321, mode="interior")
    return channels


@pytest.fixture(scope="session")
def perfect_channels(perfect_csi_config):
    return draw_channels(perfect_csi_config, ChannelStats(), 1234)


def random_psd(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (a @ a.conj().T) + 1e-6 * np.eye(n)


def crandn_t(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
