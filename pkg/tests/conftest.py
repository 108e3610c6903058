import numpy as np
import pytest

from bornkit.greens import assemble_gd, assemble_gs
from bornkit.forward import incident_fields
from bornkit.scene import SceneConfig, disk, rasterize


@pytest.fixture(scope="session")
def small_config():
    """Coarse geometry that keeps dense solves cheap."""
    return SceneConfig(forward_grid=24, inversion_grid=16)


@pytest.fixture(scope="session")
def small_ops(small_config):
    m = small_config.inversion_grid
    return dict(
        config=small_config,
        gd=assemble_gd(small_config, m),
        gs=assemble_gs(small_config, m),
        einc=incident_fields(small_config, m),
    )


@pytest.fixture(scope="session")
def m8_ops():
    cfg = SceneConfig(forward_grid=12, inversion_grid=8)
    return dict(config=cfg, gd=assemble_gd(cfg, 8), gs=assemble_gs(cfg, 8), einc=incident_fields(cfg, 8))


def weak_disk(config, grid, contrast=0.3, radius=0.03):
    return rasterize([disk((0.0, 0.0), radius, contrast)], config, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
