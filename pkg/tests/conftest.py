# %%
import pytest
from mpmath import mp

from phi_cascade.cascade import MeasureConfig
from phi_cascade.weight import PhiConfig, make_phi_config


def normalization_oracle():
    return 1 / (2 * mp.expint(2, 1))


def edge_mass_oracle(h):
    """phi([-1, -1 + h]) = c h E_2(1/h), with c = 1 / (2 E_2(1)). Returns an mpf."""
    h = mp.mpf(h)
    return normalization_oracle() * h * mp.expint(2, 1 / h)


@pytest.fixture(scope="session")
def phi_cfg() -> PhiConfig:
    return make_phi_config(quad_rel_tol=1e-12)


@pytest.fixture(scope="session")
def measure_cfg(phi_cfg) -> MeasureConfig:
    return MeasureConfig(phi=phi_cfg, rel_gap=1e-8, max_gen=12)


@pytest.fixture(scope="session")
def deep_measure_cfg(phi_cfg) -> MeasureConfig:
    return MeasureConfig(phi=phi_cfg, rel_gap=1e-8, max_gen=18)
