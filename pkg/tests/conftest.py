import numpy as np
import pytest

from stabledens.drift import ttw_drift
from stabledens.engine import ModelSpec, ParametrixEngine, a_benchmark, grid_for
from stabledens.stable import StableParams, build_radial_table


@pytest.fixture(scope="session")
def table07():
    return build_radial_table(StableParams(0.7, 1))


@pytest.fixture(scope="session")
def table10():
    return build_radial_table(StableParams(1.0, 1))


@pytest.fixture(scope="session")
def table15():
    return build_radial_table(StableParams(1.5, 1), n_points=1024)


@pytest.fixture(scope="session")
def bench_model():
    """The working benchmark: alpha=0.7, power drift gamma=0.5, smooth
    jump intensity, chi=0.3."""
    return ModelSpec(alpha=0.7, drift=ttw_drift(0.5), a=a_benchmark(), chi=0.3)


@pytest.fixture(scope="session")
def bench_engine(bench_model, table07):
    grid = grid_for(t_min=0.05, alpha=0.7, half_width=3.0, safety=5)
    return ParametrixEngine(bench_model, grid, table=table07)


@pytest.fixture(scope="session")
def bench_sweep(bench_engine):
    """One shared series run across the acceptance time sweep."""
    from stabledens.engine import compute_density

    return compute_density(bench_engine, 0.4, 0.0,
                           outputs=[0.05, 0.1, 0.2, 0.4])
