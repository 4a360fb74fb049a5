from __future__ import annotations

import pytest

from krflab.flow import FlowSettings, graded_times, run_flow
from krflab.functionals import ricci_potential
from krflab.geometry import MetricState, make_grid
from krflab.potentials import preset_potential


def grid_for(n: int, N: int = 64):
    return make_grid("S2Zonal" if n == 1 else "CPnRadial", n, N)


@pytest.fixture(scope="session")
def sphere_grid():
    return grid_for(1)


@pytest.fixture(scope="session")
def cp2_grid():
    return grid_for(2)


@pytest.fixture(scope="session")
def standard_start(sphere_grid):
    """0.3 P2 on the round sphere: R_min(0) is about -245."""
    return MetricState(sphere_grid, preset_potential(sphere_grid, "p2", 0.3))


@pytest.fixture(scope="session")
def standard_trace(standard_start):
    return run_flow(standard_start, FlowSettings(t_max=30.0, stop_tol=1e-5))


@pytest.fixture(scope="session")
def graded_trace(standard_start, standard_trace):
    """The standard start sampled densely on [0, 3] for difference quotients."""
    return run_flow(standard_start, FlowSettings(t_max=3.0, stop_tol=0.0), h=standard_trace.ricci,
                    normalize=False, sample_times=graded_times(3.0))


@pytest.fixture(scope="session")
def cp2_start(cp2_grid):
    return MetricState(cp2_grid, preset_potential(cp2_grid, "p2", 0.2))


@pytest.fixture(scope="session")
def cp2_trace(cp2_start):
    return run_flow(cp2_start, FlowSettings(t_max=30.0, stop_tol=1e-5))


@pytest.fixture(scope="session")
def mild_start(sphere_grid):
    return MetricState(sphere_grid, preset_potential(sphere_grid, "p2", 0.05))


@pytest.fixture(scope="session")
def mild_ricci(mild_start):
    return ricci_potential(mild_start)
