from __future__ import annotations

import numpy as np
import pytest

import krflab.ma_path as ma
from krflab.functionals import ricci_potential
from krflab.geometry import MetricState
from krflab.ma_path import (ContinuationFailure, NewtonDivergence, continuity_path, ij_difference,
                            ij_rate, ma_solve, normalizing_constant)
from krflab.potentials import preset_potential, random_potential

from conftest import grid_for


@pytest.fixture(scope="module")
def standard_path(standard_start):
    return continuity_path(standard_start, 21)


# ---------------------------------------------------------------------------
# normalizing constant
# ---------------------------------------------------------------------------

def test_normalizing_constant_vanishes_for_zero_h(sphere_grid):
    b = MetricState(sphere_grid)
    for t in np.linspace(0.0, 1.0, 6):
        assert normalizing_constant(b, t) == 0.0


def test_normalizing_constant_at_t0(standard_start):
    assert normalizing_constant(standard_start, 0.0) == 0.0


@pytest.mark.parametrize("n,seed", [(1, 0), (1, 4), (2, 2)])
def test_normalizing_constant_sign(n, seed):
    """h is normalized by mean(e^h) = 1, so c_1 = 0 and c_t > 0 inside (0, 1)."""
    g = grid_for(n)
    b = MetricState(g, random_potential(g, seed))
    rp = ricci_potential(b)
    assert abs(normalizing_constant(b, 1.0, rp)) <= 1e-12
    for t in (0.1, 0.5, 0.9):
        assert normalizing_constant(b, t, rp) > 0.0
    # the constant makes e^(t h + c_t) a probability density
    for t in (0.3, 0.7, 1.0):
        c = normalizing_constant(b, t, rp)
        assert abs(b.mean(np.exp(t * rp.h.values + c)) - 1.0) <= 1e-12


def test_normalizing_constant_is_concave_in_t(standard_start):
    rp = ricci_potential(standard_start)
    ts = np.linspace(0.0, 1.0, 11)
    c = np.array([normalizing_constant(standard_start, t, rp) for t in ts])
    # -log of a moment generating function is concave
    assert np.all(np.diff(c, 2) <= 1e-15)


# ---------------------------------------------------------------------------
# Newton solves
# ---------------------------------------------------------------------------

def test_zero_target_gives_zero(cp2_grid):
    sol = ma_solve(MetricState(cp2_grid), np.zeros(cp2_grid.N))
    assert sol.iterations == 0
    assert np.all(sol.phi == 0.0)
    assert np.all(sol.potential.values == 0.0)


@pytest.mark.parametrize("n,seed", [(1, 0), (1, 7), (2, 0), (2, 5)])
def test_round_trip(n, seed):
    g = grid_for(n)
    b = MetricState(g)
    psi = random_potential(g, seed)
    psi = psi - b.mean(psi)
    target = MetricState(g, psi).logv_abs - b.logv_abs
    sol = ma_solve(b, target)
    assert sol.residual <= 1e-10
    assert np.max(np.abs(sol.phi - psi)) <= 1e-9
    assert abs(b.mean(sol.phi)) <= 1e-12


def test_round_trip_over_perturbed_background(cp2_grid):
    b = MetricState(cp2_grid, 0.5 * random_potential(cp2_grid, 11))
    psi = 0.3 * random_potential(cp2_grid, 12)
    psi = psi - b.mean(psi)
    target = b.relative(psi).logv_abs - b.logv_abs
    sol = ma_solve(b, target)
    assert np.max(np.abs(sol.phi - psi)) <= 1e-9


def test_quadratic_convergence(sphere_grid):
    b = MetricState(sphere_grid)
    psi = random_potential(sphere_grid, 0)
    target = MetricState(sphere_grid, psi - b.mean(psi)).logv_abs
    r = np.array(ma_solve(b, target).residuals)
    # once in the basin, r_(k+1) <= C r_k^2 with a modest C
    tail = [(r[k], r[k + 1]) for k in range(r.size - 1) if r[k] < 1e-2 and r[k + 1] > 1e-13]
    assert len(tail) >= 2
    for a, c in tail:
        assert c <= 5.0 * a * a
        assert np.log(c) / np.log(a) >= 1.8


def test_newton_divergence_reported(sphere_grid):
    b = MetricState(sphere_grid)
    psi = random_potential(sphere_grid, 0)
    target = MetricState(sphere_grid, psi - b.mean(psi)).logv_abs
    with pytest.raises(NewtonDivergence):
        ma_solve(b, target, max_iter=2)


# ---------------------------------------------------------------------------
# continuity path
# ---------------------------------------------------------------------------

def test_canonical_path_is_trivial(cp2_grid):
    r = continuity_path(MetricState(cp2_grid), 6)
    # h_0 is zero up to rounding on the canonical metric
    assert np.max(np.abs(r.potentials)) <= 1e-14
    assert np.max(np.abs(r.c_t)) <= 1e-14
    assert np.all(r.newton_iterations == 0)
    assert np.max(np.abs(r.E0_along_path)) <= 1e-14


def test_standard_path(standard_start, standard_path):
    r = standard_path
    assert standard_start.R.min() < 0.0
    assert r.t_values[0] == 0.0 and r.t_values[-1] == 1.0
    assert r.t_values.size == 21 and r.halvings == 0
    assert r.endpoint_min_ricci > 0.0
    assert np.max(r.e0_increments) <= 1e-8
    assert r.residuals.max() <= 1e-10
    assert np.max(np.abs(r.gauge)) <= 1e-10
    assert r.newton_iterations.max() <= 8
    assert r.ricci_identity.max() <= 1e-6
    assert np.nanmax(r.energy_identity) <= 1e-4


def test_endpoint_solves_the_equation(standard_start, standard_path):
    rp = ricci_potential(standard_start)
    s = standard_path.endpoint_state
    # t = 1: omega_phi^n = e^(h_0) omega_0^n, so the Ricci potential of the end is constant
    lhs = s.logv_abs - standard_start.logv_abs
    assert np.max(np.abs(lhs - rp.h.values - standard_path.c_t[-1])) <= 1e-10


def test_tangent_residual_is_second_order(standard_start, standard_path):
    fine = continuity_path(standard_start, 41)
    ratio = np.nanmax(standard_path.tangent_residual) / np.nanmax(fine.tangent_residual)
    assert ratio >= 3.5


def test_cp2_path(cp2_start):
    r = continuity_path(cp2_start, 11)
    assert r.endpoint_min_ricci > 0.0
    assert np.max(r.e0_increments) <= 1e-8
    assert r.residuals.max() <= 1e-10


def test_continuation_failure_reports_last_t(monkeypatch, standard_start):
    real = ma.ma_solve

    def flaky(b, target, guess=None, **kw):
        if np.max(np.abs(target)) > 0.5 * np.max(np.abs(ricci_potential(standard_start).h.values)):
            raise NewtonDivergence("forced")
        return real(b, target, guess, **kw)

    monkeypatch.setattr(ma, "ma_solve", flaky)
    with pytest.raises(ContinuationFailure) as info:
        continuity_path(standard_start, 11, max_halvings=3)
    assert 0.0 < info.value.last_t < 1.0


def test_path_needs_two_points(sphere_grid):
    with pytest.raises(ValueError):
        continuity_path(MetricState(sphere_grid), 1)


def test_ij_rate_matches_difference(cp2_grid):
    b = MetricState(cp2_grid, 0.5 * random_potential(cp2_grid, 20))
    phi = 0.3 * random_potential(cp2_grid, 21)
    phidot = random_potential(cp2_grid, 22)
    d = 1e-4
    fd = (ij_difference(b, phi + d * phidot) - ij_difference(b, phi - d * phidot)) / (2 * d)
    assert ij_rate(b, phi, phidot) == pytest.approx(fd, rel=1e-6)


def test_preset_helper_matches_fixture(sphere_grid, standard_start):
    assert np.array_equal(standard_start.phi, preset_potential(sphere_grid, "p2", 0.3))
