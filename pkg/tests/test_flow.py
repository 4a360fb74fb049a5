from __future__ import annotations

import math
import os

import numpy as np
import pytest

from krflab import _kernels
from krflab.flow import (DecayFitError, FlowIntegrator, FlowSettings, StiffnessError,
                         centered_derivative, decay_fit, evolution_residuals, first_crossing,
                         flow_rhs, graded_times, read_checkpoint, run_flow, step,
                         write_checkpoint)
from krflab.functionals import ricci_potential
from krflab.geometry import DegenerateMetricError, MetricState
from krflab.potentials import preset_potential, random_potential

from conftest import grid_for


# ---------------------------------------------------------------------------
# right-hand side
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2])
def test_canonical_metric_is_a_fixed_point(n):
    s = MetricState(grid_for(n))
    assert np.max(np.abs(flow_rhs(s))) < 1e-12
    b = MetricState(grid_for(n))
    assert np.max(np.abs(flow_rhs(b.relative(np.zeros(b.grid.N))))) < 1e-12


def test_constant_potential_returns_the_constant(cp2_grid):
    b = MetricState(cp2_grid, random_potential(cp2_grid, 3))
    rp = ricci_potential(b)
    zero = flow_rhs(b.relative(np.zeros(cp2_grid.N)), rp)
    shifted = flow_rhs(b.relative(np.full(cp2_grid.N, 0.37)), rp)
    assert np.max(np.abs(shifted - zero - 0.37)) < 1e-11
    # at phi = 0 the right-hand side is -h
    assert np.max(np.abs(zero + rp.h.values)) < 1e-14


def test_rhs_matches_difference_of_integrated_run(mild_start, mild_ricci):
    integ = FlowIntegrator(mild_start, mild_ricci)
    y = integ.initial()
    for _ in range(50):
        y = integ.rk4(y, 1e-3)
    dt = 1e-3
    fwd = integ.rk4(y, dt)
    y_back = y.copy()
    # backward step of the autonomous system
    bwd = integ.rk4(y_back, -dt)
    fd = ((fwd[:-1] + fwd[-1]) - (bwd[:-1] + bwd[-1])) / (2 * dt)
    s = mild_start.relative(y[:-1] + y[-1])
    assert np.max(np.abs(fd - flow_rhs(s, mild_ricci))) < 1e-6


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def test_step_at_fixed_point_is_identity(sphere_grid):
    s = MetricState(sphere_grid)
    new, res = step(s, 0.01)
    assert np.array_equal(new.phi, np.zeros(sphere_grid.N))
    assert res.error == 0.0 and res.rejections == 0


def test_step_advances_small_perturbation(mild_start, mild_ricci):
    new, res = step(mild_start.relative(np.zeros(mild_start.grid.N)), 1e-3, mild_ricci)
    assert res.error <= 1e-11
    expected = -mild_ricci.h.values * res.dt_used
    assert np.max(np.abs(new.phi - expected)) < 10 * res.dt_used ** 2


def _rk4_run(integ, y, T, m):
    dt = T / m
    for _ in range(m):
        y = integ.rk4(y, dt)
    return y


def test_rk4_global_order():
    g = grid_for(1, 32)
    b = MetricState(g, preset_potential(g, "p2", 0.05))
    integ = FlowIntegrator(b)
    y0 = integ.initial()
    T = 0.2
    ref = _rk4_run(integ, y0, T, 6400)
    errs = [np.max(np.abs(_rk4_run(integ, y0, T, m) - ref)) for m in (100, 200, 400)]
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    for r in ratios:
        assert 14.0 <= r <= 18.5


def test_rk4_one_step_error_ratio():
    """Halving dt cuts the single-step error by 2^5 asymptotically, at least 16."""
    g = grid_for(1, 32)
    b = MetricState(g, preset_potential(g, "p2", 0.05))
    integ = FlowIntegrator(b)
    y0 = _rk4_run(integ, integ.initial(), 0.05, 50)
    errs = []
    for dt in (0.02, 0.01, 0.005):
        ref = _rk4_run(integ, y0, dt, 64)
        errs.append(np.max(np.abs(integ.rk4(y0, dt) - ref)))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    for r in ratios:
        assert r >= 16.0
        assert r <= 34.0


def test_positivity_guard_rejects_and_halves(sphere_grid):
    b = MetricState(sphere_grid, preset_potential(sphere_grid, "p2", 0.3))
    integ = FlowIntegrator(b, tol=1.0, dt_min=1e-12, dt_max=10.0)
    with pytest.raises(DegenerateMetricError):
        integ.rk4(integ.initial(), 1.0)
    res = integ.step(integ.initial(), 1.0)
    assert res.rejections >= 1
    assert res.dt_used < 1.0


def test_stiffness_error(standard_start):
    integ = FlowIntegrator(standard_start, tol=1e-11, dt_min=1e-2)
    with pytest.raises(StiffnessError):
        integ.step(integ.initial(), 1e-2)


def test_numba_and_numpy_kernels_agree(cp2_start):
    if not _kernels.HAVE_NUMBA:
        pytest.skip("numba not importable")
    rp = ricci_potential(cp2_start)
    a = FlowIntegrator(cp2_start, rp, use_numba=False)
    c = FlowIntegrator(cp2_start, rp, use_numba=True)
    y = a.initial()
    y[:-1] = 1e-3 * np.cos(cp2_start.grid.t)
    assert np.max(np.abs(a.rhs(y) - c.rhs(y))) < 1e-12
    assert np.max(np.abs(a.rk4(y, 1e-4) - c.rk4(y, 1e-4))) < 1e-14
    ra, rc = a.step(y, 1e-3), c.step(y, 1e-3)
    assert ra.dt_used == rc.dt_used
    assert np.max(np.abs(ra.y - rc.y)) < 1e-14


def test_backend_switch_in_run(mild_start, mild_ricci):
    if not _kernels.HAVE_NUMBA:
        pytest.skip("numba not importable")
    st = FlowSettings(t_max=0.5, stop_tol=0.0)
    a = run_flow(mild_start, st, h=mild_ricci, use_numba=False, normalize=False)
    c = run_flow(mild_start, st, h=mild_ricci, use_numba=True, normalize=False)
    assert np.max(np.abs(a.E0 - c.E0)) < 1e-13
    # the adaptive step sequences differ in the last bits, each within tol
    assert np.max(np.abs(a.psi - c.psi)) < 1e-9


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2])
def test_canonical_run_is_stationary(n):
    b = MetricState(grid_for(n))
    tr = run_flow(b, FlowSettings(t_max=1.0, stop_tol=0.0))
    assert len(tr) == 21
    assert np.all(tr.E0 == 0.0) and np.max(np.abs(tr.Ek)) < 1e-14
    assert np.all(tr.eps <= 1e-24)
    norm = tr.normalization
    assert norm is not None and norm.boundary
    assert norm.C0 == pytest.approx(-tr.c[0], abs=1e-24)
    assert np.all(np.abs(norm.c_norm) <= 1e-24)
    assert evolution_residuals(tr).max_residual <= 1e-10
    with pytest.raises(DecayFitError):
        decay_fit(tr)


def test_canonical_run_stops_immediately(sphere_grid):
    tr = run_flow(MetricState(sphere_grid), FlowSettings())
    assert tr.converged and tr.t_stop == 0.0 and len(tr) == 1


def test_standard_run_converges(standard_trace):
    tr = standard_trace
    assert tr.converged and tr.t_stop <= 30.0
    assert tr.r_dev[-1] < 1e-5
    assert abs(tr.diameter[-1] - math.pi) <= 1e-4
    assert abs(tr.lambda1[-1] - 1.0) <= 1e-4
    assert tr.e0_violations().size == 0
    assert np.all(np.diff(tr.times) > 0)
    for name in ("E0", "Rmin", "Rmax", "c", "eps", "mu0", "mu1", "lambda1", "diameter"):
        assert getattr(tr, name).shape == tr.times.shape


def test_min_scalar_curvature_bound(standard_trace):
    tr = standard_trace
    assert tr.Rmin[0] < 0
    assert np.all(tr.Rmin >= tr.Rmin[0] * np.exp(-tr.times) - 1e-6)


def test_lambda_sampled_on_stride(standard_trace):
    tr = standard_trace
    stride = tr.settings.monitor_stride
    sampled = np.flatnonzero(np.isfinite(tr.lambda1))
    assert np.all((sampled % stride == 0) | (sampled == len(tr) - 1))


def test_normalization_of_standard_run(standard_trace):
    norm = standard_trace.normalization
    assert norm is not None and not standard_trace.normalization_error
    assert norm.positive
    assert norm.integral <= norm.energy_drop + 1e-6
    assert norm.final <= 1e-6
    assert norm.residual <= 1e-8


def test_short_run_reports_insufficient_tail(standard_start, standard_trace):
    tr = run_flow(standard_start, FlowSettings(t_max=1.0, stop_tol=0.0), h=standard_trace.ricci)
    assert tr.normalization is None
    assert "tail bound" in tr.normalization_error


def test_energy_derivatives(graded_trace):
    tr = graded_trace
    eps = tr.eps[1:-1]
    d0 = centered_derivative(tr.times, tr.E0)
    assert np.max(np.abs(d0 + eps) / eps) <= 1e-4
    d1 = centered_derivative(tr.times, tr.E1)
    target = -2.0 * tr.r_sq[1:-1]
    assert np.max(np.abs(d1 - target) / np.abs(target)) <= 1e-3


def test_decay_fit_on_standard_run(standard_trace):
    fit = decay_fit(standard_trace)
    assert fit.gamma_used == pytest.approx(2.0, abs=0.15)
    assert fit.alpha1 >= fit.gamma_used - 0.15
    assert fit.alpha0 >= fit.alpha0_bound
    assert fit.ok
    with pytest.raises(DecayFitError):
        decay_fit(standard_trace, window=(0.0, 0.5))


def test_limit_identity(standard_trace):
    tr = standard_trace
    assert abs(tr.E1[-1] - (2.0 * tr.E0[-1] - tr.ricci.c_omega)) <= 1e-5


def test_two_resolutions_agree(standard_start, standard_trace):
    """N = 64 against N = 96 for quantities that do not depend on node placement."""
    g = grid_for(1, 96)
    b = MetricState(g, preset_potential(g, "p2", 0.3))
    fine = run_flow(b, FlowSettings(t_max=30.0, stop_tol=1e-5))
    coarse = standard_trace
    assert fine.converged
    assert abs(fine.diameter[-1] - math.pi) <= 1e-4
    assert abs(fine.lambda1[-1] - 1.0) <= 1e-4
    assert fine.normalization.C0 == pytest.approx(coarse.normalization.C0, abs=1e-9)
    assert fine.ricci.c_omega == pytest.approx(coarse.ricci.c_omega, abs=1e-10)
    k = int(np.searchsorted(coarse.times, 1.0))
    assert fine.E0[k] == pytest.approx(coarse.E0[k], abs=1e-10)
    assert fine.E1[k] == pytest.approx(coarse.E1[k], abs=1e-10)


def test_evolution_residual_and_order(mild_start, mild_ricci):
    res = []
    for dt in (1e-3, 5e-4):
        tr = run_flow(mild_start, FlowSettings(t_max=1.0, sample_dt=dt, stop_tol=0.0,
                                               monitor_stride=10 ** 9), h=mild_ricci,
                      normalize=False)
        res.append(evolution_residuals(tr).max_residual)
    assert res[0] <= 1e-3
    assert res[0] / res[1] >= 3.5


def test_cp2_run(cp2_trace):
    tr = cp2_trace
    n = 2
    assert tr.converged
    assert tr.Rmin[0] < -n + 1
    t_cross = first_crossing(tr.times, tr.Rmin, -n + 1)
    t0 = math.log(-tr.Rmin[0] / (n - 1 - n * 0.25))
    assert t_cross <= t0
    after = tr.times >= t_cross
    assert np.max(np.diff(tr.E1[after])) <= 1e-8
    assert np.max(np.abs(tr.pali_residual) / (1 + np.abs(tr.E1))) <= 1e-6


# ---------------------------------------------------------------------------
# checkpoints and helpers
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    y = np.array([0.1, -1e-300, math.pi, 2.0 ** -1074, 1.0 / 3.0])
    p = str(tmp_path / "ck.json")
    write_checkpoint(p, 1.25, 7, 3e-4, y)
    t, j, dt, y2 = read_checkpoint(p)
    assert (t, j, dt) == (1.25, 7, 3e-4)
    assert np.array_equal(y, y2)


def test_resume_reproduces_run(tmp_path, mild_start, mild_ricci):
    st = FlowSettings(t_max=1.0, stop_tol=0.0, checkpoint_stride=5)
    full = run_flow(mild_start, st, h=mild_ricci, checkpoint_dir=str(tmp_path), normalize=False)
    assert len(full.checkpoints) == 4
    ck = full.checkpoints[1]
    assert os.path.basename(ck) == "checkpoint_000010.json"
    rest = run_flow(mild_start, st, h=mild_ricci, resume=ck, normalize=False)
    assert rest.times[0] == pytest.approx(0.5)
    assert np.array_equal(rest.psi[-1], full.psi[-1])
    assert np.array_equal(rest.E0, full.E0[10:])


def test_graded_times():
    t = graded_times(3.0)
    assert t[0] == 0.0 and t[-1] == 3.0
    h = np.diff(t)
    assert np.all(h > 0) and h.max() <= 1e-3 + 1e-15
    assert h[0] == pytest.approx(2e-5)


def test_centered_derivative_exact_on_quadratics():
    t = np.cumsum(np.r_[0.0, np.random.default_rng(1).uniform(0.1, 1.0, 20)])
    f = 3 * t ** 2 - t + 2
    assert np.max(np.abs(centered_derivative(t, f) - (6 * t[1:-1] - 1))) < 1e-11


def test_first_crossing():
    t = np.array([0.0, 1.0, 2.0])
    assert first_crossing(t, np.array([-3.0, -1.0, 1.0]), 0.0) == 1.5
    assert math.isnan(first_crossing(t, np.array([-3.0, -2.0, -1.0]), 0.0))


def test_settings_validation():
    with pytest.raises(ValueError):
        FlowSettings(t_max=-1.0)
    with pytest.raises(ValueError):
        FlowSettings(dt_min=1.0, dt_init=1e-3)
    with pytest.raises(ValueError):
        FlowSettings(monitor_stride=0)
