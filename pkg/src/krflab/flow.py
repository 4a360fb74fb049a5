"""Normalized Kahler-Ricci flow of potentials with monitored diagnostics.

The flow  d phi/dt = log(omega_phi^n / omega^n) + phi - h_omega  is started
from phi = 0, so the background omega is the initial metric.  The potential
is split as phi = psi + a with psi of zero background mean; the constant a
carries the e^t gauge mode on its own (a' = a + <G>), which keeps psi well
scaled however large a grows.  Every functional recorded here ignores
constants, so diagnostics are computed from psi.

Time stepping is classical RK4 with step doubling.  A step is rejected and
dt halved whenever the Richardson error estimate exceeds the tolerance or a
stage leaves the Kahler cone.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels
from .functionals import (DEFAULT_PATH_POINTS, RicciPotential, all_energies,
                          energy_rate, ricci_potential)
from .geometry import (DegenerateMetricError, MetricState, diameter, field_values,
                       grad_norm_sq, mixed_density)
from .spectrum import dirichlet_eigs, restricted_gap

CHECKPOINT_VERSION = 1


class StiffnessError(ArithmeticError):
    """The step size fell below dt_min."""


class InsufficientTailError(ValueError):
    """The run is too short for the normalization integral to be truncated."""


class DecayFitError(ValueError):
    pass


@dataclass(frozen=True)
class FlowSettings:
    t_max: float = 40.0
    stop_tol: float = 1e-5
    dt_init: float = 1e-4
    dt_min: float = 1e-9
    dt_max: float = 0.05
    tol: float = 1e-11
    sample_dt: float = 0.05
    monitor_stride: int = 20
    checkpoint_stride: int = 0
    path_points: int = DEFAULT_PATH_POINTS

    def __post_init__(self):
        for name in ("t_max", "dt_init", "dt_min", "dt_max", "tol", "sample_dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"flow.{name} must be positive")
        if self.stop_tol < 0:
            raise ValueError("flow.stop_tol must be non-negative")
        if self.dt_min > self.dt_init:
            raise ValueError("flow.dt_min must not exceed flow.dt_init")
        if self.monitor_stride < 1:
            raise ValueError("flow.monitor_stride must be >= 1")
        if self.checkpoint_stride < 0:
            raise ValueError("flow.checkpoint_stride must be >= 0")
        if self.path_points < 1:
            raise ValueError("flow.path_points must be >= 1")


@dataclass(frozen=True)
class StepResult:
    y: np.ndarray
    dt_used: float
    dt_next: float
    error: float
    rejections: int


@dataclass(frozen=True)
class Normalization:
    """Shift constant C0 and the normalized mean velocity c~(t) = c(t) + C0 e^t.

    c~ is evaluated in the form e^t int_t^T e^(-s) eps(s) ds plus a tail
    estimate, which is insensitive to the size of e^t.  ``residual`` compares
    it with the shifted raw series, scaled by e^(-t).
    """

    C0: float
    c_norm: np.ndarray
    residual: float
    integral: float
    energy_drop: float
    final: float
    tail: float
    boundary: bool

    @property
    def positive(self) -> bool:
        return bool(np.all(self.c_norm > 0.0))


@dataclass
class FlowTrace:
    background: MetricState
    ricci: RicciPotential
    settings: FlowSettings
    times: np.ndarray
    E0: np.ndarray
    Ek: np.ndarray
    Rmin: np.ndarray
    Rmax: np.ndarray
    r_dev: np.ndarray
    sup_ric_dev: np.ndarray
    c: np.ndarray
    eps: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    lambda1: np.ndarray
    diameter: np.ndarray
    pali_residual: np.ndarray
    r_sq: np.ndarray
    ric_l2: np.ndarray
    psi: np.ndarray
    gauge: np.ndarray
    converged: bool
    stop_reason: str
    steps_accepted: int
    steps_rejected: int
    normalization: Optional[Normalization] = None
    normalization_error: str = ""
    checkpoints: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.background.n

    @property
    def E1(self) -> np.ndarray:
        return self.Ek[:, 1]

    @property
    def t_stop(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return self.times.size

    def state(self, j: int) -> MetricState:
        return self.background.relative(self.psi[j])

    def velocity(self, j: int) -> np.ndarray:
        """phi-dot at sample j without the gauge constant."""
        return flow_rhs(self.state(j), self.ricci)

    def e0_violations(self, slack: float = 1e-8) -> np.ndarray:
        """Sample indices j where E0 rose by more than ``slack`` since j - 1."""
        return np.flatnonzero(np.diff(self.E0) > slack) + 1

    def moser_ratio(self, window: float = 1.0) -> np.ndarray:
        """sup|Ric - omega|(t) over the L^2 space-time norm on [t - window, t]."""
        t = self.times
        cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (self.ric_l2[1:] + self.ric_l2[:-1]))])
        out = np.full(t.size, np.nan)
        for j in range(t.size):
            if t[j] - t[0] < window:
                continue
            lo = t[j] - window
            val = np.interp(lo, t, cum)
            norm = math.sqrt(max(cum[j] - val, 0.0))
            if norm > 0.0:
                out[j] = self.sup_ric_dev[j] / norm
        return out


# --------------------------------------------------------------------------
# right-hand side and stepping
# --------------------------------------------------------------------------

def _h_array(background: MetricState, h) -> np.ndarray:
    if h is None:
        return ricci_potential(background).h.values
    if isinstance(h, RicciPotential):
        return h.h.values
    return field_values(h, background.grid)


def flow_rhs(state: MetricState, h_background=None) -> np.ndarray:
    """log(omega_phi^n / omega^n) + phi - h_omega for a state over its background."""
    b = state.background
    if b is None:
        # the canonical form is Kahler-Einstein, h = 0
        return state.logv_abs + state.phi
    hb = _h_array(b, h_background)
    return state.logv_abs - b.logv_abs + state.phi - hb


class FlowIntegrator:
    """Adaptive RK4 for the gauge-split state y = [psi, a]."""

    def __init__(self, background: MetricState, h=None, tol: float = 1e-11,
                 dt_min: float = 1e-9, dt_max: float = 0.05, use_numba: bool | None = None):
        g = background.grid
        self.background = background
        self.hb = _h_array(background, h)
        self.tol = float(tol)
        self.dt_min = float(dt_min)
        self.dt_max = float(dt_max)
        jit = _kernels.USE_NUMBA if use_numba is None else (use_numba and _kernels.HAVE_NUMBA)
        self._doubling = _kernels.rk4_doubling_jit if jit else _kernels.rk4_doubling_py
        self._rk4 = _kernels.rk4_step_jit if jit else _kernels.rk4_step_py
        self._rhs = _kernels.augmented_rhs_jit if jit else _kernels.augmented_rhs_py
        self._args = (np.ascontiguousarray(background.total), g.A, g.B, int(g.n),
                      np.ascontiguousarray(-background.logv_abs - self.hb),
                      np.ascontiguousarray(background.mass), float(g.volume))

    def initial(self, phi0=None) -> np.ndarray:
        b = self.background
        y = np.zeros(b.grid.N + 1)
        if phi0 is not None:
            phi0 = field_values(phi0, b.grid)
            a = b.mean(phi0)
            y[:-1] = phi0 - a
            y[-1] = a
        return y

    def rhs(self, y) -> np.ndarray:
        out, bad = self._rhs(np.asarray(y, dtype=float), *self._args)
        if bad >= 0:
            raise DegenerateMetricError(bad, float("nan"), "flow state")
        return out

    def rk4(self, y, dt: float) -> np.ndarray:
        """One classical RK4 step without error control."""
        out, bad = self._rk4(np.asarray(y, dtype=float), float(dt), *self._args)
        if bad >= 0:
            raise DegenerateMetricError(bad, float("nan"), "flow state")
        return out

    def step(self, y, dt: float) -> StepResult:
        """Advance by dt, or by dt / 2^m after m rejections."""
        y = np.asarray(y, dtype=float)
        dt = float(dt)
        rejections = 0
        while True:
            if dt < self.dt_min:
                raise StiffnessError(f"step size {dt:.3e} fell below dt_min = {self.dt_min:.3e}")
            y_new, err, bad = self._doubling(y, dt, *self._args)
            if bad < 0 and err <= self.tol:
                break
            dt *= 0.5
            rejections += 1
        grow = 2.0 if err == 0.0 else min(2.0, max(1.0, 0.9 * (self.tol / err) ** 0.2))
        return StepResult(y=y_new, dt_used=dt, dt_next=min(self.dt_max, dt * grow),
                          error=float(err), rejections=rejections)


def step(state: MetricState, dt: float, h=None, tol: float = 1e-11,
         dt_min: float = 1e-9) -> tuple[MetricState, StepResult]:
    """One controlled step of the flow from ``state`` (measured over its background).

    Returns the new state (gauge constant folded back into phi) and the step
    record.
    """
    b = state.background
    if b is None:
        b = MetricState(state.grid)
        phi = state.phi
    else:
        phi = state.phi
    integ = FlowIntegrator(b, h, tol=tol, dt_min=dt_min, dt_max=np.inf)
    res = integ.step(integ.initial(phi), dt)
    return b.relative(res.y[:-1] + res.y[-1]), res


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------

def _sample(b: MetricState, rp: RicciPotential, psi: np.ndarray, a: float,
            path_points: int, want_lambda: bool) -> dict:
    n = b.n
    V = b.volume
    s = b.relative(psi)
    G = s.logv_abs - b.logv_abs + psi - rp.h.values
    gbar = s.mean(G)
    eps = s.integrate(grad_norm_sq(s, G)) / V
    mu0 = s.integrate((G - gbar) ** 2) / V
    e0, ek = all_energies(b, psi, rp, path_points)
    dev_r = np.abs(s.rho_r - 1.0)
    dev = dev_r.max() if n == 1 else max(dev_r.max(), np.abs(s.rho_t - 1.0).max())
    ric_sq = (s.rho_r - 1.0) ** 2 + (n - 1) * (s.rho_t - 1.0) ** 2
    lam = np.nan
    if want_lambda:
        lam = float(dirichlet_eigs(s, 1, tol=np.inf)[0][0])
    return dict(E0=e0, Ek=ek, Rmin=float(s.R.min()), Rmax=float(s.R.max()),
                r_dev=float(np.abs(s.R - n).max()), sup_ric_dev=float(dev),
                c=float(gbar + a), eps=float(eps), mu0=float(mu0), mu1=float(eps),
                lambda1=lam, diameter=diameter(s),
                pali_residual=float(ek[1] - 2.0 * e0 - eps / n + rp.c_omega),
                r_sq=float(s.integrate((s.R - n) ** 2) / V),
                ric_l2=float(s.integrate(ric_sq) / V))


_SERIES = ("E0", "Rmin", "Rmax", "r_dev", "sup_ric_dev", "c", "eps", "mu0", "mu1",
           "lambda1", "diameter", "pali_residual", "r_sq", "ric_l2")


# --------------------------------------------------------------------------
# checkpoints: JSON with hex floats, so state round-trips bit for bit
# --------------------------------------------------------------------------

def write_checkpoint(path: str, t: float, sample: int, dt: float, y: np.ndarray) -> None:
    record = {"version": CHECKPOINT_VERSION, "t": float(t).hex(), "sample": int(sample),
              "dt": float(dt).hex(), "y": [float(v).hex() for v in y]}
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(record, fh, indent=0)
    os.replace(tmp, path)


def read_checkpoint(path: str) -> tuple[float, int, float, np.ndarray]:
    with open(path) as fh:
        record = json.load(fh)
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {record.get('version')!r}")
    y = np.array([float.fromhex(v) for v in record["y"]])
    return float.fromhex(record["t"]), int(record["sample"]), float.fromhex(record["dt"]), y


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

def graded_times(t_end: float, h_max: float = 1e-3, rel: float = 0.01,
                 t_star: float = 2e-3) -> np.ndarray:
    """Sample times from 0 to t_end with spacing min(h_max, rel (t + t_star)).

    Resolves the initial layer of strongly curved starts, where the
    diagnostics vary on a time scale comparable to t itself.
    """
    times = [0.0]
    while times[-1] < t_end:
        t = times[-1]
        times.append(min(t_end, t + min(h_max, rel * (t + t_star))))
    return np.array(times)


def centered_derivative(times, values) -> np.ndarray:
    """Three-point centered derivative at interior samples, second order for any spacing."""
    t = np.asarray(times, dtype=float)
    f = np.asarray(values, dtype=float)
    hm = (t[1:-1] - t[:-2])
    hp = (t[2:] - t[1:-1])
    if f.ndim > 1:
        hm = hm.reshape((-1,) + (1,) * (f.ndim - 1))
        hp = hp.reshape((-1,) + (1,) * (f.ndim - 1))
    return (hm ** 2 * f[2:] - hp ** 2 * f[:-2] + (hp ** 2 - hm ** 2) * f[1:-1]) / (hm * hp * (hm + hp))


def run_flow(background: MetricState, settings: FlowSettings = FlowSettings(), h=None,
             checkpoint_dir: str | None = None, resume: str | None = None,
             use_numba: bool | None = None, normalize: bool = True,
             sample_times=None) -> FlowTrace:
    """Integrate from phi = 0 to t_max, or until sup|R - n| < stop_tol at a sample.

    Samples are taken every ``sample_dt`` unless ``sample_times`` (strictly
    increasing, starting at 0) is given, in which case the run ends at its
    last entry.
    """
    b = background
    rp = h if isinstance(h, RicciPotential) else ricci_potential(b)
    integ = FlowIntegrator(b, rp, tol=settings.tol, dt_min=settings.dt_min,
                           dt_max=settings.dt_max, use_numba=use_numba)
    y = integ.initial()
    dt = settings.dt_init
    j = 0
    if resume is not None:
        t_ck, j, dt, y = read_checkpoint(resume)
        if y.shape != (b.grid.N + 1,):
            raise ValueError("checkpoint does not match the grid size")
    sdt = settings.sample_dt
    t_max = settings.t_max
    if sample_times is not None:
        schedule = np.asarray(sample_times, dtype=float)
        if schedule.ndim != 1 or schedule[0] != 0.0 or np.any(np.diff(schedule) <= 0.0):
            raise ValueError("sample_times must be strictly increasing and start at 0")
        t_max = float(schedule[-1])

        def sample_time(i: int) -> float:
            return float(schedule[i])
    else:
        def sample_time(i: int) -> float:
            return min(t_max, i * sdt)
    t = sample_time(j)
    rows: list[dict] = []
    psis: list[np.ndarray] = []
    gauges: list[float] = []
    accepted = rejected = 0
    checkpoints: list[str] = []

    def record(idx: int, force_lambda: bool = False):
        want = force_lambda or idx % settings.monitor_stride == 0
        rows.append(_sample(b, rp, y[:-1].copy(), float(y[-1]), settings.path_points, want))
        psis.append(y[:-1].copy())
        gauges.append(float(y[-1]))

    record(j)
    converged = rows[-1]["r_dev"] < settings.stop_tol
    stop_reason = "converged" if converged else "t_max"
    while not converged and t < t_max * (1.0 - 1e-12):
        t_next = sample_time(j + 1)
        while t < t_next:
            h_try = min(dt, t_next - t)
            res = integ.step(y, h_try)
            accepted += 1
            rejected += res.rejections
            y = res.y
            landing = res.dt_used == h_try and h_try < dt
            t = t_next if t_next - (t + res.dt_used) <= 1e-14 * max(1.0, t_next) else t + res.dt_used
            if not landing:
                dt = res.dt_next
        j += 1
        t = t_next
        record(j)
        if rows[-1]["r_dev"] < settings.stop_tol:
            converged = True
            stop_reason = "converged"
        if checkpoint_dir and settings.checkpoint_stride and j % settings.checkpoint_stride == 0:
            path = os.path.join(checkpoint_dir, f"checkpoint_{j:06d}.json")
            write_checkpoint(path, t, j, dt, y)
            checkpoints.append(path)
    if np.isnan(rows[-1]["lambda1"]):
        s = b.relative(psis[-1])
        rows[-1]["lambda1"] = float(dirichlet_eigs(s, 1, tol=np.inf)[0][0])

    first = j - len(rows) + 1
    times = np.array([sample_time(first + i) for i in range(len(rows))])
    series = {k: np.array([r[k] for r in rows]) for k in _SERIES}
    trace = FlowTrace(background=b, ricci=rp, settings=settings, times=times,
                      Ek=np.array([r["Ek"] for r in rows]), psi=np.array(psis),
                      gauge=np.array(gauges), converged=converged, stop_reason=stop_reason,
                      steps_accepted=accepted, steps_rejected=rejected,
                      checkpoints=checkpoints, **series)
    if normalize:
        try:
            trace = normalize_trace(trace)
        except InsufficientTailError as exc:
            trace.normalization_error = str(exc)
    return trace


# --------------------------------------------------------------------------
# post-processing
# --------------------------------------------------------------------------

def _interval_weights(h: float, e0: float, e1: float) -> float:
    """int_0^h e^(-u) eps(u) du for eps log-linear between e0 and e1."""
    if e0 > 0.0 and e1 > 0.0:
        k = math.log(e1 / e0) / h - 1.0
        if abs(k * h) < 1e-8:
            return e0 * h * (1.0 + 0.5 * k * h)
        return e0 * math.expm1(k * h) / k
    return 0.5 * h * (e0 + e1 * math.exp(-h))


def normalize_trace(trace: FlowTrace, tail_bound: float = 1e-10) -> FlowTrace:
    """Fix the gauge constant so that c(0) = int_0^infinity e^(-t) eps(t) dt."""
    t = trace.times
    eps = trace.eps
    T = float(t[-1])
    m = t.size
    # the tail beyond T is modelled from the last samples, so only their size matters
    window = eps[max(0, m - 3):]
    if math.exp(-(T - t[0])) * float(window.max()) > tail_bound:
        raise InsufficientTailError(
            f"tail bound e^-T max eps = {math.exp(-(T - t[0])) * window.max():.3e} exceeds {tail_bound:.1e}")
    # stationary runs carry rounding-level eps only
    boundary = bool(eps.max() <= 1e-24)
    # decay rate of eps over the last samples, for the tail beyond T
    rate = 0.0
    if m >= 2 and eps[-1] > 0.0 and eps[-2] > 0.0:
        rate = max(0.0, -math.log(eps[-1] / eps[-2]) / (t[-1] - t[-2]))
    tail = float(eps[-1]) / (1.0 + rate)
    # Along the flow c' = c - eps, so each interval integral also equals
    # c(t_i) - e^(-h) c(t_(i+1)).  That difference is exact up to cancellation
    # in c ~ e^t, so it is used while the cancellation is harmless and the
    # sampled quadrature takes over once c is dominated by the gauge mode.
    c = trace.c
    unit = np.finfo(float).eps
    c_norm = np.empty(m)
    c_norm[-1] = tail
    for i in range(m - 2, -1, -1):
        h = t[i + 1] - t[i]
        quad = _interval_weights(h, eps[i], eps[i + 1])
        exact = c[i] - math.exp(-h) * c[i + 1]
        noise = 8.0 * unit * (abs(c[i]) + abs(c[i + 1]))
        piece = exact if noise <= 1e-6 * abs(quad) else quad
        c_norm[i] = piece + math.exp(-h) * c_norm[i + 1]
    C0 = float(c_norm[0] - trace.c[0])
    shifted = trace.c + C0 * np.exp(t - t[0])
    residual = float(np.max(np.abs(shifted - c_norm) * np.exp(-(t - t[0]))))
    integral = float(np.sum(0.5 * np.diff(t) * (c_norm[1:] + c_norm[:-1])))
    norm = Normalization(C0=C0, c_norm=c_norm, residual=residual, integral=integral,
                         energy_drop=float(trace.E0[0] - trace.E0[-1]), final=float(c_norm[-1]),
                         tail=tail, boundary=boundary)
    return replace(trace, normalization=norm, normalization_error="")


@dataclass(frozen=True)
class EvolutionReport:
    times: np.ndarray
    residuals: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if self.residuals.size else 0.0


def evolution_residuals(trace: FlowTrace) -> EvolutionReport:
    """max over nodes of |dR/dt - (Delta R + |Ric|^2 - R)| at interior samples.

    dR/dt is the three-point centered difference of the recorded states.
    """
    t = trace.times
    if t.size < 3:
        return EvolutionReport(times=t[1:-1], residuals=np.zeros(0))
    n = trace.n
    states = [trace.state(j) for j in range(t.size)]
    dRdt = centered_derivative(t, np.array([s.R for s in states]))
    out = np.empty(t.size - 2)
    for j in range(1, t.size - 1):
        s = states[j]
        ric_sq = s.rho_r ** 2 + (n - 1) * s.rho_t ** 2
        rhs = s.laplacian_strong_matrix @ s.R + ric_sq - s.R
        out[j - 1] = np.max(np.abs(dRdt[j - 1] - rhs))
    return EvolutionReport(times=t[1:-1], residuals=out)


@dataclass(frozen=True)
class DecayFit:
    alpha0: float
    alpha1: float
    gamma_used: float
    sup_ric_dev: float
    t_start: float
    t_end: float
    points: int

    @property
    def alpha1_bound(self) -> float:
        return self.gamma_used - self.sup_ric_dev - 0.05

    @property
    def alpha0_bound(self) -> float:
        return 2.0 * (1.0 - 0.1) * (1.0 + self.gamma_used) - 2.0 - 0.2

    @property
    def ok(self) -> bool:
        return self.alpha1 >= self.alpha1_bound and self.alpha0 >= self.alpha0_bound


def decay_fit(trace: FlowTrace, window: tuple[float, float] | None = None,
              ric_threshold: float = 0.1, floor: float = 1e-24) -> DecayFit:
    """Least-squares exponential rates of mu0 and mu1 on a window.

    The default window starts at the first sample with sup|Ric - omega| <=
    ``ric_threshold`` and ends at the last sample where both mu0 and mu1 are
    above ``floor``.  gamma is the restricted gap at the window start.
    """
    t = trace.times
    if window is None:
        inside = np.flatnonzero(trace.sup_ric_dev <= ric_threshold)
        if inside.size == 0:
            raise DecayFitError("the run never enters the regime sup|Ric - omega| <= %g" % ric_threshold)
        lo = int(inside[0])
        alive = np.flatnonzero((trace.mu0 > floor) & (trace.mu1 > floor))
        alive = alive[alive >= lo]
        if alive.size == 0:
            raise DecayFitError("mu0/mu1 vanish on the window (stationary run)")
        hi = int(alive[-1])
    else:
        lo = int(np.searchsorted(t, window[0]))
        hi = int(np.searchsorted(t, window[1], side="right")) - 1
    sel = np.arange(lo, hi + 1)
    if sel.size < 3:
        raise DecayFitError(f"window has {sel.size} samples, need at least 3")
    if np.any(trace.sup_ric_dev[sel] > ric_threshold):
        raise DecayFitError("window leaves the regime sup|Ric - omega| <= %g" % ric_threshold)
    if np.any(trace.mu0[sel] <= 0.0) or np.any(trace.mu1[sel] <= 0.0):
        raise DecayFitError("mu0/mu1 vanish on the window (stationary run)")
    ts = t[sel]
    slope0 = np.polyfit(ts, np.log(trace.mu0[sel]), 1)[0]
    slope1 = np.polyfit(ts, np.log(trace.mu1[sel]), 1)[0]
    gamma = restricted_gap(trace.state(lo))
    return DecayFit(alpha0=float(-slope0), alpha1=float(-slope1), gamma_used=float(gamma),
                    sup_ric_dev=float(trace.sup_ric_dev[sel].max()), t_start=float(ts[0]),
                    t_end=float(ts[-1]), points=int(sel.size))


def energy_rate_margins(trace: FlowTrace, k: int) -> np.ndarray:
    """bound - dE_k/dt at each sample where Ric > -omega, NaN elsewhere.

    The bound is -((k+1)/V) int (R - n) Ric^k ^ omega_phi^(n-k); the
    monotonicity statement says the margin is non-negative.
    """
    n = trace.n
    b = trace.background
    out = np.full(trace.times.size, np.nan)
    for j in range(trace.times.size):
        s = trace.state(j)
        if min(s.rho_r.min(), s.rho_t.min() if n > 1 else np.inf) <= -1.0:
            continue
        rate = energy_rate(b, trace.psi[j], trace.velocity(j), k)
        ric = s.ricci_form
        forms = [ric] * k + [s.identity_form] * (n - k)
        bound = -(k + 1) * s.integrate((s.R - n) * mixed_density(forms, n)) / b.volume
        out[j] = bound - rate
    return out


def first_crossing(times: np.ndarray, values: np.ndarray, level: float) -> float:
    """First time ``values`` exceeds ``level``, linearly interpolated; NaN if never."""
    above = np.flatnonzero(values > level)
    if above.size == 0:
        return float("nan")
    j = int(above[0])
    if j == 0:
        return float(times[0])
    v0, v1 = values[j - 1], values[j]
    return float(times[j - 1] + (level - v0) / (v1 - v0) * (times[j] - times[j - 1]))
