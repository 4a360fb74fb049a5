"""Monge-Ampere continuity path  (omega_0 + i ddbar phi)^n = e^(t h_0 + c_t) omega_0^n.

Each equation is solved by damped Newton iteration on
F(phi) = log(omega_phi^n / omega_0^n) - target, whose derivative is the
collocation Laplacian of omega_phi.  The gauge int phi omega_0^n = 0 is a
bordered row of the Newton system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .functionals import RicciPotential, energy_E0, energy_IJ, ricci_potential
from .geometry import DegenerateMetricError, MetricState, PotentialField, field_values


class NewtonDivergence(ArithmeticError):
    pass


class ContinuationFailure(ArithmeticError):
    def __init__(self, message: str, last_t: float):
        super().__init__(message)
        self.last_t = float(last_t)


@dataclass(frozen=True)
class MASolveResult:
    """Newton solution with its history of max-norm residuals (first entry: initial guess)."""

    phi: np.ndarray
    iterations: int
    residuals: tuple
    grid: object = None

    @property
    def potential(self) -> PotentialField:
        return PotentialField(self.grid, self.phi)

    @property
    def residual(self) -> float:
        return float(self.residuals[-1])


@dataclass
class MAPathResult:
    background: MetricState
    t_values: np.ndarray
    potentials: np.ndarray
    c_t: np.ndarray
    newton_iterations: np.ndarray
    residuals: np.ndarray
    E0_along_path: np.ndarray
    endpoint_state: MetricState
    gauge: np.ndarray
    ricci_identity: np.ndarray
    tangent_residual: np.ndarray
    energy_identity: np.ndarray
    halvings: int = 0
    newton_histories: list = field(default_factory=list)

    @property
    def endpoint_min_ricci(self) -> float:
        s = self.endpoint_state
        if s.n == 1:
            return float(s.rho_r.min())
        return float(min(s.rho_r.min(), s.rho_t.min()))

    @property
    def e0_increments(self) -> np.ndarray:
        return np.diff(self.E0_along_path)


def _h_values(background: MetricState, h) -> np.ndarray:
    if h is None:
        return ricci_potential(background).h.values
    if isinstance(h, RicciPotential):
        return h.h.values
    return field_values(h, background.grid)


def normalizing_constant(background: MetricState, t: float, h=None) -> float:
    """c_t = -log((1/V) int e^(t h_0) omega_0^n)."""
    if t == 0.0:
        return 0.0
    h0 = _h_values(background, h)
    return float(-np.log(background.mean(np.exp(t * h0))))


def _c_prime(background: MetricState, t: float, h0: np.ndarray) -> float:
    w = np.exp(t * h0)
    return float(-background.integrate(h0 * w) / background.integrate(w))


def ma_solve(background: MetricState, target_log_density, initial_guess=None,
             tol: float = 1e-10, max_iter: int = 40, max_halvings: int = 30) -> MASolveResult:
    """Find phi with log(omega_phi^n / omega_0^n) = target and int phi omega_0^n = 0."""
    b = background
    g = b.grid
    N = g.N
    target = field_values(target_log_density, g)
    phi = np.zeros(N) if initial_guess is None else field_values(initial_guess, g).copy()
    phi -= b.mean(phi)
    gauge_row = b.mass / b.volume

    def residual(p):
        s = b.relative(p)
        return s, s.logv_abs - b.logv_abs - target

    s, F = residual(phi)
    history = [float(np.max(np.abs(F)))]
    system = np.zeros((N + 1, N + 1))
    system[:N, N] = 1.0
    system[N, :N] = gauge_row
    it = 0
    while history[-1] > tol:
        if it >= max_iter:
            raise NewtonDivergence(f"no convergence after {max_iter} iterations, residual {history[-1]:.3e}")
        system[:N, :N] = s.laplacian_strong_matrix
        rhs = np.zeros(N + 1)
        rhs[:N] = -F
        delta = np.linalg.solve(system, rhs)[:N]
        step = 1.0
        for _ in range(max_halvings):
            trial = phi + step * delta
            try:
                s_new, F_new = residual(trial)
            except DegenerateMetricError:
                step *= 0.5
                continue
            r_new = float(np.max(np.abs(F_new)))
            if r_new < history[-1] or r_new <= tol:
                break
            step *= 0.5
        else:
            raise NewtonDivergence(f"line search exhausted at residual {history[-1]:.3e}")
        phi, s, F = trial, s_new, F_new
        history.append(r_new)
        it += 1
    return MASolveResult(phi=phi, iterations=it, residuals=tuple(history), grid=g)


def continuity_path(background: MetricState, steps: int = 21, h=None, tol: float = 1e-10,
                    max_halvings: int = 6, path_points: int = 24) -> MAPathResult:
    """Solve the continuity path on a uniform t-grid from 0 to 1 with warm starts.

    A failed Newton solve halves the step locally (at most ``max_halvings``
    times in a row).  After the solves the result carries the checks along
    the path: the traced Ricci identity, the tangent equation
    Delta phi' = h_0 + c_t', and the K-energy derivative identity.
    """
    b = background
    if steps < 2:
        raise ValueError("continuity path needs at least 2 points")
    rp = h if isinstance(h, RicciPotential) else ricci_potential(b)
    h0 = rp.h.values
    planned = list(np.linspace(0.0, 1.0, int(steps)))
    ts = [0.0]
    phis = [np.zeros(b.grid.N)]
    iters = [0]
    res = [0.0]
    hist: list = [(0.0,)]
    halvings = 0
    t_goal_queue = planned[1:]
    while t_goal_queue:
        t_new = t_goal_queue[0]
        depth = 0
        while True:
            c = normalizing_constant(b, t_new, h0)
            guess = phis[-1]
            if len(phis) >= 2:
                # secant predictor along the path
                guess = phis[-1] + (t_new - ts[-1]) / (ts[-1] - ts[-2]) * (phis[-1] - phis[-2])
                try:
                    b.relative(guess)
                except DegenerateMetricError:
                    guess = phis[-1]
            try:
                sol = ma_solve(b, t_new * h0 + c, guess, tol=tol)
                break
            except (NewtonDivergence, DegenerateMetricError):
                depth += 1
                halvings += 1
                if depth > max_halvings:
                    raise ContinuationFailure(f"continuation failed near t = {t_new:.6g}", ts[-1])
                t_new = 0.5 * (ts[-1] + t_new)
        ts.append(t_new)
        phis.append(sol.phi)
        iters.append(sol.iterations)
        res.append(sol.residual)
        hist.append(sol.residuals)
        if t_new >= t_goal_queue[0]:
            t_goal_queue.pop(0)

    t_arr = np.array(ts)
    P = np.array(phis)
    states = [b.relative(p) for p in P]
    n = b.n
    c_arr = np.array([normalizing_constant(b, t, h0) for t in t_arr])
    e0 = np.array([energy_E0(b, p, path_points) for p in P])
    gauge = np.array([b.mean(p) for p in P])

    # traced Ricci identity  R = n + (1 - t) Delta h_0 - Delta phi
    ric_id = np.array([np.max(np.abs(s.R - n - (1.0 - t) * (s.laplacian_strong_matrix @ h0)
                                     + s.laplacian_strong_matrix @ p))
                       for s, t, p in zip(states, t_arr, P)])

    # tangent equation with phi' from centered differences
    tangent = np.full(t_arr.size, np.nan)
    energy_id = np.full(t_arr.size, np.nan)
    N = b.grid.N
    for j in range(1, t_arr.size - 1):
        hm, hp = t_arr[j] - t_arr[j - 1], t_arr[j + 1] - t_arr[j]
        pdot_fd = (hm ** 2 * P[j + 1] - hp ** 2 * P[j - 1] + (hp ** 2 - hm ** 2) * P[j]) / (hm * hp * (hm + hp))
        s = states[j]
        rhs = h0 + _c_prime(b, t_arr[j], h0)
        tangent[j] = float(np.max(np.abs(s.laplacian_strong_matrix @ pdot_fd - rhs)))
    for j in range(t_arr.size):
        s = states[j]
        t = t_arr[j]
        # exact tangent: Delta phi' = h_0 + c_t', int phi' omega_0^n = 0
        system = np.zeros((N + 1, N + 1))
        system[:N, :N] = s.laplacian_strong_matrix
        system[:N, N] = 1.0
        system[N, :N] = b.mass / b.volume
        load = np.zeros(N + 1)
        load[:N] = h0 + _c_prime(b, t, h0)
        pdot = np.linalg.solve(system, load)[:N]
        lap_pdot = s.laplacian_strong_matrix @ pdot
        de0 = -s.integrate(pdot * (s.R - n)) / b.volume
        d_ij = -s.integrate(P[j] * lap_pdot) / b.volume
        rhs = -(1.0 - t) * s.integrate(lap_pdot ** 2) / b.volume - d_ij
        energy_id[j] = abs(de0 - rhs) / max(abs(de0), abs(rhs), 1e-300) if (de0 or rhs) else 0.0

    return MAPathResult(background=b, t_values=t_arr, potentials=P, c_t=c_arr,
                        newton_iterations=np.array(iters), residuals=np.array(res),
                        E0_along_path=e0, endpoint_state=states[-1], gauge=gauge,
                        ricci_identity=ric_id, tangent_residual=tangent,
                        energy_identity=energy_id, halvings=halvings, newton_histories=hist)


def ij_rate(background: MetricState, phi, phidot) -> float:
    """d/dt (I - J) = -(1/V) int phi Delta_phi phi' omega_phi^n."""
    b = background
    s = b.relative(field_values(phi, b.grid))
    return float(-s.integrate(field_values(phi, b.grid) * (s.laplacian_strong_matrix @ field_values(phidot, b.grid))) / b.volume)


def ij_difference(background: MetricState, phi) -> float:
    I, J = energy_IJ(background, phi)
    return I - J
