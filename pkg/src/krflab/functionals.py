"""Energy functionals on the space of Kahler potentials.

All functionals are taken relative to a background state ``b`` (the form
omega in the formulas) and evaluated at a potential ``phi`` measured from
it.  Wedge products of co-diagonal forms are turned into densities against
omega_phi^n with :func:`~krflab.geometry.mixed_density`; path integrals use
Gauss-Legendre quadrature in the path parameter.

Every functional here is unchanged by adding a constant to ``phi``, which
the flow module relies on when it drops the gauge constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial import legendre as leg

from .geometry import (FormEigenPair, MetricState, PotentialField, field_values,
                       grad_norm_sq, mixed_density)

DEFAULT_PATH_POINTS = 24


class PoissonSolveError(ArithmeticError):
    pass


@dataclass(frozen=True)
class RicciPotential:
    """h with Ric(omega) - omega = i ddbar h and mean(e^h) = 1."""

    h: PotentialField
    additive_constant: float
    c_omega: float
    poisson_residual: float
    normalization_residual: float


@dataclass(frozen=True)
class EnergyReport:
    k: int
    Ek0: float
    Jk: float
    Ek: float
    I: float
    J: float
    E0: float
    pali_residual: float
    path_points: int

    def chain_ok(self, n: int, slack: float = 1e-10) -> bool:
        """0 <= I - J <= I <= (n+1)(I - J), up to ``slack``."""
        d = self.I - self.J
        return (d >= -slack) and (d <= self.I + slack) and (self.I <= (n + 1) * d + slack)


# --------------------------------------------------------------------------
# Ricci potential
# --------------------------------------------------------------------------

def ricci_potential(background: MetricState, tol: float = 1e-8) -> RicciPotential:
    """Solve Delta h = R - n, then fix the additive constant.

    The Poisson problem uses the collocation Laplacian, the operator the
    curvature itself is built from, so the discrete solution is consistent
    with R to rounding.  A bordered row imposes int h = 0; the constant is
    then the exact root  -log((1/V) int e^h)  of the monotone map
    c -> int (e^(h+c) - 1).
    """
    b = background
    g = b.grid
    rhs = b.R - g.n
    lap = b.laplacian_strong_matrix
    N = g.N
    system = np.zeros((N + 1, N + 1))
    system[:N, :N] = lap
    system[:N, N] = 1.0
    system[N, :N] = b.mass / b.volume
    load = np.zeros(N + 1)
    load[:N] = rhs
    h = np.linalg.solve(system, load)[:N]
    residual = float(np.max(np.abs(lap @ h - rhs)))
    if not residual <= tol:
        raise PoissonSolveError(f"Ricci potential residual {residual:.3e} exceeds {tol:.1e}")
    const = -float(np.log(b.mean(np.exp(h))))
    h = h + const
    norm_res = abs(b.mean(np.exp(h)) - 1.0)
    c_omega = b.integrate(grad_norm_sq(b, h)) / (g.n * g.volume)
    return RicciPotential(h=PotentialField(g, h), additive_constant=const,
                          c_omega=float(c_omega), poisson_residual=residual,
                          normalization_residual=float(norm_res))


def _h_values(background: MetricState, h) -> np.ndarray:
    if h is None:
        return ricci_potential(background).h.values
    if isinstance(h, RicciPotential):
        return h.h.values
    return field_values(h, background.grid)


def _check_k(k: int, n: int) -> int:
    k = int(k)
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}], got {k}")
    return k


def _wedge(state: MetricState, slots: Sequence[tuple[FormEigenPair, int]]) -> np.ndarray:
    forms = []
    for form, count in slots:
        forms.extend([form] * count)
    return mixed_density(forms, state.n)


# --------------------------------------------------------------------------
# E_k^0
# --------------------------------------------------------------------------

def energy_Ek0(background: MetricState, phi, k: int, h=None) -> float:
    """The direct two-term integral defining E_k^0."""
    b = background
    n = b.n
    k = _check_k(k, n)
    hb = _h_values(b, h)
    s = b.relative(field_values(phi, b.grid))
    ric = s.ricci_form
    omb = s.forms_of(b)
    one = s.identity_form
    bracket = sum(_wedge(s, [(ric, i), (omb, k - i), (one, n - k)]) for i in range(k + 1))
    first = s.integrate((s.logv_abs - b.logv_abs - hb) * bracket)
    ric_b = b.ricci_form
    one_b = b.identity_form
    bracket_b = sum(_wedge(b, [(ric_b, i), (one_b, n - i)]) for i in range(k + 1))
    second = b.integrate(hb * bracket_b)
    return float((first + second) / b.volume)


# --------------------------------------------------------------------------
# path integrals: J_k and the K-energy
# --------------------------------------------------------------------------

def _path_segments(background: MetricState, phi, waypoints):
    g = background.grid
    end = field_values(phi, g)
    if waypoints is None:
        points = [np.zeros(g.N), end]
    else:
        points = [field_values(w, g) for w in waypoints]
        if not points or np.any(points[0] != 0.0):
            points = [np.zeros(g.N)] + points
        if np.any(points[-1] != end):
            points.append(end)
    return list(zip(points[:-1], points[1:]))


def _path_rule(path_points: int):
    m = int(path_points)
    if m < 1:
        raise ValueError(f"path_points must be positive, got {m}")
    tau, w = leg.leggauss(m)
    return 0.5 * (tau + 1.0), 0.5 * w


def path_integrals(background: MetricState, phi, ks: Sequence[int] = (),
                   path_points: int = DEFAULT_PATH_POINTS, waypoints=None):
    """K-energy and J_k for each k in ``ks`` along a piecewise linear path.

    Returns ``(E0, {k: J_k})``.  ``waypoints`` are intermediate potentials; the
    default is the straight segment from 0 to phi.
    """
    b = background
    n = b.n
    ks = [_check_k(k, n) for k in ks]
    tau, w = _path_rule(path_points)
    e0 = 0.0
    jk = {k: 0.0 for k in ks}
    for start, stop in _path_segments(b, phi, waypoints):
        velocity = stop - start
        for tj, wj in zip(tau, w):
            s = b.relative(start + tj * velocity)
            dmu = s.mass * velocity
            e0 -= wj * float(np.dot(dmu, s.R - n))
            if any(k < n for k in ks):
                omb = s.forms_of(b)
                one = s.identity_form
                for k in ks:
                    if k == n:
                        continue
                    dens = 1.0 - _wedge(s, [(omb, k + 1), (one, n - k - 1)])
                    jk[k] -= wj * (n - k) * float(np.dot(dmu, dens))
    V = b.volume
    return float(e0 / V), {k: float(v / V) for k, v in jk.items()}


def energy_Jk(background: MetricState, phi, k: int,
              path_points: int = DEFAULT_PATH_POINTS, waypoints=None) -> float:
    k = _check_k(k, background.n)
    return path_integrals(background, phi, (k,), path_points, waypoints)[1][k]


def energy_E0(background: MetricState, phi,
              path_points: int = DEFAULT_PATH_POINTS, waypoints=None) -> float:
    """K-energy by quadrature of its derivative along a path from 0 to phi."""
    return path_integrals(background, phi, (), path_points, waypoints)[0]


# --------------------------------------------------------------------------
# generalized energies and the Pali identity
# --------------------------------------------------------------------------

def _gradient_form(state: MetricState, f) -> FormEigenPair:
    """i df ^ dbar f relative to omega_state (rank one, radial only)."""
    return FormEigenPair(radial=grad_norm_sq(state, f), tangential=np.zeros(state.grid.N))


def energy_IJ(background: MetricState, phi) -> tuple[float, float]:
    """The generalized energies I and J as sums of wedge integrals."""
    b = background
    n = b.n
    values = field_values(phi, b.grid)
    s = b.relative(values)
    grad = _gradient_form(s, values)
    omb = s.forms_of(b)
    one = s.identity_form
    I = 0.0
    J = 0.0
    for i in range(n):
        term = s.integrate(_wedge(s, [(grad, 1), (omb, i), (one, n - 1 - i)]))
        I += term
        J += (i + 1) / (n + 1) * term
    return float(I / b.volume), float(J / b.volume)


def pali_terms(background: MetricState, phi, h=None) -> tuple[float, float]:
    """(1/nV) int |grad u|^2 omega_phi^n and C_omega."""
    b = background
    g = b.grid
    rp = h if isinstance(h, RicciPotential) else None
    hb = _h_values(b, h)
    values = field_values(phi, g)
    s = b.relative(values)
    u = s.logv_abs - b.logv_abs + values - hb
    grad_u = s.integrate(grad_norm_sq(s, u)) / (g.n * g.volume)
    if rp is not None:
        c_omega = rp.c_omega
    else:
        c_omega = b.integrate(grad_norm_sq(b, hb)) / (g.n * g.volume)
    return float(grad_u), float(c_omega)


def pali_residual(background: MetricState, phi, h=None,
                  path_points: int = DEFAULT_PATH_POINTS) -> float:
    """E_1 - 2 E_0 - (1/nV) int |grad u|^2 omega_phi^n + C_omega."""
    b = background
    if h is None:
        h = ricci_potential(b)
    e0, jk = path_integrals(b, phi, (1,), path_points)
    e1 = energy_Ek0(b, phi, 1, h) - jk[1]
    grad_u, c_omega = pali_terms(b, phi, h)
    return float(e1 - 2.0 * e0 - grad_u + c_omega)


def energy_Ek(background: MetricState, phi, k: int, h=None,
              path_points: int = DEFAULT_PATH_POINTS) -> EnergyReport:
    b = background
    k = _check_k(k, b.n)
    if h is None:
        h = ricci_potential(b)
    e0, jk = path_integrals(b, phi, sorted({k, 1}), path_points)
    ek0 = energy_Ek0(b, phi, k, h)
    e1 = energy_Ek0(b, phi, 1, h) - jk[1]
    grad_u, c_omega = pali_terms(b, phi, h)
    I, J = energy_IJ(b, phi)
    return EnergyReport(k=k, Ek0=ek0, Jk=jk[k], Ek=float(ek0 - jk[k]), I=I, J=J, E0=e0,
                        pali_residual=float(e1 - 2.0 * e0 - grad_u + c_omega),
                        path_points=int(path_points))


def all_energies(background: MetricState, phi, h=None,
                 path_points: int = DEFAULT_PATH_POINTS) -> tuple[float, np.ndarray]:
    """K-energy from path quadrature and E_k for k = 0..n, sharing one path."""
    b = background
    n = b.n
    if h is None:
        h = ricci_potential(b)
    e0, jk = path_integrals(b, phi, range(n + 1), path_points)
    ek = np.array([energy_Ek0(b, phi, k, h) - jk[k] for k in range(n + 1)])
    return e0, ek


def energy_rate(background: MetricState, phi, phidot, k: int) -> float:
    """dE_k/dt along any path through phi with velocity ``phidot``."""
    b = background
    n = b.n
    k = _check_k(k, n)
    s = b.relative(field_values(phi, b.grid))
    pd = field_values(phidot, b.grid)
    ric = s.ricci_form
    one = s.identity_form
    lap = s.laplacian_strong_matrix @ pd
    first = (k + 1) * s.integrate(lap * _wedge(s, [(ric, k), (one, n - k)]))
    second = 0.0
    if k < n:
        second = (n - k) * s.integrate(pd * (_wedge(s, [(ric, k + 1), (one, n - k - 1)]) - 1.0))
    return float((first - second) / b.volume)
