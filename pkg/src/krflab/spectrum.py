"""Invariant spectrum of the Laplacian and related quadratic forms.

Only circle-invariant (zonal or radial) functions are represented, so every
eigenvalue here is an eigenvalue of the invariant part of the spectrum.  The
Dirichlet and mass forms are assembled from quadrature and solved as dense
symmetric problems after the substitution y = M^(1/2) f.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import MetricState, field_values


class EigenResidualError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SpectrumReport:
    """Eigen data of -Delta_phi on mean-zero invariant functions.

    Eigenvectors are nodal values normalized in L^2(omega_phi^n / V).
    Residuals are ||Delta f + lambda f|| / ||f|| in the same norm.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    theta: np.ndarray
    theta_residual: float
    gamma: float
    W: float

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def poincare_constant(self) -> float:
        return 1.0 / self.lambda1


def _complement(state: MetricState, fields=()) -> np.ndarray:
    """Orthonormal basis, in y-coordinates, of the complement of 1 and ``fields``."""
    root = np.sqrt(state.mass)
    cols = [root] + [root * np.asarray(f, dtype=float) for f in fields]
    Q, _ = np.linalg.qr(np.column_stack(cols), mode="complete")
    return Q[:, len(cols):]


def _reduced_eigh(state: MetricState, form: np.ndarray, fields=()):
    root = np.sqrt(state.mass)
    Z = _complement(state, fields)
    C = form / root[:, None] / root[None, :]
    C = 0.5 * (C + C.T)
    vals, vecs = np.linalg.eigh(Z.T @ C @ Z)
    y = Z @ vecs
    return vals, y / root[:, None]


def _residuals(state: MetricState, vals, funcs) -> np.ndarray:
    """L^2(omega_phi) residuals of Delta f + lambda f, relative to ||f||."""
    lap = state.laplacian_matrix
    out = np.empty(len(vals))
    for j, lam in enumerate(vals):
        f = funcs[:, j]
        r = lap @ f + lam * f
        out[j] = np.sqrt(state.integrate(r * r) / state.integrate(f * f))
    return out


def dirichlet_eigs(state: MetricState, m: int = 4, tol: float = 1e-8):
    """First ``m`` eigenvalues of -Delta_phi on mean-zero invariant functions.

    Returns ``(eigenvalues, eigenvectors, residuals)``.
    """
    N = state.grid.N
    m = int(m)
    if not 1 <= m < N // 2:
        raise ValueError(f"m must satisfy 1 <= m < N/2 = {N // 2}, got {m}")
    vals, funcs = _reduced_eigh(state, state.stiffness)
    vals = vals[:m]
    funcs = funcs[:, :m]
    scale = np.sqrt(state.volume / np.einsum("ij,i,ij->j", funcs, state.mass, funcs))
    funcs = funcs * scale[None, :]
    # fix the sign so the value at the first node is positive
    funcs = funcs * np.where(funcs[0] < 0.0, -1.0, 1.0)[None, :]
    res = _residuals(state, vals, funcs)
    if np.any(res > tol):
        j = int(np.argmax(res))
        raise EigenResidualError(f"eigenpair {j} residual {res[j]:.3e} exceeds {tol:.1e}")
    return vals, funcs, res


def holomorphy_potential(state: MetricState) -> np.ndarray:
    """Mean-zero Hamiltonian of the circle action for omega_phi.

    The moment map of omega_phi is (n+1) x alpha = (n+1) x + x (1-x) phi_x;
    the sign is chosen so that theta = s on the round sphere.
    """
    g = state.grid
    xi = (g.n + 1) * g.x * state.alpha
    return state.mean(xi) - xi


def holomorphy_residual(state: MetricState, theta=None) -> float:
    """||Delta theta + theta|| / ||theta||; zero exactly at Kahler-Einstein metrics."""
    theta = holomorphy_potential(state) if theta is None else field_values(theta, state.grid)
    r = state.laplacian_matrix @ theta + theta
    return float(np.sqrt(state.integrate(r * r) / state.integrate(theta * theta)))


def restricted_eigenvalue(state: MetricState) -> float:
    """Smallest Dirichlet Rayleigh quotient orthogonal to 1 and theta."""
    theta = holomorphy_potential(state)
    vals, _ = _reduced_eigh(state, state.stiffness, (theta,))
    return float(vals[0])


def restricted_gap(state: MetricState) -> float:
    """gamma = (restricted first eigenvalue) - 1."""
    return restricted_eigenvalue(state) - 1.0


def bochner_forms(state: MetricState):
    """Matrices of int (Delta f)^2 and int Ric(grad f, grad f) against omega_phi^n."""
    K = state.stiffness
    hess = K.T @ (K / state.mass[:, None])
    Dx = state.grid.Dx
    K_ric = (Dx.T * (state.dirichlet_weights * state.rho_r)[None, :]) @ Dx
    return hess, K_ric


def lichnerowicz_W(state: MetricState, exclude=(), floor: float = -1e-8) -> float:
    """min of int ((Delta f)^2 - Ric(grad f, grad f)) over normalized mean-zero f.

    ``exclude`` lists fields the minimizer must also be orthogonal to.  Tiny
    negative values down to ``floor`` are reported as zero.
    """
    hess, K_ric = bochner_forms(state)
    vals, _ = _reduced_eigh(state, hess - K_ric, exclude)
    w = float(vals[0])
    if floor <= w < 0.0:
        w = 0.0
    return w


def spectrum_report(state: MetricState, m: int = 4, tol: float = 1e-8) -> SpectrumReport:
    vals, funcs, res = dirichlet_eigs(state, m, tol)
    theta = holomorphy_potential(state)
    return SpectrumReport(eigenvalues=vals, eigenvectors=funcs, residuals=res,
                          theta=theta, theta_residual=holomorphy_residual(state, theta),
                          gamma=restricted_gap(state), W=lichnerowicz_W(state))
