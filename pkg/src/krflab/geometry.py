"""Symmetry-reduced Kahler metrics in the canonical class of CP^1 and CP^n.

Both geometries are handled in one moment coordinate ``x`` in [0, 1]:

* ``S2Zonal``  : CP^1 with zonal (rotation-invariant) data, native coordinate
  ``s = cos(theta)`` and ``x = (1 - s) / 2``.
* ``CPnRadial``: CP^n with U(n)-invariant data, ``x = r^2 / (1 + r^2)``.

The background form is ``(n+1) * omega_FS`` so that ``Ric(omega) = omega``.
A radial potential ``phi(x)`` changes the tangential and radial eigenvalues of
the Kahler form by the factors

    alpha = 1 + (1 - x) phi_x / (n + 1)
    beta  = 1 + (x (1 - x) phi_x)_x / (n + 1)

and the volume ratio is ``v = alpha^(n-1) beta``.  Functions are stored as
values at Gauss-Legendre nodes, i.e. as polynomials in ``x``; those extend
smoothly across both fixed-point sets of the torus action.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.polynomial import legendre as leg

from . import _kernels


class GeometryKind(str, enum.Enum):
    S2_ZONAL = "S2Zonal"
    CPN_RADIAL = "CPnRadial"

    @classmethod
    def parse(cls, value) -> "GeometryKind":
        if isinstance(value, cls):
            return value
        key = str(value).replace("_", "").lower()
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ValueError(f"unknown geometry kind {value!r}; expected one of "
                         f"{[k.value for k in cls]}")


class DegenerateMetricError(ArithmeticError):
    """A potential left the Kahler cone (volume ratio or eigenvalue <= 0)."""

    def __init__(self, node: int, value: float, where: str = "density"):
        self.node = int(node)
        self.value = float(value)
        self.where = where
        super().__init__(f"degenerate metric: {where} = {value:.6g} at node {node}")


def canonical_volume(n: int) -> float:
    """Volume of CP^n in the class 2*pi*c_1, i.e. (2*pi*(n+1))^n."""
    return float((2.0 * np.pi * (n + 1)) ** n)


@dataclass(frozen=True, eq=False)
class MomentGrid:
    """Gauss-Legendre collocation on the reduced interval.

    ``nodes``/``weights``/``density`` are in the native coordinate (s for
    S2Zonal, x for CPnRadial); ``weights * density`` sums to the volume.
    Everything with an ``x`` in its name is in the moment coordinate.
    """

    kind: GeometryKind
    n: int
    N: int
    nodes: np.ndarray
    weights: np.ndarray
    density: np.ndarray
    x: np.ndarray
    wx: np.ndarray
    D: np.ndarray
    Dx: np.ndarray
    A: np.ndarray
    B: np.ndarray
    volume: float
    # Legendre machinery in the reference variable t in [-1, 1]
    t: np.ndarray
    _to_coef: np.ndarray

    @property
    def mass0(self) -> np.ndarray:
        """Quadrature measure of the background volume form at the nodes."""
        return self.weights * self.density

    def diff(self, f) -> np.ndarray:
        """Derivative in the native coordinate."""
        return self.D @ np.asarray(f, dtype=float)

    def coefficients(self, f) -> np.ndarray:
        """Legendre coefficients (in t) of the interpolant of nodal values."""
        return self._to_coef @ np.asarray(f, dtype=float)

    def t_of_native(self, y):
        y = np.asarray(y, dtype=float)
        return y if self.kind is GeometryKind.S2_ZONAL else 2.0 * y - 1.0

    def t_of_x(self, x):
        x = np.asarray(x, dtype=float)
        return 1.0 - 2.0 * x if self.kind is GeometryKind.S2_ZONAL else 2.0 * x - 1.0

    def native_of_x(self, x):
        x = np.asarray(x, dtype=float)
        return 1.0 - 2.0 * x if self.kind is GeometryKind.S2_ZONAL else x

    def evaluate(self, f, points) -> np.ndarray:
        """Evaluate the interpolant of ``f`` at native-coordinate points."""
        return leg.legval(self.t_of_native(points), self.coefficients(f))

    def evaluate_x(self, f, xpoints) -> np.ndarray:
        return leg.legval(self.t_of_x(xpoints), self.coefficients(f))

    def sample(self, func) -> np.ndarray:
        """Values of a callable of the native coordinate at the nodes."""
        return np.asarray(func(self.nodes), dtype=float) * np.ones(self.N)


def _barycentric_diff(t: np.ndarray, wt: np.ndarray) -> np.ndarray:
    """Differentiation matrix on Gauss-Legendre nodes (barycentric form).

    Diagonal by negative row sums, which keeps the error near N^2 * eps.
    """
    N = t.size
    bw = (-1.0) ** np.arange(N) * np.sqrt((1.0 - t ** 2) * wt)
    dt = t[:, None] - t[None, :]
    np.fill_diagonal(dt, 1.0)
    D = (bw[None, :] / bw[:, None]) / dt
    np.fill_diagonal(D, 0.0)
    D[np.diag_indices(N)] = -D.sum(axis=1)
    return D


def make_grid(kind, n: int, N: int) -> MomentGrid:
    kind = GeometryKind.parse(kind)
    n = int(n)
    N = int(N)
    if N < 8:
        raise ValueError(f"node count N must be >= 8, got {N}")
    if kind is GeometryKind.S2_ZONAL and n != 1:
        raise ValueError(f"S2Zonal requires complex dimension n = 1, got {n}")
    if kind is GeometryKind.CPN_RADIAL and n < 2:
        raise ValueError(f"CPnRadial requires complex dimension n >= 2, got {n}")

    t, wt = leg.leggauss(N)
    vander = leg.legvander(t, N - 1)
    to_coef = (np.arange(N) + 0.5)[:, None] * (vander.T * wt[None, :])
    Dt = _barycentric_diff(t, wt)

    volume = canonical_volume(n)
    if kind is GeometryKind.S2_ZONAL:
        nodes, weights = t, wt
        x = 0.5 * (1.0 - t)
        Dx = -2.0 * Dt
        D = Dt
        density = np.full(N, 2.0 * np.pi)
    else:
        x = 0.5 * (1.0 + t)
        nodes, weights = x, 0.5 * wt
        Dx = 2.0 * Dt
        D = Dx
        density = volume * n * x ** (n - 1)
    wx = 0.5 * wt

    A = ((1.0 - x) / (n + 1))[:, None] * Dx
    # Galerkin form of (x(1-x) f')' -- exact for every polynomial of degree < N
    B = -(1.0 / (n + 1)) * (Dx.T * (wx * x * (1.0 - x))[None, :]) @ Dx / wx[:, None]

    arrays = dict(nodes=nodes, weights=weights, density=density, x=x, wx=wx, D=D,
                  Dx=Dx, A=np.ascontiguousarray(A), B=np.ascontiguousarray(B), t=t,
                  _to_coef=to_coef)
    for arr in arrays.values():
        arr.setflags(write=False)
    return MomentGrid(kind=kind, n=n, N=N, volume=volume, **arrays)


@dataclass(frozen=True, eq=False)
class PotentialField:
    """An invariant function sampled on a grid."""

    grid: MomentGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.N,):
            raise ValueError(f"expected {self.grid.N} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise ValueError(f"non-finite potential value at node {bad}")
        object.__setattr__(self, "values", values)

    def __call__(self, points) -> np.ndarray:
        return self.grid.evaluate(self.values, points)

    def resolution_tail(self, m: int = 4) -> float:
        """Size of the last ``m`` Legendre coefficients relative to the largest."""
        c = np.abs(self.grid.coefficients(self.values))
        scale = max(c.max(), 1e-300)
        return float(c[-m:].max() / scale)

    def is_regular(self, tol: float = 1e-8) -> bool:
        """Pole regularity: the interpolant is resolved, hence smooth at both ends.

        For S2Zonal, polynomials in s have theta-even expansions at both poles, so
        the odd-order constraints hold exactly once the representation is resolved.
        """
        return self.resolution_tail() <= tol


@dataclass(frozen=True)
class FormEigenPair:
    """A co-diagonal (1,1)-form: eigenvalue ratios in radial/tangential directions."""

    radial: np.ndarray
    tangential: np.ndarray


def _frozen(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


class MetricState:
    """omega_phi = omega_b + i ddbar(phi) with cached derived fields.

    ``background`` is another state, or ``None`` for the canonical
    Kahler-Einstein form.  ``v`` is the volume ratio against the background;
    ``v_abs`` against the canonical form.
    """

    def __init__(self, grid: MomentGrid, phi=None, background: "MetricState | None" = None):
        if isinstance(phi, PotentialField):
            phi = phi.values
        phi = np.zeros(grid.N) if phi is None else np.asarray(phi, dtype=float)
        if phi.shape != (grid.N,):
            raise ValueError(f"potential has shape {phi.shape}, grid has {grid.N} nodes")
        if background is not None and background.grid is not grid:
            raise ValueError("background state lives on a different grid")
        self.grid = grid
        self.background = background
        self.phi = _frozen(phi)
        base = background.total if background is not None else 0.0
        self.total = _frozen(base + phi)
        alpha, beta, v_abs, bad = _kernels.metric_ratios(self.total, grid.A, grid.B, grid.n)
        if bad >= 0:
            where, value = "density", v_abs[bad]
            if not beta[bad] > 0:
                where, value = "radial eigenvalue", beta[bad]
            elif grid.n > 1 and not alpha[bad] > 0:
                where, value = "tangential eigenvalue", alpha[bad]
            raise DegenerateMetricError(bad, value, where)
        self.alpha = _frozen(alpha)
        self.beta = _frozen(beta)
        self.v_abs = _frozen(v_abs)
        self.logv_abs = _frozen(np.log(v_abs))
        rho_r, rho_t = _kernels.ricci_ratios(self.logv_abs, alpha, beta, grid.A, grid.B)
        self.rho_r = _frozen(rho_r)
        self.rho_t = _frozen(rho_t)
        self.R = _frozen((grid.n - 1) * rho_t + rho_r)
        self.mass = _frozen(grid.mass0 * v_abs)
        if background is None:
            self.v = self.v_abs
        else:
            self.v = _frozen(v_abs / background.v_abs)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def volume(self) -> float:
        return self.grid.volume

    @property
    def is_canonical_background(self) -> bool:
        return self.background is None

    def relative(self, phi) -> "MetricState":
        """The state omega_self + i ddbar(phi)."""
        return MetricState(self.grid, phi, background=self)

    def integrate(self, f) -> float:
        return float(np.dot(self.mass, np.broadcast_to(f, self.mass.shape)))

    def mean(self, f) -> float:
        return self.integrate(f) / self.volume

    @cached_property
    def dirichlet_weights(self) -> np.ndarray:
        g = self.grid
        n = g.n
        kappa = g.volume * n / (n + 1) * g.x ** n * (1.0 - g.x) * self.alpha ** (n - 1)
        return _frozen(g.wx * kappa)

    @cached_property
    def stiffness(self) -> np.ndarray:
        """Matrix of the Dirichlet form  f, g -> int <grad f, grad g> omega_phi^n."""
        Dx = self.grid.Dx
        return _frozen((Dx.T * self.dirichlet_weights[None, :]) @ Dx)

    @cached_property
    def laplacian_matrix(self) -> np.ndarray:
        """Weak-form complex Laplacian, -M^{-1} K; self-adjoint in omega_phi^n."""
        return _frozen(-self.stiffness / self.mass[:, None])

    @cached_property
    def laplacian_strong_matrix(self) -> np.ndarray:
        """Pointwise Laplacian (n-1) A f / alpha + B f / beta.

        This is the exact derivative of the discrete log-density map, which is
        what Newton iterations on Monge-Ampere need.
        """
        g = self.grid
        return _frozen((g.n - 1) * g.A / self.alpha[:, None] + g.B / self.beta[:, None])

    def forms_of(self, other: "MetricState") -> FormEigenPair:
        """Eigenvalue ratios of omega_other relative to omega_self."""
        return FormEigenPair(radial=other.beta / self.beta, tangential=other.alpha / self.alpha)

    @property
    def ricci_form(self) -> FormEigenPair:
        return FormEigenPair(radial=self.rho_r, tangential=self.rho_t)

    @property
    def identity_form(self) -> FormEigenPair:
        one = np.ones(self.grid.N)
        return FormEigenPair(radial=one, tangential=one)

    def __repr__(self) -> str:
        g = self.grid
        return (f"MetricState({g.kind.value}, n={g.n}, N={g.N}, "
                f"R in [{self.R.min():.4g}, {self.R.max():.4g}])")


def canonical_state(grid: MomentGrid) -> MetricState:
    return MetricState(grid)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def density(state: MetricState) -> np.ndarray:
    """omega_phi^n / omega^n against the state's own background."""
    return np.array(state.v)


def scalar_curvature(state: MetricState) -> np.ndarray:
    return np.array(state.R)


def ricci_eigenvalues(state: MetricState) -> FormEigenPair:
    return FormEigenPair(radial=np.array(state.rho_r), tangential=np.array(state.rho_t))


def laplacian_apply(state: MetricState, f) -> np.ndarray:
    return state.laplacian_matrix @ np.asarray(f, dtype=float)


def grad_norm_sq(state: MetricState, f) -> np.ndarray:
    """|grad f|^2 in the complex convention: x(1-x) f_x^2 / ((n+1) beta)."""
    g = state.grid
    fx = g.Dx @ np.asarray(f, dtype=float)
    return g.x * (1.0 - g.x) * fx ** 2 / ((g.n + 1) * state.beta)


def integrate(state: MetricState, f) -> float:
    """Quadrature of f against omega_phi^n."""
    return state.integrate(f)


def diameter(state: MetricState, points: int | None = None) -> float:
    """Length of a meridian between the two fixed-point sets.

    The radial line element is sqrt((n+1) beta / (2 x (1-x))) dx; the
    endpoint weight is absorbed exactly by Gauss-Chebyshev quadrature.
    """
    g = state.grid
    m = points or 2 * g.N
    theta = (2.0 * np.arange(1, m + 1) - 1.0) * np.pi / (2.0 * m)
    xc = 0.5 * (1.0 + np.cos(theta))
    beta_c = g.evaluate_x(state.beta, xc)
    if np.any(beta_c <= 0.0):
        j = int(np.argmin(beta_c))
        raise DegenerateMetricError(j, beta_c[j], "interpolated radial eigenvalue")
    return float(np.sqrt((g.n + 1) / 2.0) * np.pi / m * np.sum(np.sqrt(beta_c)))


def mixed_density(forms: Sequence[FormEigenPair], n: int | None = None) -> np.ndarray:
    """Density of a wedge of n co-diagonal (1,1)-forms relative to omega_phi^n.

    For diagonal forms this is the normalized mixed discriminant: each slot in
    turn contributes its radial eigenvalue, all others their tangential one,
    and the sum is divided by n.
    """
    forms = list(forms)
    if n is not None and len(forms) != n:
        raise ValueError(f"mixed_density needs exactly {n} forms, got {len(forms)}")
    m = len(forms)
    if m == 0:
        raise ValueError("mixed_density needs at least one form")
    radial = [np.asarray(f.radial, dtype=float) for f in forms]
    tang = [np.asarray(f.tangential, dtype=float) for f in forms]
    total = 0.0
    for j in range(m):
        term = radial[j]
        for i in range(m):
            if i != j:
                term = term * tang[i]
        total = total + term
    return np.asarray(total / m, dtype=float)


def field_values(f, grid: MomentGrid) -> np.ndarray:
    """Nodal values of an array or PotentialField, shape-checked against ``grid``."""
    if isinstance(f, PotentialField):
        if f.grid is not grid:
            raise ValueError("field lives on a different grid")
        return np.array(f.values)
    values = np.asarray(f, dtype=float)
    if values.ndim == 0:
        return np.full(grid.N, float(values))
    if values.shape != (grid.N,):
        raise ValueError(f"field has shape {values.shape}, grid has {grid.N} nodes")
    return values
