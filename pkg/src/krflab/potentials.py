"""Initial potentials: Legendre series, moment polynomials, presets, random draws."""

from __future__ import annotations

import numpy as np
from numpy.polynomial import legendre as leg

from .geometry import DegenerateMetricError, MetricState, MomentGrid

PRESETS = ("canonical", "p2", "dilated_ke", "skew")


def legendre_potential(grid: MomentGrid, coeffs) -> np.ndarray:
    """sum_k c_k P_k in the Legendre variable (s on the sphere, 2x - 1 on CP^n)."""
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("legendre coefficients must be a non-empty list")
    return leg.legval(grid.t, c)


def radial_poly_potential(grid: MomentGrid, coeffs) -> np.ndarray:
    """sum_k c_k x^k in the moment coordinate."""
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("radial_poly coefficients must be a non-empty list")
    return np.polynomial.polynomial.polyval(grid.x, c)


def preset_potential(grid: MomentGrid, name: str, amplitude: float | None = None) -> np.ndarray:
    """Named starting potentials.

    canonical  : zero (the Kahler-Einstein metric itself)
    p2         : amplitude * P_2, default 0.3 on CP^1 and 0.2 on CP^n
    dilated_ke : (n+1) log(1 + (l^2 - 1) x) with l = exp(amplitude), the pullback of
                 the Kahler-Einstein metric by a dilation
    skew       : amplitude * (P_1 + P_3) / 2, an odd profile that moves the centre of mass
    """
    if name == "canonical":
        return np.zeros(grid.N)
    if name == "p2":
        a = amplitude if amplitude is not None else (0.3 if grid.n == 1 else 0.2)
        return legendre_potential(grid, [0.0, 0.0, a])
    if name == "dilated_ke":
        a = amplitude if amplitude is not None else 0.4
        lam2 = np.exp(2.0 * a)
        return (grid.n + 1) * np.log1p((lam2 - 1.0) * grid.x)
    if name == "skew":
        a = amplitude if amplitude is not None else 0.2
        return legendre_potential(grid, [0.0, 0.5 * a, 0.0, 0.5 * a])
    raise ValueError(f"unknown preset {name!r}; expected one of {list(PRESETS)}")


def min_density(grid: MomentGrid, phi) -> float:
    """Smallest volume ratio at the nodes, or -inf for a degenerate metric."""
    try:
        return float(MetricState(grid, phi).v.min())
    except DegenerateMetricError:
        return -np.inf


def random_potential(grid: MomentGrid, seed: int, order: int = 6,
                     density_floor: float = 0.1, iterations: int = 60) -> np.ndarray:
    """Seeded low-order Legendre draw, scaled back into {min v >= density_floor}.

    Coefficient k is normal with standard deviation 1/k.  If the raw draw
    already satisfies the floor it is kept; otherwise the scale is found by
    bisection on [0, 1].  The admissible scales form an interval because v is
    a product of functions linear in the scale.
    """
    rng = np.random.default_rng(np.uint64(seed))
    coeffs = np.zeros(order + 1)
    coeffs[1:] = rng.standard_normal(order) / np.arange(1, order + 1)
    raw = legendre_potential(grid, coeffs)
    if min_density(grid, raw) >= density_floor:
        return raw
    lo, hi = 0.0, 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if min_density(grid, mid * raw) >= density_floor:
            lo = mid
        else:
            hi = mid
    return lo * raw
