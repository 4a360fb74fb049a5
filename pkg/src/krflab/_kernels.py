"""Hot numeric kernels.

Every kernel is written once in array style that both CPython/numpy and numba
accept.  When numba is importable and ``KRFLAB_DISABLE_NUMBA`` is unset the
module-level names are the ``@njit`` versions; otherwise they are the plain
numpy functions.  Both variants stay reachable as ``<name>_py`` and
``<name>_jit`` so the benchmark and the tests can compare them directly.
"""

from __future__ import annotations

import os
import types

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_disabled = os.environ.get("KRFLAB_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
USE_NUMBA = HAVE_NUMBA and not _disabled


# --------------------------------------------------------------------------
# metric fields of a radial profile
# --------------------------------------------------------------------------

def _metric_ratios(total, A, B, n):
    alpha = 1.0 + A @ total
    beta = 1.0 + B @ total
    v = beta * alpha ** (n - 1)
    bad = -1
    for i in range(v.shape[0]):
        if not (v[i] > 0.0) or not (beta[i] > 0.0) or (n > 1 and not (alpha[i] > 0.0)):
            bad = i
            break
    return alpha, beta, v, bad


def _ricci_ratios(logv, alpha, beta, A, B):
    rho_t = (1.0 - A @ logv) / alpha
    rho_r = (1.0 - B @ logv) / beta
    return rho_r, rho_t


# --------------------------------------------------------------------------
# normalized Kahler-Ricci flow, gauge-split form
#
# y[:-1] is the potential with its background-mean removed, y[-1] is the
# removed constant a(t); phi = y[:-1] + y[-1].  The constant obeys
# a' = a + <G>, which carries the e^t gauge mode separately so the profile
# part never sees it.
# --------------------------------------------------------------------------

def _flow_velocity(psi, base, A, B, n, offset):
    """G = log(v_abs(base + psi)) + psi + offset, and the bad-node index."""
    total = base + psi
    alpha, beta, v, bad = _metric_ratios(total, A, B, n)
    if bad >= 0:
        return np.zeros_like(psi), bad
    return np.log(v) + psi + offset, -1


def _augmented_rhs(y, base, A, B, n, offset, mass_b, volume):
    m = y.shape[0] - 1
    psi = y[:m]
    G, bad = _flow_velocity(psi, base, A, B, n, offset)
    out = np.empty_like(y)
    if bad >= 0:
        out[:] = 0.0
        return out, bad
    gmean = np.sum(mass_b * G) / volume
    out[:m] = G - gmean
    out[m] = y[m] + gmean
    return out, -1


def _rk4_step(y, dt, base, A, B, n, offset, mass_b, volume):
    k1, bad = _augmented_rhs(y, base, A, B, n, offset, mass_b, volume)
    if bad >= 0:
        return y.copy(), bad
    k2, bad = _augmented_rhs(y + 0.5 * dt * k1, base, A, B, n, offset, mass_b, volume)
    if bad >= 0:
        return y.copy(), bad
    k3, bad = _augmented_rhs(y + 0.5 * dt * k2, base, A, B, n, offset, mass_b, volume)
    if bad >= 0:
        return y.copy(), bad
    k4, bad = _augmented_rhs(y + dt * k3, base, A, B, n, offset, mass_b, volume)
    if bad >= 0:
        return y.copy(), bad
    y_new = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    # the end state must itself be a Kahler metric
    m = y.shape[0] - 1
    _, _, _, bad = _metric_ratios(base + y_new[:m], A, B, n)
    return y_new, bad


def _rk4_doubling(y, dt, base, A, B, n, offset, mass_b, volume):
    """One RK4 step of size dt against two of size dt/2.

    Returns the two-half-step result, the Richardson error estimate on the
    profile entries (max norm), and a bad-node index (-1 when all states were
    admissible).
    """
    y_full, bad = _rk4_step(y, dt, base, A, B, n, offset, mass_b, volume)
    if bad >= 0:
        return y.copy(), np.inf, bad
    y_mid, bad = _rk4_step(y, 0.5 * dt, base, A, B, n, offset, mass_b, volume)
    if bad >= 0:
        return y.copy(), np.inf, bad
    y_half, bad = _rk4_step(y_mid, 0.5 * dt, base, A, B, n, offset, mass_b, volume)
    if bad >= 0:
        return y.copy(), np.inf, bad
    m = y.shape[0] - 1
    err = np.max(np.abs(y_half[:m] - y_full[:m])) / 15.0
    return y_half, err, -1


_NAMES = ("_metric_ratios", "_ricci_ratios", "_flow_velocity", "_augmented_rhs",
          "_rk4_step", "_rk4_doubling")


def _jit_family(names):
    """Jitted clones of the kernels that call each other's jitted versions.

    Each clone shares its code object with the Python original but resolves
    globals in a private namespace where the kernel names are dispatchers.
    """
    if not HAVE_NUMBA:
        return {name: globals()[name] for name in names}
    namespace = {"np": np, "__name__": __name__}
    for name in names:
        fn = globals()[name]
        clone = types.FunctionType(fn.__code__, namespace, fn.__name__, fn.__defaults__)
        clone.__qualname__ = fn.__qualname__
        namespace[name] = numba.njit(cache=True)(clone)
    return {name: namespace[name] for name in names}


_jitted = _jit_family(_NAMES)

metric_ratios_py, metric_ratios_jit = _metric_ratios, _jitted["_metric_ratios"]
ricci_ratios_py, ricci_ratios_jit = _ricci_ratios, _jitted["_ricci_ratios"]
flow_velocity_py, flow_velocity_jit = _flow_velocity, _jitted["_flow_velocity"]
augmented_rhs_py, augmented_rhs_jit = _augmented_rhs, _jitted["_augmented_rhs"]
rk4_step_py, rk4_step_jit = _rk4_step, _jitted["_rk4_step"]
rk4_doubling_py, rk4_doubling_jit = _rk4_doubling, _jitted["_rk4_doubling"]

if USE_NUMBA:
    metric_ratios = metric_ratios_jit
    ricci_ratios = ricci_ratios_jit
    flow_velocity = flow_velocity_jit
    augmented_rhs = augmented_rhs_jit
    rk4_step = rk4_step_jit
    rk4_doubling = rk4_doubling_jit
else:
    metric_ratios = metric_ratios_py
    ricci_ratios = ricci_ratios_py
    flow_velocity = flow_velocity_py
    augmented_rhs = augmented_rhs_py
    rk4_step = rk4_step_py
    rk4_doubling = rk4_doubling_py


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
