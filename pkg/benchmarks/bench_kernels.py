"""Numba vs numpy timings for the flow kernels.

Times each kernel in both variants on the standard CP^1 start and on a CP^2
start, checks that the two variants agree, and prints a small table.  The
numba column excludes compilation (one warm-up call first).

    python benchmarks/bench_kernels.py [--sizes 32 64 128] [--repeat 200]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from krflab import _kernels
from krflab.flow import FlowSettings, run_flow
from krflab.functionals import ricci_potential
from krflab.geometry import MetricState, make_grid
from krflab.potentials import preset_potential


def _setup(n: int, N: int):
    g = make_grid("S2Zonal" if n == 1 else "CPnRadial", n, N)
    b = MetricState(g, preset_potential(g, "p2"))
    offset = -b.logv_abs - ricci_potential(b).h.values
    y = np.zeros(N + 1)
    y[:-1] = 1e-3 * np.cos(g.t)
    y[:-1] -= b.mean(y[:-1])
    args = (b.total, g.A, g.B, g.n, offset, b.mass, g.volume)
    return y, args


def _time(fn, *args, repeat: int) -> float:
    fn(*args)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_kernels(sizes, repeat: int) -> list[tuple]:
    rows = []
    for n in (1, 2):
        for N in sizes:
            y, args = _setup(n, N)
            dt = 1e-4
            for name, py, jit, call in (
                ("augmented_rhs", _kernels.augmented_rhs_py, _kernels.augmented_rhs_jit, (y,) + args),
                ("rk4_step", _kernels.rk4_step_py, _kernels.rk4_step_jit, (y, dt) + args),
                ("rk4_doubling", _kernels.rk4_doubling_py, _kernels.rk4_doubling_jit, (y, dt) + args),
            ):
                diff = float(np.max(np.abs(np.asarray(py(*call)[0]) - np.asarray(jit(*call)[0]))))
                t_py = _time(py, *call, repeat=repeat)
                t_jit = _time(jit, *call, repeat=repeat)
                rows.append((name, n, N, t_py, t_jit, diff))
    return rows


def bench_run(t_max: float = 2.0) -> list[tuple]:
    g = make_grid("S2Zonal", 1, 64)
    b = MetricState(g, preset_potential(g, "p2"))
    rp = ricci_potential(b)
    settings = FlowSettings(t_max=t_max, stop_tol=0.0, monitor_stride=10 ** 9)
    out = []
    for flag in (False, True):
        run_flow(b, FlowSettings(t_max=0.01, stop_tol=0.0), h=rp, use_numba=flag, normalize=False)
        t0 = time.perf_counter()
        tr = run_flow(b, settings, h=rp, use_numba=flag, normalize=False)
        out.append(("numba" if flag else "numpy", time.perf_counter() - t0, tr.steps_accepted,
                    float(tr.E0[-1])))
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--t-max", type=float, default=2.0)
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        print("numba is not importable; both columns time the numpy kernels")
    print(f"{'kernel':<14} {'n':>2} {'N':>4} {'numpy us':>10} {'numba us':>10} {'speedup':>8} {'max diff':>10}")
    for name, n, N, t_py, t_jit, diff in bench_kernels(args.sizes, args.repeat):
        print(f"{name:<14} {n:>2} {N:>4} {1e6 * t_py:>10.1f} {1e6 * t_jit:>10.1f} "
              f"{t_py / t_jit:>8.2f} {diff:>10.2e}")
    print()
    print(f"flow run to t = {args.t_max} (CP^1, N = 64, diagnostics included)")
    for label, secs, steps, e0 in bench_run(args.t_max):
        print(f"  {label:<6} {secs:8.3f} s  {steps:6d} steps  E0(T) = {e0:.15f}")


if __name__ == "__main__":
    main()
