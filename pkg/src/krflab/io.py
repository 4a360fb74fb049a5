"""Deterministic writers for the run outputs.

Floats are written with ``repr`` (shortest round-trip form) and JSON keys
are sorted.  Nothing time- or host-dependent is emitted, so identical inputs
give byte-identical files.
"""

from __future__ import annotations

import json
import math
import os
from typing import Iterable, Mapping, Sequence

import numpy as np

SUMMARY_SCHEMA_VERSION = 1


def flow_columns(n: int) -> list[str]:
    """run.csv columns of the flow command, in order."""
    return (["t", "E0"] + [f"E{k}" for k in range(1, n + 1)]
            + ["Rmin", "Rmax", "supRicDev", "c", "c_norm", "eps", "mu0", "mu1",
               "lambda1", "diameter", "pali_residual"])


def format_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} cells, expected {len(columns)}")
        lines.append(",".join(_cell(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def flow_rows(trace) -> list[list]:
    n = trace.n
    c_norm = (trace.normalization.c_norm if trace.normalization is not None
              else np.full(trace.times.size, np.nan))
    rows = []
    for j in range(trace.times.size):
        row = [trace.times[j], trace.E0[j]]
        row += [trace.Ek[j, k] for k in range(1, n + 1)]
        row += [trace.Rmin[j], trace.Rmax[j], trace.sup_ric_dev[j], trace.c[j], c_norm[j],
                trace.eps[j], trace.mu0[j], trace.mu1[j], trace.lambda1[j],
                trace.diameter[j], trace.pali_residual[j]]
        rows.append(row)
    return rows


def write_flow_csv(path: str, trace) -> None:
    write_csv(path, flow_columns(trace.n), flow_rows(trace))


def jsonable(obj):
    """Convert numpy scalars/arrays to plain Python; non-finite floats become strings."""
    if isinstance(obj, Mapping):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else format_float(x)
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_summary(path: str, command: str, config: Mapping, result: Mapping,
                  status: str = "ok") -> None:
    doc = {"schema_version": SUMMARY_SCHEMA_VERSION, "command": command,
           "status": status, "config": config, "result": result}
    _write_text(path, dumps(doc))


def _write_text(path: str, content: str) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(content)


# ---------------------------------------------------------------------------
# SVG line plots
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return out


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def svg_line_plot(series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
                  title: str = "", xlabel: str = "", ylabel: str = "",
                  width: int = 640, height: int = 400) -> str:
    """Render (label, x, y) series as an SVG document.  Non-finite points are skipped."""
    left, right, top, bottom = 70, 20, 36, 50
    pw, ph = width - left - right, height - top - bottom
    xs = [np.asarray(x, dtype=float) for _, x, _ in series]
    ys = [np.asarray(y, dtype=float) for _, _, y in series]
    finite = [np.isfinite(x) & np.isfinite(y) for x, y in zip(xs, ys)]
    allx = np.concatenate([x[m] for x, m in zip(xs, finite)]) if series else np.zeros(0)
    ally = np.concatenate([y[m] for y, m in zip(ys, finite)]) if series else np.zeros(0)
    if allx.size == 0:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    else:
        x0, x1 = float(allx.min()), float(allx.max())
        y0, y1 = float(ally.min()), float(ally.max())
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 <= 1e-12 * max(1.0, abs(y0)):
        pad = 0.5 * max(1.0, abs(y0)) * 1e-3 if y0 != 0 else 0.5
        y0, y1 = y0 - pad, y1 + pad
    else:
        pad = 0.05 * (y1 - y0)
        y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for v in _ticks(x0, x1):
        X = px(v)
        out.append(f'<line x1="{X:.2f}" y1="{top + ph}" x2="{X:.2f}" y2="{top + ph + 5}" stroke="#444"/>')
        out.append(f'<text x="{X:.2f}" y="{top + ph + 18}" font-size="11" text-anchor="middle">{v:.4g}</text>')
    for v in _ticks(y0, y1):
        Y = py(v)
        out.append(f'<line x1="{left - 5}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" font-size="11" text-anchor="end">{v:.4g}</text>')
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="22" font-size="14" text-anchor="middle">{_esc(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" font-size="12" '
                   f'text-anchor="middle">{_esc(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{top + ph / 2:.1f}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 16 {top + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for i, ((label, _, _), x, y, m) in enumerate(zip(series, xs, ys, finite)):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[m], y[m]))
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw - 110}" y1="{ly - 4}" x2="{left + pw - 90}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 85}" y="{ly}" font-size="11">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str, series, **kwargs) -> None:
    _write_text(path, svg_line_plot(series, **kwargs))


def _safe_log(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.full(v.shape, np.nan)
    pos = v > 0
    out[pos] = np.log(v[pos])
    return out


def write_flow_plots(directory: str, trace) -> list[str]:
    """The four standard flow figures; returns the written paths."""
    t = trace.times
    lam = np.asarray(trace.lambda1, dtype=float)
    plots = {
        "energies.svg": dict(series=[("E0", t, trace.E0), ("E1", t, trace.E1)],
                             title="K-energy and E1", xlabel="t", ylabel="energy"),
        "mu_decay.svg": dict(series=[("log mu0", t, _safe_log(trace.mu0)),
                                     ("log mu1", t, _safe_log(trace.mu1))],
                             title="log mu0 and log mu1", xlabel="t", ylabel="log"),
        "scalar_curvature.svg": dict(series=[("Rmin", t, trace.Rmin), ("Rmax", t, trace.Rmax)],
                                     title="scalar curvature range", xlabel="t", ylabel="R"),
        "lambda1.svg": dict(series=[("lambda1", t, lam)],
                            title="first eigenvalue", xlabel="t", ylabel="lambda1"),
    }
    paths = []
    for name, kw in plots.items():
        path = os.path.join(directory, name)
        write_svg(path, **kw)
        paths.append(path)
    return paths
