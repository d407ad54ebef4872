"""CSV and SVG emitters shared by the command line."""

from __future__ import annotations

import csv
import hashlib
import io
import math

from . import __version__
from .limit import LEVEL_MAX
from .mesh import atomic_write

SPECTRUM_COLUMNS = ("j", "lambda", "frequency_m")
CONVERGENCE_COLUMNS = ("level", "n_dofs", "policy", "l2_rel", "energy_rel", "rate_l2", "rate_energy")
DECISION_COLUMNS = ("ev_id", "valence", "k3", "k4", "k5", "R", "chosen_shape")


def file_hash(path):
    if path is None:
        return "none"
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def metadata(weights_hash="none", quadrature=4, **extra):
    """One ``#`` comment line recording how a file was produced."""
    items = {"subdtune": __version__, "weights_sha256": weights_hash,
             "quadrature": f"{quadrature}x{quadrature}-per-piece",
             "level_max": LEVEL_MAX, "clamp": "radial-to-level-max"}
    items.update(extra)
    return "# " + " ".join(f"{k}={v}" for k, v in items.items())


def format_csv(columns, rows, meta=None):
    buf = io.StringIO()
    if meta:
        buf.write(meta.rstrip("\n") + "\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c, "") for c in columns})
    return buf.getvalue()


def write_csv(path, columns, rows, meta=None):
    atomic_write(path, format_csv(columns, rows, meta))


# ---------------------------------------------------------------- SVG

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _decades(lo, hi):
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    if a == b:
        b += 1
    return a, b


def loglog_svg(series, title="", xlabel="DOFs", ylabel="relative error",
               width=640, height=440):
    """Log-log line plot; ``series`` maps a label to ``(xs, ys)``.

    Each curve is annotated with the slope of its last segment.
    """
    pts = [(x, y) for xs, ys in series.values() for x, y in zip(xs, ys) if x > 0 and y > 0]
    if not pts:
        raise ValueError("nothing to plot: all values must be positive")
    x0, x1 = _decades(min(p[0] for p in pts), max(p[0] for p in pts))
    y0, y1 = _decades(min(p[1] for p in pts), max(p[1] for p in pts))
    ml, mr, mt, mb = 80, 150, 40, 60
    pw, ph = width - ml - mr, height - mt - mb

    def X(x):
        return ml + pw * (math.log10(x) - x0) / (x1 - x0)

    def Y(y):
        return mt + ph * (1.0 - (math.log10(y) - y0) / (y1 - y0))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for d in range(x0, x1 + 1):
        x = X(10.0 ** d)
        out.append(f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" y2="{mt + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.1f}" y="{mt + ph + 18}" text-anchor="middle">1e{d}</text>')
    for d in range(y0, y1 + 1):
        y = Y(10.0 ** d)
        out.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{ml + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.1f}" text-anchor="end">1e{d}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 15}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="20" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 20 {mt + ph / 2})">{_esc(ylabel)}</text>')
    if title:
        out.append(f'<text x="{ml + pw / 2}" y="24" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    for i, (label, (xs, ys)) in enumerate(series.items()):
        c = _COLOURS[i % len(_COLOURS)]
        pp = [(X(x), Y(y)) for x, y in zip(xs, ys) if x > 0 and y > 0]
        if not pp:
            continue
        path = " ".join(f"{a:.1f},{b:.1f}" for a, b in pp)
        out.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="2"/>')
        for a, b in pp:
            out.append(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="3" fill="{c}"/>')
        text = _esc(label)
        if len(xs) >= 2 and xs[-1] > 0 and xs[-2] > 0 and ys[-1] > 0 and ys[-2] > 0:
            slope = math.log(ys[-1] / ys[-2]) / math.log(xs[-1] / xs[-2])
            text += f" (slope {slope:.2f})"
        ly = mt + 16 + 18 * i
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 28}" y2="{ly - 4}" '
                   f'stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 32}" y="{ly}">{text}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_svg(path, svg):
    atomic_write(path, svg)
