"""Deterministic SVG line and scatter charts from sweep CSV files.

Output is a pure function of the CSV content: coordinates are rounded to two
decimals and series are emitted in sorted order, so the same input always
yields the same bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .csvio import SchemaError, read_rows

WIDTH, HEIGHT = 480, 320
MARGIN = 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


@dataclass(frozen=True)
class PlotSpec:
    """One chart: ``y`` averaged over seeds against ``x``, one series per ``group`` value."""

    name: str
    x: str
    y: str
    group: str = "arm"
    title: str = ""
    arms: tuple[str, ...] = ()


# one chart per study, keyed by an arm that identifies the sweep
DEFAULT_SPECS = {
    "aligned": (
        PlotSpec("noise_tolerance", "flip_rate", "misclass_sp", "spcr", "misclassification vs flip rate", ("aligned",)),
    ),
    "ssl_all": (
        PlotSpec("ssl_ablation", "n_target_private", "h_score", "arm", "H-score vs target-private classes"),
        PlotSpec("ssl_noise", "n_target_private", "noise_pool", "arm", "observed noise rate"),
    ),
    "alpha": (PlotSpec("alpha_sensitivity", "alpha", "h_score", "arm", "H-score vs alpha"),),
    "ssl": (PlotSpec("spcr_robustness", "spcr", "h_score", "arm", "H-score vs SPCR"),),
}


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _scale(lo: float, hi: float, a: float, b: float):
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def _frame(title: str, xlabel: str, ylabel: str, xr, yr) -> list[str]:
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT // 2})">{escape(ylabel)}</text>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" font-size="10">{_fmt(xr[0])}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" font-size="10">{_fmt(xr[1])}</text>',
        f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" text-anchor="end" font-size="10">{_fmt(yr[0])}</text>',
        f'<text x="{MARGIN - 4}" y="{MARGIN + 4}" text-anchor="end" font-size="10">{_fmt(yr[1])}</text>',
    ]
    return out


def _ranges(series):
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    return (min(xs), max(xs)), (min(ys), max(ys))


def line_svg(series: dict[str, list[tuple[float, float]]], title="", xlabel="x", ylabel="y") -> str:
    """One polyline per series, vertices in increasing ``x``."""
    series = {k: sorted(v) for k, v in sorted(series.items()) if v}
    if not series:
        raise ValueError("nothing to plot")
    xr, yr = _ranges(series)
    sx = _scale(*xr, MARGIN, WIDTH - MARGIN)
    sy = _scale(*yr, HEIGHT - MARGIN, MARGIN)
    out = _frame(title, xlabel, ylabel, xr, yr)
    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        out.append(
            f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * i}" font-size="10" fill="{color}">{escape(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_svg(groups: dict[str, list[tuple[float, float]]], title="", xlabel="x", ylabel="y") -> str:
    """One colored point cloud per group."""
    groups = {k: v for k, v in sorted(groups.items()) if v}
    if not groups:
        raise ValueError("nothing to plot")
    xr, yr = _ranges(groups)
    sx = _scale(*xr, MARGIN, WIDTH - MARGIN)
    sy = _scale(*yr, HEIGHT - MARGIN, MARGIN)
    out = _frame(title, xlabel, ylabel, xr, yr)
    for i, (name, pts) in enumerate(groups.items()):
        color = PALETTE[i % len(PALETTE)]
        out.extend(
            f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="1.5" fill="{color}"/>' for x, y in pts
        )
        out.append(
            f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * i}" font-size="10" fill="{color}">{escape(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def averaged_series(rows, spec: PlotSpec) -> dict[str, list[tuple[float, float]]]:
    """Seed-averaged ``(x, y)`` points per group."""
    for col in (spec.x, spec.y, spec.group):
        if rows and col not in rows[0]:
            raise SchemaError(f"plot {spec.name!r} needs column {col!r}; have {sorted(rows[0])}")
    cells: dict = {}
    for r in rows:
        if spec.arms and r.get("arm") not in spec.arms:
            continue
        y = float(r[spec.y])
        if math.isnan(y):
            continue
        cells.setdefault(str(r[spec.group]), {}).setdefault(float(r[spec.x]), []).append(y)
    return {
        g: [(x, float(np.mean(ys))) for x, ys in sorted(pts.items())] for g, pts in sorted(cells.items())
    }


def toy_scatter_specs(rows) -> list[tuple[str, dict]]:
    """One scatter of learned target features (first two coordinates) per arm, first seed."""
    if not rows:
        return []
    for col in ("seed", "arm", "domain", "label", "f0", "f1"):
        if col not in rows[0]:
            raise SchemaError(f"toy feature file needs column {col!r}")
    first = min(r["seed"] for r in rows)
    out = []
    for arm in sorted({r["arm"] for r in rows}):
        groups: dict = {}
        for r in rows:
            if r["seed"] == first and r["arm"] == arm:
                key = f"{r['domain']} class {int(float(r['label']))}"
                groups.setdefault(key, []).append((float(r["f0"]), float(r["f1"])))
        out.append((f"toy_features_{arm}", groups))
    return out


def emit_plots(csv_path, out_dir, specs: tuple[PlotSpec, ...] | None = None) -> list[Path]:
    """Write the SVG charts for one CSV file; returns the written paths.

    An empty CSV produces no files. Without ``specs`` the charts are chosen
    from the file's kind and arms.
    """
    kind, rows = read_rows(csv_path)
    out_dir = Path(out_dir)
    if not rows:
        return []
    charts: list[tuple[str, str]] = []
    if kind == "toy-features":
        for name, groups in toy_scatter_specs(rows):
            charts.append((name, scatter_svg(groups, name.replace("_", " "), "feature 0", "feature 1")))
    else:
        if specs is None:
            arms = {r.get("arm") for r in rows}
            specs = tuple(s for key, group in DEFAULT_SPECS.items() if key in arms for s in group)
        for spec in specs:
            series = averaged_series(rows, spec)
            if series:
                charts.append((spec.name, line_svg(series, spec.title or spec.name, spec.x, spec.y)))
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, svg in charts:
        path = out_dir / f"{name}.svg"
        path.write_text(svg, encoding="utf-8")
        paths.append(path)
    return paths
