"""Learning-curve aggregation across seeds and a small hand-written SVG renderer."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

Z_95 = 1.96
COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


@dataclass
class Curve:
    label: str
    steps: np.ndarray
    mean: np.ndarray
    half_width: np.ndarray
    n_seeds: int


def read_progress(path: str | Path, column: str = "mean_final_distance") -> dict[int, float]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing progress file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and column not in rows[0]:
        raise ValueError(f"{path}: no column {column!r}")
    return {int(r["env_steps"]): float(r[column]) for r in rows if r[column] != ""}


def find_progress_files(root: str | Path) -> list[Path]:
    """A run directory, a directory of seed runs, or a CSV file itself."""
    root = Path(root)
    if root.is_file():
        return [root]
    if (root / "progress.csv").is_file():
        return [root / "progress.csv"]
    found = sorted(root.glob("*/progress.csv")) if root.is_dir() else []
    if not found:
        raise FileNotFoundError(f"no progress.csv under {root}")
    return found


def aggregate(files: list[Path], label: str, column: str = "mean_final_distance") -> Curve:
    """Mean and 95% normal-approximation half-width over seeds at shared checkpoints."""
    runs = [read_progress(f, column) for f in files]
    steps = sorted(set.intersection(*(set(r) for r in runs)))
    vals = np.array([[r[s] for s in steps] for r in runs])
    n = len(runs)
    sd = vals.std(axis=0, ddof=1) if n > 1 else np.zeros(len(steps))
    return Curve(label, np.array(steps, dtype=float), vals.mean(axis=0), Z_95 * sd / math.sqrt(n), n)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(curves: list[Curve], title: str = "", y_label: str = "mean final distance",
               width: int = 640, height: int = 400) -> str:
    """Line plot with shaded confidence bands; output depends only on ``curves``."""
    left, right, top, bottom = 70, 160, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([c.steps for c in curves]) if curves else np.zeros(1)
    lo = np.concatenate([c.mean - c.half_width for c in curves]) if curves else np.zeros(1)
    hi = np.concatenate([c.mean + c.half_width for c in curves]) if curves else np.ones(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = min(0.0, float(lo.min())), float(hi.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2:.2f}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for i in range(6):
        xv = x0 + (x1 - x0) * i / 5
        yv = y0 + (y1 - y0) * i / 5
        out.append(f'<text x="{_fmt(px(xv))}" y="{top + ph + 18}" text-anchor="middle">{xv:g}</text>')
        out.append(f'<text x="{left - 6}" y="{_fmt(py(yv) + 4)}" text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">environment steps</text>')
    out.append(f'<text transform="translate(16 {top + ph / 2:.2f}) rotate(-90)" '
               f'text-anchor="middle">{escape(y_label)}</text>')
    for k, c in enumerate(curves):
        color = COLORS[k % len(COLORS)]
        upper = [f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(c.steps, c.mean + c.half_width)]
        lower = [f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(c.steps[::-1], (c.mean - c.half_width)[::-1])]
        out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(c.steps, c.mean))
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 14 + 18 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly}">{escape(c.label)} (n={c.n_seeds})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
