"""CSV and SVG report emission.

Every CSV starts with a comment line naming the config hash and artifact
version, so identical configs reproduce byte-identical files.  Charts are
written as standalone SVG directly (grouped bars, lines, KDE curves) --
no plotting dependency, and the SVG is a deterministic function of the
rows it draws.
"""

from __future__ import annotations

import csv
import io
from typing import Sequence

ARTIFACT_VERSION = "0.1.0"

_PALETTE = ["#4878cf", "#d65f5f", "#6acc65", "#b47cc7", "#c4ad66", "#77bedb"]


def format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, fieldnames: Sequence[str], rows: Sequence[dict], config_hash: str) -> None:
    """Write rows (already sorted by the caller) with the standard header."""
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash} version={ARTIFACT_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fieldnames)
    for row in rows:
        writer.writerow([format_cell(row[k]) for k in fieldnames])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path) -> tuple[dict, list[dict]]:
    """Read a report CSV; returns (header meta, rows as string dicts)."""
    meta: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first.startswith("#"):
            for part in first[1:].split():
                if "=" in part:
                    k, v = part.split("=", 1)
                    meta[k] = v
        else:
            raise ValueError(f"{path}: missing report header line")
        reader = csv.DictReader(fh)
        rows = list(reader)
    return meta, rows


# ---------------------------------------------------------------------------
# SVG primitives
# ---------------------------------------------------------------------------

def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Svg:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]

    def line(self, x1, y1, x2, y2, color="#333", width=1.0):
        self.parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
            f'stroke="{color}" stroke-width="{width}"/>'
        )

    def rect(self, x, y, w, h, color):
        self.parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" fill="{color}"/>'
        )

    def text(self, x, y, s, size=11, anchor="middle", color="#222"):
        self.parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" '
            f'font-family="sans-serif" text-anchor="{anchor}" fill="{color}">{_esc(s)}</text>'
        )

    def polyline(self, points, color, width=1.5):
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    return [lo + span * i / (n - 1) for i in range(n)]


class _Frame:
    """Axis frame mapping data coordinates onto the pixel canvas."""

    def __init__(self, svg: _Svg, x_range, y_range, margin=(55, 15, 35, 45)):
        self.svg = svg
        self.ml, self.mr, self.mt, self.mb = margin
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0

    def px(self, x: float) -> float:
        w = self.svg.width - self.ml - self.mr
        return self.ml + (x - self.x0) / (self.x1 - self.x0) * w

    def py(self, y: float) -> float:
        h = self.svg.height - self.mt - self.mb
        return self.svg.height - self.mb - (y - self.y0) / (self.y1 - self.y0) * h

    def axes(self, xlabel: str, ylabel: str, x_ticks=True):
        s = self.svg
        s.line(self.ml, s.height - self.mb, s.width - self.mr, s.height - self.mb)
        s.line(self.ml, self.mt, self.ml, s.height - self.mb)
        for ty in _ticks(self.y0, self.y1):
            s.line(self.ml - 3, self.py(ty), self.ml, self.py(ty))
            s.text(self.ml - 6, self.py(ty) + 3.5, f"{ty:.4g}", size=9, anchor="end")
        if x_ticks:
            for tx in _ticks(self.x0, self.x1):
                s.line(self.px(tx), s.height - self.mb, self.px(tx), s.height - self.mb + 3)
                s.text(self.px(tx), s.height - self.mb + 14, f"{tx:.4g}", size=9)
        s.text(s.width / 2, s.height - 6, xlabel, size=11)
        s.text(12, s.height / 2, ylabel, size=11, anchor="middle")

    def legend(self, names: list[str]):
        s = self.svg
        x = s.width - self.mr - 120
        y = self.mt + 6
        for i, name in enumerate(names):
            color = _PALETTE[i % len(_PALETTE)]
            s.rect(x, y + 16 * i, 10, 10, color)
            s.text(x + 15, y + 16 * i + 9, name, size=10, anchor="start")


def svg_grouped_bars(
    title: str,
    group_labels: Sequence[str],
    series: dict[str, Sequence[float]],
    ylabel: str = "mean return",
    width: int = 640,
    height: int = 400,
) -> str:
    """Grouped bar chart: one group per label, one bar per series entry."""
    svg = _Svg(width, height)
    svg.text(width / 2, 18, title, size=13)
    values = [v for vals in series.values() for v in vals]
    lo = min(0.0, min(values))
    hi = max(values) * 1.08 if max(values) > 0 else 1.0
    frame = _Frame(svg, (0, len(group_labels)), (lo, hi))
    frame.axes("scenario", ylabel, x_ticks=False)
    n_series = len(series)
    band = 1.0
    bar_w = band * 0.8 / n_series
    for gi, label in enumerate(group_labels):
        for si, (name, vals) in enumerate(series.items()):
            x = gi + 0.1 + si * bar_w
            v = vals[gi]
            y_top = frame.py(max(v, 0.0))
            y_bot = frame.py(min(v, 0.0))
            svg.rect(frame.px(x), y_top, frame.px(x + bar_w) - frame.px(x) - 1,
                     max(y_bot - y_top, 0.5), _PALETTE[si % len(_PALETTE)])
        svg.text(frame.px(gi + 0.5), svg.height - frame.mb + 14, label, size=10)
    frame.legend(list(series.keys()))
    return svg.render()


def svg_lines(
    title: str,
    curves: dict[str, Sequence[tuple[float, float]]],
    xlabel: str,
    ylabel: str,
    width: int = 640,
    height: int = 400,
) -> str:
    """Line chart of one or more (x, y) curves."""
    svg = _Svg(width, height)
    svg.text(width / 2, 18, title, size=13)
    xs = [p[0] for pts in curves.values() for p in pts]
    ys = [p[1] for pts in curves.values() for p in pts]
    frame = _Frame(svg, (min(xs), max(xs)), (min(ys), max(ys) + (max(ys) - min(ys) + 1e-9) * 0.05))
    frame.axes(xlabel, ylabel)
    for i, (name, pts) in enumerate(curves.items()):
        frame_pts = [(frame.px(x), frame.py(y)) for x, y in pts]
        svg.polyline(frame_pts, _PALETTE[i % len(_PALETTE)])
    frame.legend(list(curves.keys()))
    return svg.render()


def svg_kde(
    title: str,
    curves: dict[str, Sequence[tuple[float, float]]],
    xlabel: str = "episode return",
    width: int = 640,
    height: int = 400,
) -> str:
    return svg_lines(title, curves, xlabel, "density", width, height)
