"""Standalone SVG figures: grid heatmaps and the time-series chart.

Output is plain text built from fixed-precision numbers, so identical tables
give byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from html import escape
from pathlib import Path
from typing import Optional, Sequence

from .experiments import TimeSeriesResultRow

RED = (178, 24, 43)
BLUE = (33, 102, 172)
MID = (247, 247, 247)
MISSING_FILL = "#ffffff"

Table = dict[tuple[float, float], Optional[float]]


@dataclass(frozen=True)
class HeatmapRender:
    """Diverging scale: values above ``midpoint`` shade red, below shade blue.

    ``vmin``/``vmax`` of None make the scale symmetric around the midpoint,
    wide enough for the largest deviation in the table.
    """

    midpoint: float = 0.5
    vmin: Optional[float] = None
    vmax: Optional[float] = None
    title: str = ""
    x_label: str = "P_t - P_{t-1}"
    y_label: str = "P^F_t - P_t"
    cell_size: int = 48
    decimals: int = 2


HEATMAP_DEFAULTS = {
    "w_fund": HeatmapRender(0.5, 0.0, 1.0, "Weight of the fundamentalist strategy"),
    "alpha": HeatmapRender(0.5, 0.0, 1.0, "Fundamentalist reaction parameter alpha"),
    "beta": HeatmapRender(0.0, title="Trend-follower reaction parameter beta"),
    "delta_e": HeatmapRender(0.0, title="Expected price variation", decimals=0),
}


def _lerp(a: tuple[int, int, int], b: tuple[int, int, int], t: float) -> str:
    t = min(1.0, max(0.0, t))
    r, g, bl = (round(x + (y - x) * t) for x, y in zip(a, b))
    return f"#{r:02x}{g:02x}{bl:02x}"


def scale_bounds(values: Sequence[float], render: HeatmapRender) -> tuple[float, float]:
    mid = render.midpoint
    if render.vmin is not None and render.vmax is not None:
        return render.vmin, render.vmax
    half = max((abs(v - mid) for v in values), default=0.0) or 1.0
    lo = render.vmin if render.vmin is not None else mid - half
    hi = render.vmax if render.vmax is not None else mid + half
    return lo, hi


def color_for(value: float, render: HeatmapRender, lo: float, hi: float) -> str:
    mid = render.midpoint
    if value >= mid:
        span = hi - mid
        return _lerp(MID, RED, (value - mid) / span if span > 0 else 0.0)
    span = mid - lo
    return _lerp(MID, BLUE, (mid - value) / span if span > 0 else 0.0)


def _num(x: float, decimals: int) -> str:
    text = f"{x:.{decimals}f}"
    return "0" if text.lstrip("-").strip("0.") == "" else text


def _tick(x: float) -> str:
    return f"{x:g}"


def heatmap_svg(table: Table, render: HeatmapRender) -> str:
    """One rect per cell; x is the trend axis, y the gap axis increasing upward."""
    trends = sorted({t for _, t in table})
    gaps = sorted({g for g, _ in table})
    size = render.cell_size
    left, top, legend_w = 90, 50, 110
    width = left + size * len(trends) + legend_w
    height = top + size * len(gaps) + 70
    present = [v for v in table.values() if v is not None]
    lo, hi = scale_bounds(present, render)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if render.title:
        out.append(f'<text x="{left}" y="24" font-size="14">{escape(render.title)}</text>')
    for gi, gap in enumerate(gaps):
        y = top + size * (len(gaps) - 1 - gi)
        out.append(f'<text class="ytick" x="{left - 6}" y="{y + size / 2 + 4:.1f}" text-anchor="end">{_tick(gap)}</text>')
        for ti, trend in enumerate(trends):
            x = left + size * ti
            value = table.get((gap, trend))
            coords = f'x="{x}" y="{y}" width="{size}" height="{size}" data-gap="{_tick(gap)}" data-trend="{_tick(trend)}"'
            if value is None:
                out.append(f'<rect class="cell missing" {coords} fill="{MISSING_FILL}" stroke="#dddddd"/>')
                continue
            fill = color_for(value, render, lo, hi)
            out.append(f'<rect class="cell" {coords} fill="{fill}" stroke="#ffffff"/>')
            out.append(
                f'<text class="value" x="{x + size / 2:.1f}" y="{y + size / 2 + 4:.1f}" '
                f'text-anchor="middle">{_num(value, render.decimals)}</text>'
            )
    base = top + size * len(gaps)
    for ti, trend in enumerate(trends):
        out.append(
            f'<text class="xtick" x="{left + size * ti + size / 2:.1f}" y="{base + 16}" text-anchor="middle">{_tick(trend)}</text>'
        )
    out.append(f'<text x="{left + size * len(trends) / 2:.1f}" y="{base + 40}" text-anchor="middle">{escape(render.x_label)}</text>')
    out.append(
        f'<text x="20" y="{top + size * len(gaps) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 20 {top + size * len(gaps) / 2:.1f})">{escape(render.y_label)}</text>'
    )

    # legend: 21 swatches from hi (top) to lo (bottom)
    lx = left + size * len(trends) + 30
    steps = 21
    sh = max(4.0, size * len(gaps) / steps)
    for k in range(steps):
        v = hi - (hi - lo) * k / (steps - 1)
        out.append(
            f'<rect class="legend" x="{lx}" y="{top + sh * k:.1f}" width="18" height="{sh:.1f}" fill="{color_for(v, render, lo, hi)}"/>'
        )
    for v, k in ((hi, 0), (render.midpoint, None), (lo, steps - 1)):
        if k is None:
            k = (hi - v) / (hi - lo) * (steps - 1) if hi > lo else 0
        out.append(f'<text class="legend-label" x="{lx + 24}" y="{top + sh * k + sh / 2 + 4:.1f}">{_num(v, render.decimals)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_heatmap(table: Table, render: HeatmapRender, out: str | Path) -> Path:
    path = Path(out)
    path.write_text(heatmap_svg(table, render), encoding="utf-8")
    return path


# -- time series -------------------------------------------------------------

PRICE_COLOR = "#1f77b4"
FUND_COLOR = "#ff7f0e"
MARKER_COLOR = "#2ca02c"
MA_COLOR = "#d62728"


def series_svg(rows: Sequence[TimeSeriesResultRow], title: str = "") -> str:
    """Price and fundamental on the left axis; fundamentalist weight and its
    moving average (dashed) on a [0, 1] right axis."""
    width, height = 960, 420
    left, right, top, bottom = 70, 60, 40, 50
    pw, ph = width - left - right, height - top - bottom
    n = len(rows)
    levels = [r.price for r in rows] + [r.fundamental for r in rows]
    lo, hi = (min(levels), max(levels)) if levels else (0.0, 1.0)
    if hi - lo < 1e-9:
        lo, hi = lo - 1.0, hi + 1.0

    def x(i: int) -> float:
        return left + (pw * i / (n - 1) if n > 1 else pw / 2)

    def y_price(v: float) -> float:
        return top + ph * (1 - (v - lo) / (hi - lo))

    def y_prob(v: float) -> float:
        return top + ph * (1 - v)

    def poly(points: list[tuple[float, float]], attrs: str) -> str:
        pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in points)
        return f"<polyline {attrs} fill=\"none\" points=\"{pts}\"/>"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888888"/>',
    ]
    if title:
        out.append(f'<text x="{left}" y="24" font-size="14">{escape(title)}</text>')
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        out.append(f'<text class="ytick-left" x="{left - 6}" y="{y_price(v) + 4:.2f}" text-anchor="end">{v:.0f}</text>')
        p = k / 4
        out.append(f'<text class="ytick-right" x="{left + pw + 6}" y="{y_prob(p) + 4:.2f}">{p:.2f}</text>')
    for i, r in enumerate(rows):
        if r.date.month == 1 and (r.date.year % 5 == 0 or n <= 60):
            out.append(f'<text class="xtick" x="{x(i):.2f}" y="{top + ph + 16}" text-anchor="middle">{r.date.year}</text>')
    if n:
        out.append(poly([(x(i), y_price(r.price)) for i, r in enumerate(rows)], f'class="price" stroke="{PRICE_COLOR}" stroke-width="1.5"'))
        out.append(poly([(x(i), y_price(r.fundamental)) for i, r in enumerate(rows)], f'class="fundamental" stroke="{FUND_COLOR}" stroke-width="1.5"'))
    for i, r in enumerate(rows):
        if r.mean_w_fund is not None:
            out.append(f'<circle class="marker" cx="{x(i):.2f}" cy="{y_prob(r.mean_w_fund):.2f}" r="2" fill="{MARKER_COLOR}"/>')
    run: list[tuple[float, float]] = []
    segments = []
    for i, r in enumerate(rows + [None]):  # type: ignore[operator]
        if r is not None and r.w_fund_ma13 is not None:
            run.append((x(i), y_prob(r.w_fund_ma13)))
            continue
        if run:
            segments.append(run)
            run = []
    for seg in segments:
        out.append(poly(seg, f'class="ma" stroke="{MA_COLOR}" stroke-width="1.5" stroke-dasharray="6,4"'))
    legend = [("price", PRICE_COLOR), ("fundamental", FUND_COLOR), ("fundamentalist weight", MARKER_COLOR), ("moving average", MA_COLOR)]
    for k, (label, color) in enumerate(legend):
        lx = left + 10 + 170 * k
        out.append(f'<rect x="{lx}" y="{height - 18}" width="12" height="4" fill="{color}"/>')
        out.append(f'<text x="{lx + 16}" y="{height - 12}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_series(rows: Sequence[TimeSeriesResultRow], out: str | Path, title: str = "") -> Path:
    path = Path(out)
    path.write_text(series_svg(rows, title), encoding="utf-8")
    return path
