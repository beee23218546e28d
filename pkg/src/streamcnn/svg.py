"""Minimal deterministic SVG emitter for sweep curves and range histograms.

Hand-rolled so that repeated runs produce byte-identical files: no
timestamps, no hashed ids, fixed float formatting.
"""

from __future__ import annotations

from typing import Sequence

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 50


def _fmt(x: float) -> str:
    return f"{x:.4f}".rstrip("0").rstrip(".")


def _axis_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / n
    return [lo + i * step for i in range(n + 1)]


class _Canvas:
    def __init__(self, title: str, x_label: str, y_label: str,
                 x_range: tuple[float, float], y_range: tuple[float, float],
                 log_y: bool = False):
        import math

        self.log = math.log10 if log_y else None
        self.x_lo, self.x_hi = x_range
        self.y_lo, self.y_hi = y_range
        if self.log:
            self.y_lo = self.log(max(self.y_lo, 1e-12))
            self.y_hi = self.log(max(self.y_hi, 1e-12))
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="15" '
            f'font-family="sans-serif">{title}</text>',
            f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12" '
            f'font-family="sans-serif">{x_label}</text>',
            f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
            f'font-family="sans-serif" transform="rotate(-90 16 {HEIGHT / 2})">{y_label}</text>',
        ]
        self._frame()

    def x_px(self, x: float) -> float:
        span = self.x_hi - self.x_lo or 1.0
        return MARGIN_L + (x - self.x_lo) / span * (WIDTH - MARGIN_L - MARGIN_R)

    def y_px(self, y: float) -> float:
        if self.log:
            y = self.log(max(y, 1e-12))
        span = self.y_hi - self.y_lo or 1.0
        return HEIGHT - MARGIN_B - (y - self.y_lo) / span * (HEIGHT - MARGIN_T - MARGIN_B)

    def _frame(self):
        x0, y0 = MARGIN_L, HEIGHT - MARGIN_B
        x1, y1 = WIDTH - MARGIN_R, MARGIN_T
        self.parts.append(
            f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" '
            f'fill="none" stroke="#333" stroke-width="1"/>'
        )
        for t in _axis_ticks(self.x_lo, self.x_hi):
            px = self.x_px(t)
            self.parts.append(
                f'<text x="{_fmt(px)}" y="{y0 + 16}" text-anchor="middle" font-size="10" '
                f'font-family="sans-serif">{_fmt(t)}</text>'
            )
        lo, hi = self.y_lo, self.y_hi
        for t in _axis_ticks(lo, hi):
            val = 10**t if self.log else t
            py = HEIGHT - MARGIN_B - (t - lo) / ((hi - lo) or 1.0) * (HEIGHT - MARGIN_T - MARGIN_B)
            label = f"{val:.3g}" if self.log else _fmt(t)
            self.parts.append(
                f'<text x="{x0 - 6}" y="{_fmt(py + 3)}" text-anchor="end" font-size="10" '
                f'font-family="sans-serif">{label}</text>'
            )

    def polyline(self, xs: Sequence[float], ys: Sequence[float], color: str, label: str, idx: int):
        pts = " ".join(f"{_fmt(self.x_px(x))},{_fmt(self.y_px(y))}" for x, y in zip(xs, ys))
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        for x, y in zip(xs, ys):
            self.parts.append(
                f'<circle cx="{_fmt(self.x_px(x))}" cy="{_fmt(self.y_px(y))}" r="2.5" '
                f'fill="{color}"/>'
            )
        lx, ly = WIDTH - MARGIN_R - 150, MARGIN_T + 14 + idx * 14
        self.parts.append(
            f'<rect x="{lx}" y="{ly - 8}" width="10" height="3" fill="{color}"/>'
            f'<text x="{lx + 14}" y="{ly}" font-size="10" font-family="sans-serif">{label}</text>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def line_chart(title: str, x_label: str, y_label: str,
               curves: dict[str, tuple[Sequence[float], Sequence[float]]],
               log_y: bool = False) -> str:
    """curves: label -> (xs, ys); insertion order fixes colors and legend."""
    all_x = [x for xs, _ in curves.values() for x in xs]
    all_y = [y for _, ys in curves.values() for y in ys]
    canvas = _Canvas(title, x_label, y_label,
                     (min(all_x), max(all_x)), (min(all_y), max(all_y)), log_y)
    for i, (label, (xs, ys)) in enumerate(curves.items()):
        canvas.polyline(xs, ys, _PALETTE[i % len(_PALETTE)], label, i)
    return canvas.render()


def range_chart(title: str, rows: list[dict]) -> str:
    """Per-layer horizontal range bars (log magnitude) with a coverage band.

    Each row: {label, lo, hi, band_lo, band_hi} with magnitudes > 0.
    """
    import math

    n = len(rows)
    row_h = 24
    height = MARGIN_T + MARGIN_B + max(1, n) * row_h
    mags = [v for r in rows for v in (r["lo"], r["hi"], r["band_lo"], r["band_hi"]) if v > 0]
    lo = math.log10(min(mags)) if mags else -1
    hi = math.log10(max(mags)) if mags else 1
    span = (hi - lo) or 1.0

    def px(v):
        return MARGIN_L + (math.log10(max(v, 1e-30)) - lo) / span * (WIDTH - MARGIN_L - MARGIN_R)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}">',
        f'<rect width="{WIDTH}" height="{height}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{title}</text>',
    ]
    for i, r in enumerate(rows):
        y = MARGIN_T + i * row_h + row_h // 2
        if r["band_lo"] > 0 and r["band_hi"] > 0:
            parts.append(
                f'<rect x="{_fmt(px(r["band_lo"]))}" y="{y - 9}" '
                f'width="{_fmt(max(px(r["band_hi"]) - px(r["band_lo"]), 1.0))}" height="18" '
                f'fill="#cccccc"/>'
            )
        if r["lo"] > 0 and r["hi"] > 0:
            parts.append(
                f'<line x1="{_fmt(px(r["lo"]))}" y1="{y}" x2="{_fmt(px(r["hi"]))}" y2="{y}" '
                f'stroke="#1f77b4" stroke-width="4"/>'
            )
        parts.append(
            f'<text x="{MARGIN_L - 6}" y="{y + 4}" text-anchor="end" font-size="10" '
            f'font-family="sans-serif">{r["label"]}</text>'
        )
    return "\n".join(parts + ["</svg>"]) + "\n"
