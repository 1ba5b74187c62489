import logging
from xml.sax.saxutils import escape

import numpy as np

logger = logging.getLogger(__name__)

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


class SvgLinePlot:
    """Minimal time-series plot written as plain SVG text.

    Output depends only on the data added, so identical inputs give identical bytes.
    """

    def __init__(self, title, width=640, height=400, margin=50, x_label="t", y_label=""):
        self.title = title
        self.width = width
        self.height = height
        self.margin = margin
        self.x_label = x_label
        self.y_label = y_label
        self.series = []

    def add_series(self, times, values, label=""):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError(f"Series '{label}' needs matching 1-D arrays, got {times.shape} and {values.shape}")
        self.series.append((times, values, label))
        return self

    def _bounds(self):
        all_t = np.concatenate([s[0] for s in self.series])
        all_v = np.concatenate([s[1] for s in self.series])
        finite = np.isfinite(all_v)
        t_lo, t_hi = float(all_t.min()), float(all_t.max())
        v_lo, v_hi = (float(all_v[finite].min()), float(all_v[finite].max())) if finite.any() else (0.0, 1.0)
        if t_hi == t_lo:
            t_hi = t_lo + 1.0
        if v_hi == v_lo:
            v_lo, v_hi = v_lo - 0.5, v_hi + 0.5
        pad = 0.05 * (v_hi - v_lo)
        return t_lo, t_hi, v_lo - pad, v_hi + pad

    def _points(self, times, values, bounds, max_points=2000):
        t_lo, t_hi, v_lo, v_hi = bounds
        stride = max(1, len(times) // max_points)
        inner_w = self.width - 2 * self.margin
        inner_h = self.height - 2 * self.margin
        px = self.margin + (times[::stride] - t_lo) / (t_hi - t_lo) * inner_w
        py = self.height - self.margin - (values[::stride] - v_lo) / (v_hi - v_lo) * inner_h
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py) if np.isfinite(b))

    def render(self):
        if not self.series:
            raise ValueError("Nothing to plot")
        bounds = self._bounds()
        t_lo, t_hi, v_lo, v_hi = bounds
        m, w, h = self.margin, self.width, self.height
        lines = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
            f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
            f'<text x="{w / 2:.1f}" y="{m / 2:.1f}" text-anchor="middle" font-size="14">{escape(self.title)}</text>',
            f'<line x1="{m}" y1="{h - m}" x2="{w - m}" y2="{h - m}" stroke="black"/>',
            f'<line x1="{m}" y1="{m}" x2="{m}" y2="{h - m}" stroke="black"/>',
            f'<text x="{m}" y="{h - m + 15}" font-size="10">{t_lo:.3g}</text>',
            f'<text x="{w - m}" y="{h - m + 15}" font-size="10" text-anchor="end">{t_hi:.3g}</text>',
            f'<text x="{m - 5}" y="{h - m}" font-size="10" text-anchor="end">{v_lo:.3g}</text>',
            f'<text x="{m - 5}" y="{m + 10}" font-size="10" text-anchor="end">{v_hi:.3g}</text>',
            f'<text x="{w / 2:.1f}" y="{h - 10}" text-anchor="middle" font-size="12">{escape(self.x_label)}</text>',
        ]
        if self.y_label:
            lines.append(f'<text x="12" y="{h / 2:.1f}" font-size="12" transform="rotate(-90 12 {h / 2:.1f})" '
                         f'text-anchor="middle">{escape(self.y_label)}</text>')
        for index, (times, values, label) in enumerate(self.series):
            color = PALETTE[index % len(PALETTE)]
            lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" '
                         f'points="{self._points(times, values, bounds)}"><title>{escape(label)}</title></polyline>')
        lines.append('</svg>')
        logger.debug(f"Rendered SVG '{self.title}' with {len(self.series)} series")
        return "\n".join(lines) + "\n"
