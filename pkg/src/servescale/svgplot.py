"""Minimal self-contained SVG line charts (no plotting dependency)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence


def _polyline(values, x0, width, y0, height, vmax, color):
    n = len(values)
    if n == 0:
        return ""
    pts = []
    for k, v in enumerate(values):
        x = x0 + width * (k / max(1, n - 1))
        y = y0 + height - height * (float(v) / vmax if vmax else 0.0)
        pts.append(f"{x:.1f},{y:.1f}")
    return f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{" ".join(pts)}"/>'


def line_chart(panels: Sequence[tuple[str, Sequence[tuple[str, Sequence[float], str]]]], path,
               width: int = 900, panel_height: int = 180) -> None:
    """Stacked panels, each ``(title, [(label, values, color), ...])`` on a shared x axis."""
    pad = 40
    height = pad + len(panels) * (panel_height + pad)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for i, (title, series) in enumerate(panels):
        y0 = pad + i * (panel_height + pad)
        vmax = max([1.0] + [float(v) for _, vals, _ in series for v in vals])
        legend = ", ".join(f"{label} ({color})" for label, _, color in series)
        parts.append(f'<text x="{pad}" y="{y0 - 8}">{title}: {legend}; max {vmax:g}</text>')
        parts.append(f'<line x1="{pad}" y1="{y0 + panel_height}" x2="{width - pad}" '
                     f'y2="{y0 + panel_height}" stroke="#888"/>')
        for _, vals, color in series:
            parts.append(_polyline(vals, pad, width - 2 * pad, y0, panel_height, vmax, color))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
