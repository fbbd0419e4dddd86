"""Self-contained SVG line charts with byte-deterministic output.

No plotting framework: charts are assembled from fixed-geometry string
templates so identical inputs always produce identical files.
"""

from __future__ import annotations

__all__ = ["PALETTE", "CANVAS", "line_chart"]

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#ff7f0e",
    "#9467bd",
    "#8c564b",
    "#17becf",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
)

CANVAS = {
    "width": 640,
    "height": 400,
    "margin_left": 56,
    "margin_right": 150,
    "margin_top": 48,
    "margin_bottom": 48,
}


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def line_chart(
    title: str,
    x_label: str,
    y_label: str,
    x_ticks: list[int],
    series: list[tuple[str, dict[int, float]]],
    y_range: tuple[float, float] = (0.0, 1.0),
) -> str:
    """Render one chart; series points missing an x tick leave a line gap."""
    if not x_ticks:
        raise ValueError("x_ticks must not be empty")
    width, height = CANVAS["width"], CANVAS["height"]
    left, right = CANVAS["margin_left"], width - CANVAS["margin_right"]
    top, bottom = CANVAS["margin_top"], height - CANVAS["margin_bottom"]
    y_min, y_max = y_range
    span_x = max(len(x_ticks) - 1, 1)

    def px(x_idx: int) -> float:
        return left + (right - left) * (x_idx / span_x) if span_x else (left + right) / 2

    def py(v: float) -> float:
        frac = (v - y_min) / (y_max - y_min)
        return bottom - (bottom - top) * frac

    parts: list[str] = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    parts.append(f'<rect width="{width}" height="{height}" fill="#ffffff"/>')
    parts.append(
        f'<text x="{(left + right) / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{_escape(title)}</text>'
    )
    # horizontal grid at fixed fractions
    for i in range(5):
        v = y_min + (y_max - y_min) * i / 4
        y = py(v)
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{right}" y2="{y:.1f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{v:.2f}</text>'
        )
    for idx, tick in enumerate(x_ticks):
        x = px(idx)
        parts.append(
            f'<line x1="{x:.1f}" y1="{bottom}" x2="{x:.1f}" y2="{bottom + 4}" '
            f'stroke="#333333" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{bottom + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{tick:+d}</text>'
            if tick
            else f'<text x="{x:.1f}" y="{bottom + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">0</text>'
        )
    parts.append(
        f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
        f'fill="none" stroke="#333333" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{(left + right) / 2:.1f}" y="{height - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="11">{_escape(x_label)}</text>'
    )
    parts.append(
        f'<text x="14" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="11" '
        f'transform="rotate(-90 14 {(top + bottom) / 2:.1f})">{_escape(y_label)}</text>'
    )
    tick_index = {t: i for i, t in enumerate(x_ticks)}
    for si, (name, points) in enumerate(series):
        color = PALETTE[si % len(PALETTE)]
        coords = [
            (px(tick_index[t]), py(points[t]))
            for t in x_ticks
            if t in points and points[t] is not None
        ]
        if coords:
            path = " ".join(f"{x:.2f},{y:.2f}" for x, y in coords)
            parts.append(
                f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
            for x, y in coords:
                parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{color}"/>')
        ly = top + 14 * si
        parts.append(
            f'<line x1="{right + 10}" y1="{ly + 4:.1f}" x2="{right + 30}" y2="{ly + 4:.1f}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{right + 36}" y="{ly + 8:.1f}" font-family="sans-serif" '
            f'font-size="10">{_escape(name)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
