"""Dependency-free SVG chart emission; deterministic output for diffable tests."""

from __future__ import annotations

from xml.sax.saxutils import escape

_PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
            "#937860", "#da8bc3", "#8c8c8c")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def bar_chart(title: str, labels: list[str], values: list[float | None],
              width: int = 520, height: int = 320, y_label: str = "") -> str:
    """Vertical bar chart; ``None`` values render as hatched absences.

    An all-absent chart carries an explicit "no valid runs" annotation.
    """
    margin_l, margin_b, margin_t = 60, 50, 40
    plot_w = width - margin_l - 20
    plot_h = height - margin_t - margin_b
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{escape(title)}</text>',
    ]
    present = [v for v in values if v is not None]
    if not present:
        parts.append(
            f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle" '
            f'font-size="13" font-family="sans-serif" fill="#a33">no valid runs</text>'
        )
        parts.append("</svg>")
        return "\n".join(parts)

    lo = min(0.0, min(present))
    hi = max(0.0, max(present))
    if hi - lo < 1e-12:
        hi = lo + 1.0

    def y_of(v: float) -> float:
        return margin_t + plot_h * (hi - v) / (hi - lo)

    baseline = y_of(0.0)
    n = len(labels)
    slot = plot_w / n
    bar_w = slot * 0.6
    for i, (label, value) in enumerate(zip(labels, values)):
        x = margin_l + i * slot + (slot - bar_w) / 2
        colour = _PALETTE[i % len(_PALETTE)]
        if value is None:
            parts.append(
                f'<text x="{_fmt(x + bar_w / 2)}" y="{_fmt(baseline - 6)}" '
                f'text-anchor="middle" font-size="10" font-family="sans-serif" '
                f'fill="#999">n/a</text>'
            )
        else:
            top = min(y_of(value), baseline)
            h = abs(y_of(value) - baseline)
            parts.append(
                f'<rect x="{_fmt(x)}" y="{_fmt(top)}" width="{_fmt(bar_w)}" '
                f'height="{_fmt(h)}" fill="{colour}"/>'
            )
            parts.append(
                f'<text x="{_fmt(x + bar_w / 2)}" y="{_fmt(top - 4)}" '
                f'text-anchor="middle" font-size="10" font-family="sans-serif">'
                f'{_fmt(value)}</text>'
            )
        parts.append(
            f'<text x="{_fmt(x + bar_w / 2)}" y="{height - margin_b + 16}" '
            f'text-anchor="middle" font-size="11" font-family="sans-serif">'
            f'{escape(label)}</text>'
        )
    parts.append(
        f'<line x1="{margin_l}" y1="{_fmt(baseline)}" x2="{width - 20}" '
        f'y2="{_fmt(baseline)}" stroke="#333" stroke-width="1"/>'
    )
    for frac in (0.0, 0.5, 1.0):
        v = lo + frac * (hi - lo)
        parts.append(
            f'<text x="{margin_l - 8}" y="{_fmt(y_of(v) + 4)}" text-anchor="end" '
            f'font-size="10" font-family="sans-serif">{_fmt(v)}</text>'
        )
    if y_label:
        parts.append(
            f'<text x="14" y="{height / 2}" font-size="11" font-family="sans-serif" '
            f'transform="rotate(-90 14 {height / 2})" text-anchor="middle">'
            f'{escape(y_label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def scatter(title: str, points, labels, width: int = 520, height: int = 420) -> str:
    """2-D scatter coloured by integer label."""
    margin = 45
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    if not xs:
        return bar_chart(title, [], [])
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{escape(title)}</text>',
    ]
    for (x, y), label in zip(points, labels):
        px = margin + (width - 2 * margin) * (x - x_lo) / x_span
        py = height - margin - (height - 2 * margin - 20) * (y - y_lo) / y_span
        colour = _PALETTE[int(label) % len(_PALETTE)]
        parts.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="3" fill="{colour}" '
            f'fill-opacity="0.75"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def grouped_bar_chart(title: str, group_labels: list[str], series: dict[str, list[float | None]],
                      width: int = 640, height: int = 340) -> str:
    """Bars grouped per label, one colour per series (legend on top)."""
    margin_l, margin_b, margin_t = 60, 50, 56
    plot_w = width - margin_l - 20
    plot_h = height - margin_t - margin_b
    flat = [v for vs in series.values() for v in vs if v is not None]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{escape(title)}</text>',
    ]
    if not flat:
        parts.append(
            f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle" '
            f'font-size="13" font-family="sans-serif" fill="#a33">no valid runs</text>'
        )
        parts.append("</svg>")
        return "\n".join(parts)
    lo = min(0.0, min(flat))
    hi = max(0.0, max(flat))
    if hi - lo < 1e-12:
        hi = lo + 1.0

    def y_of(v: float) -> float:
        return margin_t + plot_h * (hi - v) / (hi - lo)

    baseline = y_of(0.0)
    n_groups = len(group_labels)
    n_series = len(series)
    slot = plot_w / n_groups
    bar_w = slot * 0.7 / n_series
    for si, (name, values) in enumerate(series.items()):
        colour = _PALETTE[si % len(_PALETTE)]
        lx = margin_l + si * 130
        parts.append(f'<rect x="{lx}" y="30" width="10" height="10" fill="{colour}"/>')
        parts.append(
            f'<text x="{lx + 14}" y="39" font-size="11" font-family="sans-serif">'
            f'{escape(name)}</text>'
        )
        for gi, value in enumerate(values):
            x = margin_l + gi * slot + slot * 0.15 + si * bar_w
            if value is None:
                continue
            top = min(y_of(value), baseline)
            h = abs(y_of(value) - baseline)
            parts.append(
                f'<rect x="{_fmt(x)}" y="{_fmt(top)}" width="{_fmt(bar_w * 0.9)}" '
                f'height="{_fmt(h)}" fill="{colour}"/>'
            )
    for gi, label in enumerate(group_labels):
        x = margin_l + gi * slot + slot / 2
        parts.append(
            f'<text x="{_fmt(x)}" y="{height - margin_b + 16}" text-anchor="middle" '
            f'font-size="11" font-family="sans-serif">{escape(label)}</text>'
        )
    parts.append(
        f'<line x1="{margin_l}" y1="{_fmt(baseline)}" x2="{width - 20}" '
        f'y2="{_fmt(baseline)}" stroke="#333" stroke-width="1"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts)
