"""Hand-rolled SVG and CSV emitters (deterministic bytes, no plot library)."""

from __future__ import annotations

import csv


def write_csv(path: str, header: list[str], rows: list[list]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _fmt(v: float) -> str:
    return "%.2f" % v


def write_table_text(path: str, header: list[str], rows: list[list]):
    """Aligned plain-text table."""
    str_rows = [[str(c) for c in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in str_rows)) if str_rows else len(h) for i, h in enumerate(header)]
    lines = []
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in str_rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_curve_svg(path: str, xs, means, stds, title: str, xlabel: str, ylabel: str):
    """Line plot with a shaded +-1 std band."""
    w, h, pad = 640, 400, 60
    x_min, x_max = min(xs), max(xs)
    lo = min(m - s for m, s in zip(means, stds))
    hi = max(m + s for m, s in zip(means, stds))
    span_y = (hi - lo) or 1.0
    span_x = (x_max - x_min) or 1.0

    def px(x):
        return pad + (x - x_min) / span_x * (w - 2 * pad)

    def py(y):
        return h - pad - (y - lo) / span_y * (h - 2 * pad)

    band_pts = [f"{px(x):.1f},{py(m + s):.1f}" for x, m, s in zip(xs, means, stds)]
    band_pts += [f"{px(x):.1f},{py(m - s):.1f}" for x, m, s in zip(reversed(xs), reversed(means), reversed(stds))]
    line_pts = " ".join(f"{px(x):.1f},{py(m):.1f}" for x, m in zip(xs, means))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<polygon points="{" ".join(band_pts)}" fill="#9ecae1" opacity="0.5"/>',
        f'<polyline points="{line_pts}" fill="none" stroke="#3182bd" stroke-width="2"/>',
    ]
    for x, m in zip(xs, means):
        parts.append(f'<circle cx="{px(x):.1f}" cy="{py(m):.1f}" r="3" fill="#08519c"/>')
    parts.append(f'<line x1="{pad}" y1="{h-pad}" x2="{w-pad}" y2="{h-pad}" stroke="black"/>')
    parts.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h-pad}" stroke="black"/>')
    for x in xs:
        parts.append(f'<text x="{px(x):.1f}" y="{h-pad+18}" font-size="11" text-anchor="middle">{x}</text>')
    for frac in (0.0, 0.5, 1.0):
        y = lo + frac * span_y
        parts.append(f'<text x="{pad-8}" y="{py(y):.1f}" font-size="11" text-anchor="end">{_fmt(y)}</text>')
    parts.append(f'<text x="{w/2:.0f}" y="24" font-size="14" text-anchor="middle">{title}</text>')
    parts.append(f'<text x="{w/2:.0f}" y="{h-12}" font-size="12" text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="16" y="{h/2:.0f}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {h/2:.0f})">{ylabel}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def write_heatmap_svg(path: str, matrix, row_labels: list[str], col_labels: list[str], title: str):
    """Attention heatmap: rows = objects, columns = question tokens."""
    cell = 48
    left, top = 140, 70
    rows = len(row_labels)
    cols = len(col_labels)
    w = left + cols * cell + 20
    h = top + rows * cell + 20
    vmax = max((max(r) for r in matrix), default=1.0) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w/2:.0f}" y="24" font-size="14" text-anchor="middle">{title}</text>',
    ]
    for j, lab in enumerate(col_labels):
        parts.append(
            f'<text x="{left + j*cell + cell/2:.0f}" y="{top-10}" font-size="11" text-anchor="middle">{lab}</text>'
        )
    for i, lab in enumerate(row_labels):
        parts.append(
            f'<text x="{left-8}" y="{top + i*cell + cell/2 + 4:.0f}" font-size="11" text-anchor="end">{lab}</text>'
        )
        for j in range(cols):
            v = matrix[i][j] / vmax
            shade = int(255 - 215 * v)
            parts.append(
                f'<rect x="{left + j*cell}" y="{top + i*cell}" width="{cell}" height="{cell}" '
                f'fill="rgb({shade},{shade},255)" stroke="#ccc"/>'
            )
            parts.append(
                f'<text x="{left + j*cell + cell/2:.0f}" y="{top + i*cell + cell/2 + 4:.0f}" '
                f'font-size="10" text-anchor="middle">{matrix[i][j]:.2f}</text>'
            )
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")
