"""Forest plot rendering as monospace text or a hand-written SVG."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .pooling import ForestData, ForestRow


def _axis(data: ForestData) -> tuple[float, float]:
    rows = [*data.rows, data.diamond]
    lo = min(min(r.ci_low for r in rows), 0.0)
    hi = max(max(r.ci_high for r in rows), 0.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def render_text(data: ForestData, width: int = 41) -> str:
    """Fixed-width forest plot.

    ``[`` and ``]`` mark the 95% interval, ``#`` the estimate, ``|`` the null
    line; the pooled row is drawn with ``<`` ``>`` and ``*``.
    """
    lo, hi = _axis(data)

    def pos(v: float) -> int:
        return min(width - 1, max(0, int(round((v - lo) / (hi - lo) * (width - 1)))))

    def bar(row: ForestRow, diamond: bool) -> str:
        cells = [" "] * width
        zero = pos(0.0)
        cells[zero] = "|"
        a, b = pos(row.ci_low), pos(row.ci_high)
        for i in range(a, b + 1):
            cells[i] = "-"
        cells[a], cells[b] = ("<", ">") if diamond else ("[", "]")
        cells[pos(row.estimate)] = "*" if diamond else "#"
        return "".join(cells)

    label_w = max(12, *(len(r.label) for r in [*data.rows, data.diamond]))
    head = f"{'Trial':<{label_w}}  {'Estimate':>9}  {'95% CI':^21}  {'Weight':>7}  "
    lines = []
    if data.title:
        lines.append(data.title)
    lines.append(head + f"{lo:<.3g}".ljust(width // 2) + f"{hi:.3g}".rjust(width - width // 2))
    lines.append("-" * (len(head) + width))
    for r in data.rows:
        ci = f"[{r.ci_low:8.3f}, {r.ci_high:8.3f}]"
        lines.append(f"{r.label:<{label_w}}  {r.estimate:9.3f}  {ci:^21}  {r.weight_pct:6.2f}%  {bar(r, False)}")
    lines.append("-" * (len(head) + width))
    d = data.diamond
    ci = f"[{d.ci_low:8.3f}, {d.ci_high:8.3f}]"
    lines.append(f"{d.label:<{label_w}}  {d.estimate:9.3f}  {ci:^21}  {d.weight_pct:6.2f}%  {bar(d, True)}")
    return "\n".join(lines) + "\n"


def _f(v: float) -> str:
    return f"{v:.2f}"


def square_sides(data: ForestData, max_side: float = 18.0) -> list[float]:
    """Marker side lengths, chosen so marker area is proportional to weight."""
    wmax = max(r.weight_pct for r in data.rows)
    return [max_side * math.sqrt(r.weight_pct / wmax) if wmax > 0 else 0.0 for r in data.rows]


def render_svg(data: ForestData) -> str:
    """Static SVG: weight-sized squares with CI whiskers and a pooled diamond."""
    row_h, top, left_w, plot_w, right_w = 28, 48, 220, 360, 200
    n_rows = len(data.rows) + 1
    height = top + row_h * (n_rows + 1) + 30
    width = left_w + plot_w + right_w
    lo, hi = _axis(data)

    def X(v: float) -> float:
        return left_w + (v - lo) / (hi - lo) * plot_w

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if data.title:
        out.append(f'<text x="10" y="20" font-size="14">{escape(data.title)}</text>')
    out.append(f'<text x="10" y="{top - 10}" font-weight="bold">Trial</text>')
    out.append(f'<text x="{left_w + plot_w + 10}" y="{top - 10}" font-weight="bold">Estimate [95% CI]  Weight</text>')
    y_end = top + row_h * n_rows
    out.append(f'<line x1="{_f(X(0.0))}" y1="{top - 4}" x2="{_f(X(0.0))}" y2="{y_end}" stroke="#888" stroke-dasharray="3,3"/>')

    for i, (r, side) in enumerate(zip(data.rows, square_sides(data))):
        cy = top + row_h * i + row_h / 2
        out.append(f'<text x="10" y="{_f(cy + 4)}">{escape(r.label)}</text>')
        out.append(f'<line x1="{_f(X(r.ci_low))}" y1="{_f(cy)}" x2="{_f(X(r.ci_high))}" y2="{_f(cy)}" stroke="black"/>')
        out.append(
            f'<rect class="trial" x="{_f(X(r.estimate) - side / 2)}" y="{_f(cy - side / 2)}" '
            f'width="{_f(side)}" height="{_f(side)}" fill="#1f4e79"/>'
        )
        out.append(
            f'<text x="{left_w + plot_w + 10}" y="{_f(cy + 4)}">'
            f"{r.estimate:.2f} [{r.ci_low:.2f}, {r.ci_high:.2f}]  {r.weight_pct:.1f}%</text>"
        )

    d = data.diamond
    cy = top + row_h * len(data.rows) + row_h / 2
    out.append(f'<line x1="{left_w}" y1="{_f(cy - row_h / 2)}" x2="{left_w + plot_w}" y2="{_f(cy - row_h / 2)}" stroke="#ccc"/>')
    out.append(f'<text x="10" y="{_f(cy + 4)}" font-weight="bold">{escape(d.label)}</text>')
    pts = f"{_f(X(d.ci_low))},{_f(cy)} {_f(X(d.estimate))},{_f(cy - 8)} {_f(X(d.ci_high))},{_f(cy)} {_f(X(d.estimate))},{_f(cy + 8)}"
    out.append(f'<polygon class="pooled" points="{pts}" fill="#c00000"/>')
    out.append(
        f'<text x="{left_w + plot_w + 10}" y="{_f(cy + 4)}" font-weight="bold">'
        f"{d.estimate:.2f} [{d.ci_low:.2f}, {d.ci_high:.2f}]  100%</text>"
    )

    axis_y = y_end + 10
    out.append(f'<line x1="{left_w}" y1="{axis_y}" x2="{left_w + plot_w}" y2="{axis_y}" stroke="black"/>')
    for v in (lo, 0.0, hi):
        out.append(f'<text x="{_f(X(v))}" y="{axis_y + 16}" text-anchor="middle">{v:.2f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
