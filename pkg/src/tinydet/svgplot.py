"""Self-contained deterministic SVG 1.1 line charts (no external assets,
no timestamps: identical input yields identical bytes)."""

from __future__ import annotations

from dataclasses import dataclass, field

W, H = 640, 420
MARGIN = 56
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


@dataclass
class Series:
    label: str
    x: list[float]
    y: list[float]


@dataclass
class RefLine:
    """Horizontal dashed annotation line (e.g. literature values)."""

    label: str
    y: float


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def render_svg(
    series: list[Series],
    *,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    ref_lines: list[RefLine] | None = None,
) -> str:
    if not series or any(not s.x for s in series):
        raise ValueError("every series must contain at least one point")
    xs = [v for s in series for v in s.x]
    ys = [v for s in series for v in s.y] + [r.y for r in (ref_lines or [])]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    # pad the y range so data never sits on the frame
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return MARGIN + (x - x0) / (x1 - x0) * (W - 2 * MARGIN)

    def py(y):
        return H - MARGIN - (y - y0) / (y1 - y0) * (H - 2 * MARGIN)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{W - 2 * MARGIN}" '
        f'height="{H - 2 * MARGIN}" fill="none" stroke="#333"/>',
    ]
    if title:
        out.append(
            f'<text x="{W // 2}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{title}</text>'
        )
    for tx in _ticks(x0, x1):
        out.append(
            f'<text x="{_fmt(px(tx))}" y="{H - MARGIN + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{_fmt(tx)}</text>'
        )
    for ty in _ticks(y0, y1):
        out.append(
            f'<text x="{MARGIN - 6}" y="{_fmt(py(ty) + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_fmt(ty)}</text>'
        )
    if xlabel:
        out.append(
            f'<text x="{W // 2}" y="{H - 10}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{xlabel}</text>'
        )
    if ylabel:
        out.append(
            f'<text x="14" y="{H // 2}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 14 {H // 2})">{ylabel}</text>'
        )
    for r in ref_lines or []:
        y = py(r.y)
        out.append(
            f'<line x1="{MARGIN}" y1="{_fmt(y)}" x2="{W - MARGIN}" y2="{_fmt(y)}" '
            f'stroke="#999" stroke-dasharray="4 3"/>'
        )
        out.append(
            f'<text x="{W - MARGIN - 4}" y="{_fmt(y - 3)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10" fill="#666">{r.label}</text>'
        )
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(s.x, s.y))
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        out.append(
            f'<text x="{MARGIN + 8}" y="{MARGIN + 16 + 14 * i}" '
            f'font-family="sans-serif" font-size="11" fill="{color}">{s.label}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg_plot(series: list[Series], path, **kw) -> None:
    with open(path, "w") as f:
        f.write(render_svg(series, **kw))
