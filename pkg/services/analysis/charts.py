"""
Grouped bar chart of a change report as a static SVG document: one group per year,
one bar per class, heights proportional to fractions.
"""
from pathlib import Path
from typing import List, Union
from xml.sax.saxutils import escape, quoteattr

from config import CLASS_NAMES, DEFAULT_PALETTE
from services.analysis.change import ChangeReport

WIDTH, HEIGHT = 800, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 60, 160, 30, 40
PLOT_WIDTH = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
PLOT_HEIGHT = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
BASELINE = MARGIN_TOP + PLOT_HEIGHT
GROUP_FILL = 0.8


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _hex(rgb) -> str:
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def render_bars(report: ChangeReport, title: str = "Land cover distribution") -> str:
    years = report.years
    group_w = PLOT_WIDTH / max(len(years), 1)
    bar_w = group_w * GROUP_FILL / len(CLASS_NAMES)
    out: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for tick in range(0, 11, 2):
        y = BASELINE - PLOT_HEIGHT * tick / 10
        out.append(f'<line x1="{MARGIN_LEFT}" y1="{_fmt(y)}" x2="{MARGIN_LEFT + PLOT_WIDTH}" y2="{_fmt(y)}" stroke="#dddddd"/>')
        out.append(f'<text x="{MARGIN_LEFT - 6}" y="{_fmt(y + 4)}" text-anchor="end" font-size="10">{tick / 10:.1f}</text>')
    for g, dist in enumerate(report.distributions):
        x0 = MARGIN_LEFT + g * group_w + group_w * (1 - GROUP_FILL) / 2
        for k, name in enumerate(CLASS_NAMES):
            h = dist.fractions[k] * PLOT_HEIGHT
            out.append(
                f'<rect class="bar" data-year={quoteattr(years[g])} data-class="{name}" x="{_fmt(x0 + k * bar_w)}" '
                f'y="{_fmt(BASELINE - h)}" width="{_fmt(bar_w)}" height="{_fmt(h)}" fill="{_hex(DEFAULT_PALETTE[k])}"/>'
            )
        out.append(
            f'<text x="{_fmt(MARGIN_LEFT + (g + 0.5) * group_w)}" y="{BASELINE + 18}" text-anchor="middle" '
            f'font-size="12">{escape(years[g])}</text>'
        )
    out.append(f'<line x1="{MARGIN_LEFT}" y1="{BASELINE}" x2="{MARGIN_LEFT + PLOT_WIDTH}" y2="{BASELINE}" stroke="#000000"/>')
    out.append(f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{BASELINE}" stroke="#000000"/>')
    legend_x = WIDTH - MARGIN_RIGHT + 20
    for k, name in enumerate(CLASS_NAMES):
        y = MARGIN_TOP + 10 + k * 22
        out.append(f'<rect class="legend" x="{legend_x}" y="{y}" width="14" height="14" fill="{_hex(DEFAULT_PALETTE[k])}"/>')
        out.append(f'<text x="{legend_x + 20}" y="{y + 11}" font-size="12">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_bars_svg(report: ChangeReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_bars(report), encoding="utf-8")
    return path
