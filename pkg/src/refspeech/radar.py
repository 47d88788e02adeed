"""Deterministic SVG radar charts of reference intervals.

Each chart draws one closed polygon per RI limit; everything else (mean
ring, confidence bands, class overlays, axes) is drawn with paths and
lines, so the polygon count is a direct check on the RI content.
"""

import math
from xml.sax.saxutils import escape

SIZE = 520
RADIUS = 180
MARGIN = 0.5

COLORS = {
    "mean": "#1b5e20",
    "ri": "#81c784",
    "ci": "#c8e6c9",
    "axis": "#bdbdbd",
    "overlays": ("#1565c0", "#c62828", "#6a1b9a", "#ef6c00"),
}


def _fmt(v):
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


class _Scale:
    def __init__(self, lo, hi, cx, cy):
        self.lo, self.hi, self.cx, self.cy = lo, hi, cx, cy

    def point(self, k, n, value):
        r = RADIUS * (min(max(value, self.lo), self.hi) - self.lo) / (self.hi - self.lo)
        angle = -math.pi / 2 + 2 * math.pi * k / n
        return self.cx + r * math.cos(angle), self.cy + r * math.sin(angle)

    def ring(self, values):
        n = len(values)
        return [self.point(k, n, v) for k, v in enumerate(values)]


def _points(pts):
    return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)


def _path(pts):
    return "M" + " L".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts) + " Z"


def _band(outer, inner):
    """Closed ring between two polygons (even-odd fill)."""
    return _path(outer) + " " + _path(list(reversed(inner)))


def chart(data, title, overlays=None, x0=0.0):
    """SVG group for one partition.

    ``data`` is the per-feature list from ``refstats.radar_data``;
    ``overlays`` maps a label to per-feature values on the same scale.
    """
    overlays = overlays or {}
    features = [d["feature"] for d in data]
    values = [0.0]
    for d in data:
        values += [d["ri_lo"], d["ri_hi"], *d["ci_lo"], *d["ci_hi"]]
    for ov in overlays.values():
        values += [v for v in ov if v is not None]
    lo, hi = min(values) - MARGIN, max(values) + MARGIN
    cx, cy = x0 + SIZE / 2, SIZE / 2 + 10
    sc = _Scale(lo, hi, cx, cy)
    n = len(features)
    out = [f'<g class="partition" data-title="{escape(title)}">',
           f'<text x="{_fmt(cx)}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for k, f in enumerate(features):
        x, y = sc.point(k, n, hi)
        out.append(f'<line class="axis" x1="{_fmt(cx)}" y1="{_fmt(cy)}" x2="{_fmt(x)}" '
                   f'y2="{_fmt(y)}" stroke="{COLORS["axis"]}" stroke-width="0.5"/>')
        lx, ly = sc.point(k, n, hi + (hi - lo) * 0.08)
        out.append(f'<text x="{_fmt(lx)}" y="{_fmt(ly)}" font-size="9" '
                   f'text-anchor="middle">{escape(f)}</text>')
    ci_lo = [sc.ring([d["ci_lo"][0] for d in data]), sc.ring([d["ci_lo"][1] for d in data])]
    ci_hi = [sc.ring([d["ci_hi"][0] for d in data]), sc.ring([d["ci_hi"][1] for d in data])]
    for name, (inner, outer) in (("ci-lower", ci_lo), ("ci-upper", ci_hi)):
        out.append(f'<path class="{name}" d="{_band(outer, inner)}" fill="{COLORS["ci"]}" '
                   'fill-opacity="0.6" fill-rule="evenodd" stroke="none"/>')
    for name, key in (("ri-lower", "ri_lo"), ("ri-upper", "ri_hi")):
        out.append(f'<polygon class="{name}" points="{_points(sc.ring([d[key] for d in data]))}" '
                   f'fill="none" stroke="{COLORS["ri"]}" stroke-width="1.5"/>')
    out.append(f'<path class="mean" d="{_path(sc.ring([d["mean"] for d in data]))}" fill="none" '
               f'stroke="{COLORS["mean"]}" stroke-width="2"/>')
    for i, (label, vals) in enumerate(sorted(overlays.items())):
        color = COLORS["overlays"][i % len(COLORS["overlays"])]
        pts = sc.ring([0.0 if v is None else v for v in vals])
        out.append(f'<path class="overlay" data-label="{escape(label)}" d="{_path(pts)}" '
                   f'fill="none" stroke="{color}" stroke-width="1.5" stroke-dasharray="4 2"/>')
        out.append(f'<text x="{_fmt(x0 + 10)}" y="{_fmt(SIZE - 10 - 14 * i)}" font-size="10" '
                   f'fill="{color}">{escape(label)}</text>')
    out.append("</g>")
    return out


def radar_svg(charts):
    """One SVG with a chart per (title, data, overlays) entry, side by side."""
    width = SIZE * max(len(charts), 1)
    body = []
    for i, (title, data, overlays) in enumerate(charts):
        body += chart(data, title, overlays, x0=i * SIZE)
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{SIZE + 20}" '
            f'viewBox="0 0 {width} {SIZE + 20}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n"
