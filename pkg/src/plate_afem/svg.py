"""Minimal log-log convergence plots written directly as SVG."""
import math
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _log_range(values):
    vals = [v for v in values if v > 0 and math.isfinite(v)]
    lo, hi = math.floor(math.log10(min(vals))), math.ceil(math.log10(max(vals)))
    if lo == hi:
        hi += 1
    return lo, hi


def loglog_svg(series, slopes=(), title="", xlabel="ndof", width=640, height=480):
    """Return an SVG document plotting ``series`` on log-log axes.

    ``series`` is a list of ``(label, x, y)``.  ``slopes`` is a list of
    reference exponents; each is drawn as a dashed line ending just below
    the last point of the first series.
    """
    xs = [x for _, X, Y in series for x, y in zip(X, Y) if x > 0 and y > 0 and math.isfinite(y)]
    ys = [y for _, X, Y in series for x, y in zip(X, Y) if x > 0 and y > 0 and math.isfinite(y)]
    x0, x1 = _log_range(xs)
    y0, y1 = _log_range(ys)
    ml, mr, mt, mb = 70, 150, 40, 55
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + pw * (math.log10(x) - x0) / (x1 - x0)

    def py(y):
        return mt + ph * (1 - (math.log10(y) - y0) / (y1 - y0))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<clipPath id="plot"><rect x="{ml}" y="{mt}" width="{pw}" height="{ph}"/></clipPath>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="white" stroke="black"/>']
    for e in range(x0, x1 + 1):
        X = px(10.0 ** e)
        out.append(f'<line x1="{X:.2f}" y1="{mt}" x2="{X:.2f}" y2="{mt + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{X:.2f}" y="{mt + ph + 18}" text-anchor="middle">1e{e}</text>')
    for e in range(y0, y1 + 1):
        Y = py(10.0 ** e)
        out.append(f'<line x1="{ml}" y1="{Y:.2f}" x2="{ml + pw}" y2="{Y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 6}" y="{Y + 4:.2f}" text-anchor="end">1e{e}</text>')
    out.append(f'<text x="{ml + pw / 2:.2f}" y="{height - 12}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    if title:
        out.append(f'<text x="{ml + pw / 2:.2f}" y="{mt - 14}" text-anchor="middle">'
                   f'{escape(title)}</text>')
    legend_y = mt + 10
    for i, (label, X, Y) in enumerate(series):
        pts = [(px(x), py(y)) for x, y in zip(X, Y) if x > 0 and y > 0 and math.isfinite(y)]
        if not pts:
            continue
        c = COLORS[i % len(COLORS)]
        path = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        for a, b in pts:
            out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{c}"/>')
        out.append(f'<line x1="{ml + pw + 10}" y1="{legend_y}" x2="{ml + pw + 30}" '
                   f'y2="{legend_y}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{legend_y + 4}">{escape(label)}</text>')
        legend_y += 18
    if series and slopes:
        _, X, Y = series[0]
        good = [(x, y) for x, y in zip(X, Y) if x > 0 and y > 0 and math.isfinite(y)]
        if len(good) >= 2:
            (xa, _), (xb, yb) = good[0], good[-1]
            yb = yb / 2.0  # half a step below the last data point
            for s in slopes:
                ya = yb * (xa / xb) ** s
                out.append(f'<line x1="{px(xa):.2f}" y1="{py(ya):.2f}" x2="{px(xb):.2f}" '
                           f'y2="{py(yb):.2f}" stroke="gray" stroke-dasharray="5,4" '
                           f'clip-path="url(#plot)"/>')
                out.append(f'<line x1="{ml + pw + 10}" y1="{legend_y}" x2="{ml + pw + 30}" '
                           f'y2="{legend_y}" stroke="gray" stroke-dasharray="5,4"/>')
                out.append(f'<text x="{ml + pw + 35}" y="{legend_y + 4}">slope {s:g}</text>')
                legend_y += 18
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_loglog(path, series, **kwargs):
    with open(path, "w") as fh:
        fh.write(loglog_svg(series, **kwargs))
