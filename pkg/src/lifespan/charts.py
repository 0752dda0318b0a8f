"""Reliability bar chart rendered as a standalone SVG string.

For each bucket two bars are drawn, the true MAE and the mean predicted
absolute error, with the bucket's sample count printed above the pair. The
renderer builds the SVG by hand with fixed-precision coordinates, so the
same report always produces byte-identical output.
"""

from __future__ import annotations

from .metrics import EvalReport

_WIDTH = 880
_HEIGHT = 440
_MARGIN_LEFT = 64
_MARGIN_RIGHT = 24
_MARGIN_TOP = 56
_MARGIN_BOTTOM = 72

_TRUE_COLOR = "#4878a8"
_PRED_COLOR = "#d0883c"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def render_bucket_chart(report: EvalReport, title: str = "Per-bucket error calibration") -> str:
    buckets = report.buckets
    plot_w = _WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = _HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM
    y_max = max([b.true_mae for b in buckets] + [b.predicted_mae for b in buckets] + [1e-9])
    y_max *= 1.15  # headroom so the tallest bar does not touch the frame

    def sx(i: int, frac: float) -> float:
        return _MARGIN_LEFT + plot_w * (i + frac) / len(buckets)

    def sy(value: float) -> float:
        return _MARGIN_TOP + plot_h * (1.0 - value / y_max)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_WIDTH} {_HEIGHT}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">'
        f'{_esc(title)}</text>',
    ]

    # y axis with five gridlines
    for tick in range(5 + 1):
        value = y_max * tick / 5
        y = sy(value)
        parts.append(f'<line x1="{_MARGIN_LEFT}" y1="{y:.1f}" '
                     f'x2="{_WIDTH - _MARGIN_RIGHT}" y2="{y:.1f}" '
                     f'stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{_MARGIN_LEFT - 8}" y="{y + 4:.1f}" '
                     f'text-anchor="end">{_fmt(value)}</text>')

    bar_frac = 0.36  # each bar's share of a bucket slot
    for i, b in enumerate(buckets):
        x_true = sx(i, 0.5 - bar_frac)
        x_pred = sx(i, 0.5)
        bar_w = plot_w / len(buckets) * bar_frac
        for x, value, color in ((x_true, b.true_mae, _TRUE_COLOR),
                                (x_pred, b.predicted_mae, _PRED_COLOR)):
            y = sy(value)
            h = _MARGIN_TOP + plot_h - y
            parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                         f'height="{h:.1f}" fill="{color}"/>')
        top = sy(max(b.true_mae, b.predicted_mae))
        parts.append(f'<text x="{sx(i, 0.5):.1f}" y="{top - 6:.1f}" '
                     f'text-anchor="middle" fill="#444444">{b.count}</text>')
        label = f"{b.lo:.0f}-{b.hi:.0f}"
        parts.append(f'<text x="{sx(i, 0.5):.1f}" y="{_HEIGHT - _MARGIN_BOTTOM + 18}" '
                     f'text-anchor="middle">{label}</text>')

    axis_y = _MARGIN_TOP + plot_h
    parts.append(f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP}" '
                 f'x2="{_MARGIN_LEFT}" y2="{axis_y}" stroke="#333333" stroke-width="1"/>')
    parts.append(f'<line x1="{_MARGIN_LEFT}" y1="{axis_y}" '
                 f'x2="{_WIDTH - _MARGIN_RIGHT}" y2="{axis_y}" '
                 f'stroke="#333333" stroke-width="1"/>')
    parts.append(f'<text x="{_WIDTH / 2:.1f}" y="{_HEIGHT - 16}" text-anchor="middle">'
                 f'bucket by {"true remaining lifespan" if report.bucketing_mode == "by_true_target" else "predicted mean"} (years)</text>')
    parts.append(f'<text x="18" y="{_MARGIN_TOP + plot_h / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 18 {_MARGIN_TOP + plot_h / 2:.1f})">'
                 f'absolute error (years)</text>')

    legend_x = _WIDTH - _MARGIN_RIGHT - 240
    for offset, label, color in ((0, "true MAE", _TRUE_COLOR),
                                 (90, "predicted abs error", _PRED_COLOR)):
        x = legend_x + offset
        parts.append(f'<rect x="{x}" y="26" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{x + 16}" y="36">{label}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_bucket_chart(report: EvalReport, path: str, title: str = "Per-bucket error calibration") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_bucket_chart(report, title=title))
