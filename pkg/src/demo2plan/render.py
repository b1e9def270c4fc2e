"""Timeline bars: ground truth above, prediction below, free = red, held = green."""

from __future__ import annotations

from .core import OBJECT_HELD

FREE_COLOR = "#d62728"
HELD_COLOR = "#2ca02c"
FREE_CHAR = "."
HELD_CHAR = "#"


def runs(labels):
    """(start, length, held) for each maximal constant run."""
    out = []
    labels = list(labels)
    i = 0
    while i < len(labels):
        j = i
        while j + 1 < len(labels) and labels[j + 1] == labels[i]:
            j += 1
        out.append((i, j - i + 1, labels[i] == OBJECT_HELD))
        i = j + 1
    return out


def timeline_text(pred, gt=None):
    def bar(labels):
        return "".join(HELD_CHAR if v == OBJECT_HELD else FREE_CHAR for v in labels)

    lines = []
    if gt is not None:
        lines.append(f"gt   |{bar(gt)}|")
    lines.append(f"pred |{bar(pred)}|")
    return "\n".join(lines) + "\n"


def timeline_svg(pred, gt=None, px_per_frame=2.0, bar_height=24, title=None):
    bars = ([("ground truth", gt)] if gt is not None else []) + [("prediction", pred)]
    n = max(len(b[1]) for b in bars)
    left, top, gap = 100, 30 if title else 10, 10
    width = int(left + n * px_per_frame + 10)
    height = int(top + len(bars) * (bar_height + gap) + 10)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{left}" y="20" font-family="sans-serif" font-size="14">{_esc(title)}</text>')
    for row, (name, labels) in enumerate(bars):
        y = top + row * (bar_height + gap)
        out.append(
            f'<text x="5" y="{y + bar_height * 0.7:g}" font-family="sans-serif" font-size="12">{name}</text>'
        )
        for start, length, held in runs(labels):
            out.append(
                f'<rect x="{left + start * px_per_frame:g}" y="{y}" width="{length * px_per_frame:g}" '
                f'height="{bar_height}" fill="{HELD_COLOR if held else FREE_COLOR}"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
