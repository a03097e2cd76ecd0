"""Minimal standalone SVG heatmaps (no plotting runtime needed to view them)."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_BLUE = np.array([33, 102, 172])
_WHITE = np.array([247, 247, 247])
_RED = np.array([178, 24, 43])


def _color(t: float) -> str:
    """Diverging blue-white-red for t in [-1, 1]."""
    t = float(np.clip(t, -1.0, 1.0))
    end = _RED if t > 0 else _BLUE
    rgb = np.rint(_WHITE + abs(t) * (end - _WHITE)).astype(int)
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def heatmap(mat, row_labels=None, col_labels=None, title: str = "", scale: str = "corr",
            cell: int = 18) -> str:
    """Render ``mat`` as an SVG document.

    ``scale="corr"`` maps the fixed range [-1, 1]; ``scale="rows"`` uses a
    symmetric range per row (max absolute value of that row).
    """
    mat = np.asarray(mat, dtype=float)
    n, m = mat.shape
    left = 8 + 7 * max((len(str(l)) for l in row_labels), default=1) if row_labels is not None else 10
    top = 30 + (7 * max((len(str(l)) for l in col_labels), default=1) if col_labels is not None else 0)
    width, height = left + m * cell + 10, top + n * cell + 10
    if scale == "rows":
        denom = np.max(np.abs(mat), axis=1, keepdims=True)
        norm = mat / np.where(denom > 0, denom, 1.0)
    else:
        norm = mat
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="10">',
        f'<text x="{left}" y="14" font-size="12">{escape(title)}</text>',
    ]
    for i in range(n):
        for j in range(m):
            parts.append(
                f'<rect x="{left + j * cell}" y="{top + i * cell}" width="{cell}" height="{cell}" '
                f'fill="{_color(norm[i, j])}"><title>{mat[i, j]:.4g}</title></rect>'
            )
    if row_labels is not None:
        for i, lab in enumerate(row_labels):
            parts.append(f'<text x="{left - 4}" y="{top + i * cell + cell * 0.7:.1f}" '
                         f'text-anchor="end">{escape(str(lab))}</text>')
    if col_labels is not None:
        for j, lab in enumerate(col_labels):
            x, y = left + j * cell + cell * 0.7, top - 4
            parts.append(f'<text x="{x:.1f}" y="{y}" transform="rotate(-90 {x:.1f} {y})">{escape(str(lab))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
