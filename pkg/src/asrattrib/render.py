"""Deterministic SVG heatmaps and CSV export for (N, 26) matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

from .errors import LabelLengthMismatch, NonPositiveClip
from .features import NUM_CEPSTRA

MARGIN_LEFT = 36
MARGIN_TOP = 8
MARGIN_RIGHT = 8
MARGIN_BOTTOM = 28


@dataclass(frozen=True)
class RenderSpec:
    cell_width_px: int = 4
    cell_height_px: int = 10
    clip_percentile: float = 99.0

    def __post_init__(self):
        if not 50.0 < self.clip_percentile <= 100.0:
            raise ValueError("clip_percentile must lie in (50, 100]")
        if int(self.cell_width_px) < 1 or int(self.cell_height_px) < 1:
            raise ValueError("cell sizes must be positive")


@dataclass(frozen=True)
class Heatmap:
    svg_bytes: bytes
    value_range_used: Tuple[float, float]

    def save(self, path) -> None:
        Path(path).write_bytes(self.svg_bytes)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def color_of(value: float, clip: float) -> Tuple[int, int, int]:
    """Diverging blue-white-red colour; +clip is red, -clip is blue."""
    if not clip > 0:
        raise NonPositiveClip(f"clip must be positive, got {clip}")
    v = min(max(float(value), -clip), clip) / clip
    # computed from |v| so that negating the value only swaps red and blue
    fade = _round_half_up(255.0 * (1.0 - abs(v)))
    if v >= 0:
        return (255, fade, fade)
    return (fade, fade, 255)


def hex_color(rgb: Tuple[int, int, int]) -> str:
    return "#{:02X}{:02X}{:02X}".format(*rgb)


def clip_value(matrix: np.ndarray, percentile: float) -> float:
    """Linear-interpolation percentile of |entries|; 1.0 when that is zero."""
    mags = np.abs(np.asarray(matrix, dtype=np.float64)).ravel()
    clip = float(np.percentile(mags, percentile)) if mags.size else 0.0
    return clip if clip > 0 else 1.0


def render_heatmap(matrix, spec: RenderSpec = RenderSpec(),
                   labels: Optional[Sequence[str]] = None, title: Optional[str] = None) -> Heatmap:
    """Frames along x, MFCC bins along y (bin 0 at the bottom), labels under the axis."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != NUM_CEPSTRA:
        raise ValueError(f"expected (N, {NUM_CEPSTRA}) matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    n = m.shape[0]
    if labels is not None and len(labels) != n:
        raise LabelLengthMismatch(f"{len(labels)} labels for {n} frames")

    clip = clip_value(m, spec.clip_percentile)
    cw, ch = int(spec.cell_width_px), int(spec.cell_height_px)
    plot_w, plot_h = n * cw, NUM_CEPSTRA * ch
    width = MARGIN_LEFT + plot_w + MARGIN_RIGHT
    height = MARGIN_TOP + plot_h + MARGIN_BOTTOM

    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        '<!DOCTYPE svg PUBLIC "-//W3C//DTD SVG 1.1//EN" "http://www.w3.org/Graphics/SVG/1.1/DTD/svg11.dtd">',
        f'<svg version="1.1" xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    if title:
        out.append(f"<title>{escape(title)}</title>")
    out.append(f"<desc>clip={clip!r}</desc>")
    out.append('<g shape-rendering="crispEdges">')
    for i in range(n):
        x = MARGIN_LEFT + i * cw
        for k in range(NUM_CEPSTRA):
            y = MARGIN_TOP + (NUM_CEPSTRA - 1 - k) * ch
            fill = hex_color(color_of(m[i, k], clip))
            out.append(f'<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}"/>')
    out.append("</g>")

    axis_y = MARGIN_TOP + plot_h
    out.append(f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" '
               'fill="none" stroke="#000000" stroke-width="1"/>')
    out.append('<g font-family="monospace" font-size="8" fill="#000000">')
    for k in range(0, NUM_CEPSTRA, 5):
        y = MARGIN_TOP + (NUM_CEPSTRA - 1 - k) * ch + ch - 1
        out.append(f'<text x="{MARGIN_LEFT - 4}" y="{y}" text-anchor="end">{k}</text>')
    if labels is not None:
        for i, label in enumerate(labels):
            x = MARGIN_LEFT + i * cw + cw // 2
            text = "_" if label == " " else escape(str(label))
            out.append(f'<text x="{x}" y="{axis_y + 10}" text-anchor="middle">{text}</text>')
    out.append(f'<text x="{MARGIN_LEFT + plot_w // 2}" y="{axis_y + 22}" text-anchor="middle">frame</text>')
    out.append("</g>")
    out.append("</svg>")
    return Heatmap(("\n".join(out) + "\n").encode("utf-8"), (-clip, clip))


def export_csv(matrix, path) -> None:
    """Header ``frame,mfcc_0..mfcc_25`` then one row per frame, 9 significant digits."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != NUM_CEPSTRA:
        raise ValueError(f"expected (N, {NUM_CEPSTRA}) matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    lines = [",".join(["frame"] + [f"mfcc_{k}" for k in range(NUM_CEPSTRA)])]
    for i, row in enumerate(m):
        lines.append(f"{i}," + ",".join(format(v, ".9g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path) -> np.ndarray:
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    return np.array([[float(v) for v in row.split(",")[1:]] for row in rows if row]).reshape(-1, NUM_CEPSTRA)
