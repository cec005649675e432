"""Display aggregations of (N, 19, 26) attribution tensors and summary statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import IndexOutOfRange, ShapeMismatch
from .features import CENTER_ROW, CONTEXT, NUM_CEPSTRA, WINDOW_ROWS

DEFAULT_HEAD_FRAMES = 10


@dataclass(frozen=True)
class AggregatedAttribution:
    values: np.ndarray
    mode: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != NUM_CEPSTRA:
            raise ShapeMismatch(f"aggregated attribution must be (N, {NUM_CEPSTRA}), got {values.shape}")
        object.__setattr__(self, "values", values)


def _values(tensor) -> np.ndarray:
    values = np.asarray(getattr(tensor, "values", tensor), dtype=np.float64)
    if values.ndim != 3 or values.shape[1:] != (WINDOW_ROWS, NUM_CEPSTRA):
        raise ShapeMismatch(f"expected (N, {WINDOW_ROWS}, {NUM_CEPSTRA}), got {values.shape}")
    return values


def valid_rows(n: int) -> np.ndarray:
    """(N, 19) mask, True where window row j refers to a frame inside [0, N)."""
    frame = np.arange(n)[:, None] + np.arange(WINDOW_ROWS)[None, :] - CONTEXT
    return (frame >= 0) & (frame < n)


def slice_relative_frame(tensor, j: int) -> AggregatedAttribution:
    """Attribution of relative row j in every window; j = 9 is the centre frame."""
    if not 0 <= j < WINDOW_ROWS:
        raise IndexOutOfRange(f"relative frame {j} outside [0, {WINDOW_ROWS})")
    return AggregatedAttribution(_values(tensor)[:, j, :].copy(), f"relative_frame({j})")


def sum_per_frame(tensor) -> AggregatedAttribution:
    """Total influence of each frame over all windows that contain it.

    Frame i sits at row i - w + 9 of window w, for w within 9 of i. Entries
    in zero-padded rows belong to no frame and are not counted, so the total
    mass equals the tensor's only when those entries are zero.
    """
    a = _values(tensor)
    n = a.shape[0]
    out = np.zeros((n, NUM_CEPSTRA))
    for j in range(WINDOW_ROWS):
        # window w holds frame w + j - 9 at row j
        shift = j - CONTEXT
        lo, hi = max(0, -shift), min(n, n - shift)
        if lo < hi:
            out[lo + shift:hi + shift] += a[lo:hi, j, :]
    return AggregatedAttribution(out, "summed_per_frame")


def sum_per_window(tensor) -> AggregatedAttribution:
    return AggregatedAttribution(_values(tensor).sum(axis=1), "summed_per_window")


def aggregate(tensor, display: str) -> AggregatedAttribution:
    """Dispatch on a display name: ``per-frame``, ``per-window`` or ``relative:<j>``."""
    if display == "per-frame":
        return sum_per_frame(tensor)
    if display == "per-window":
        return sum_per_window(tensor)
    if display.startswith("relative:"):
        return slice_relative_frame(tensor, int(display.split(":", 1)[1]))
    raise ValueError(f"unknown display {display!r}")


@dataclass(frozen=True)
class AttributionStats:
    per_bin_mean_magnitude: np.ndarray
    per_position_mean_magnitude: np.ndarray
    head_energy_fraction: float
    head_frames: int
    num_frames: int

    def to_dict(self) -> dict:
        return {
            "per_bin_mean_magnitude": [float(v) for v in self.per_bin_mean_magnitude],
            "per_position_mean_magnitude": [float(v) for v in self.per_position_mean_magnitude],
            "head_energy_fraction": float(self.head_energy_fraction),
            "head_frames": int(self.head_frames),
            "num_frames": int(self.num_frames),
        }


def attribution_stats(agg_or_tensor: Union[np.ndarray, AggregatedAttribution, object],
                      k: int = DEFAULT_HEAD_FRAMES) -> AttributionStats:
    """Mean magnitudes per MFCC bin and per window row, and the head energy share.

    A 2-D (N, 26) aggregate is treated as a tensor with a single row per window.
    """
    values = np.asarray(getattr(agg_or_tensor, "values", agg_or_tensor), dtype=np.float64)
    if values.ndim == 2:
        values = values[:, None, :]
    if values.ndim != 3 or values.shape[2] != NUM_CEPSTRA:
        raise ShapeMismatch(f"cannot summarise array of shape {values.shape}")
    n = values.shape[0]
    if not 0 <= k <= n:
        raise IndexOutOfRange(f"head frame count {k} outside [0, {n}]")
    mag = np.abs(values)
    total = mag.sum()
    head = mag[:k].sum()
    return AttributionStats(
        per_bin_mean_magnitude=mag.mean(axis=(0, 1)) if n else np.zeros(NUM_CEPSTRA),
        per_position_mean_magnitude=mag.mean(axis=(0, 2)) if n else np.zeros(values.shape[1]),
        head_energy_fraction=float(head / total) if total > 0 else 0.0,
        head_frames=int(k),
        num_frames=int(n),
    )


@dataclass(frozen=True)
class StatsDifference:
    per_bin_mean_magnitude: np.ndarray
    per_position_mean_magnitude: np.ndarray
    head_energy_fraction: float
    head_frames: int

    def to_dict(self) -> dict:
        return {
            "per_bin_mean_magnitude": [float(v) for v in self.per_bin_mean_magnitude],
            "per_position_mean_magnitude": [float(v) for v in self.per_position_mean_magnitude],
            "head_energy_fraction": float(self.head_energy_fraction),
            "head_frames": int(self.head_frames),
        }


def compare_stats(a: AttributionStats, b: AttributionStats) -> StatsDifference:
    """Componentwise a - b."""
    if (a.per_bin_mean_magnitude.shape != b.per_bin_mean_magnitude.shape
            or a.per_position_mean_magnitude.shape != b.per_position_mean_magnitude.shape):
        raise ShapeMismatch("statistics were computed over differently shaped attributions")
    if a.num_frames != b.num_frames:
        raise ShapeMismatch(f"frame counts differ ({a.num_frames} vs {b.num_frames})")
    if a.head_frames != b.head_frames:
        raise ShapeMismatch(f"head frame counts differ ({a.head_frames} vs {b.head_frames})")
    return StatsDifference(
        a.per_bin_mean_magnitude - b.per_bin_mean_magnitude,
        a.per_position_mean_magnitude - b.per_position_mean_magnitude,
        a.head_energy_fraction - b.head_energy_fraction,
        a.head_frames,
    )


def save_aggregate_json(agg: AggregatedAttribution, path) -> None:
    doc = {"mode": agg.mode, "shape": list(agg.values.shape),
           "values": [float(format(v, ".17g")) for v in agg.values.ravel()]}
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")
