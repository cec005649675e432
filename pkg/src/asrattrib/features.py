"""WAV ingestion, MFCC extraction and 19-frame context windows."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .errors import EmptyAudio, TooShort, UnsupportedFormat, UnsupportedSampleRate

SAMPLE_RATE = 16000
FRAME_LENGTH = 512  # 32 ms
FRAME_STRIDE = 320  # 20 ms
NUM_FILTERS = 40
NUM_CEPSTRA = 26
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-20

CONTEXT = 9
WINDOW_ROWS = 2 * CONTEXT + 1
CENTER_ROW = CONTEXT


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise EmptyAudio("audio clip needs at least one sample")
        if np.any(np.abs(samples) > 1.0) or not np.all(np.isfinite(samples)):
            raise ValueError("samples must lie in [-1, 1]")
        if self.sample_rate != SAMPLE_RATE:
            raise UnsupportedSampleRate(f"expected {SAMPLE_RATE} Hz, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MfccMatrix:
    values: np.ndarray
    frame_length_ms: int = 32
    frame_stride_ms: int = 20

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != NUM_CEPSTRA or values.shape[0] < 1:
            raise ValueError(f"MFCC matrix must be (N>=1, {NUM_CEPSTRA}), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("MFCC matrix has non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FrameWindow:
    values: np.ndarray
    center_index: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (WINDOW_ROWS, NUM_CEPSTRA):
            raise ValueError(f"window must be ({WINDOW_ROWS}, {NUM_CEPSTRA}), got {values.shape}")
        object.__setattr__(self, "values", values)


def read_wav(path) -> AudioClip:
    """Load a mono 16-bit PCM 16 kHz WAV file, scaled by 1/32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    if channels != 1:
        raise UnsupportedFormat(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise UnsupportedFormat(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise UnsupportedSampleRate(f"{path}: expected {SAMPLE_RATE} Hz, got {rate}")
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise EmptyAudio(f"{path}: no samples in data chunk")
    return AudioClip(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    """Write mono 16-bit PCM. Samples are clipped to [-1, 1) before quantisation."""
    samples = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_filters: int = NUM_FILTERS, n_fft: int = FRAME_LENGTH,
                   sample_rate: int = SAMPLE_RATE, low_hz: float = 0.0,
                   high_hz: float = SAMPLE_RATE / 2) -> np.ndarray:
    """Triangular filters evenly spaced on the HTK mel scale.

    Weights are evaluated at the exact FFT bin frequencies rather than
    snapping edges to bins, so narrow low-frequency filters never vanish.
    Returns a (num_filters, n_fft // 2 + 1) matrix.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), num_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - left) / (center - left)
    falling = (right - freqs) / (right - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _dct_basis(n_in: int, n_out: int) -> np.ndarray:
    n = np.arange(n_in)
    k = np.arange(n_out)[:, None]
    basis = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    basis[0] = np.sqrt(1.0 / n_in)
    return basis


def dct_ortho(x: np.ndarray, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II along the last axis, truncated to n_out coefficients.

    The transform is applied to x - x[..., :1] and the anchor is added back
    through coefficient 0 only. Rows k >= 1 of the basis sum to zero, so this
    is the same transform, but a constant input yields exactly zero in every
    coefficient except the first.
    """
    x = np.asarray(x, dtype=np.float64)
    n_in = x.shape[-1]
    anchor = x[..., :1]
    out = (x - anchor) @ _dct_basis(n_in, n_out).T
    out[..., 0] += anchor[..., 0] * np.sqrt(n_in)
    return out


def frame_count(num_samples: int) -> int:
    if num_samples < FRAME_LENGTH:
        return 0
    return 1 + (num_samples - FRAME_LENGTH) // FRAME_STRIDE


def compute_mfcc(clip: AudioClip) -> MfccMatrix:
    """26 MFCCs per 32 ms frame with a 20 ms hop.

    Pipeline: pre-emphasis 0.97, periodic Hann window, |rfft|^2 / 512,
    40 mel filters over 0-8 kHz, log(energy + 1e-20), orthonormal DCT-II.
    """
    x = clip.samples
    if x.size < FRAME_LENGTH:
        raise TooShort(f"need at least {FRAME_LENGTH} samples, got {x.size}")
    emphasized = np.concatenate([x[:1], x[1:] - PREEMPHASIS * x[:-1]])
    n = frame_count(x.size)
    idx = np.arange(FRAME_LENGTH)[None, :] + FRAME_STRIDE * np.arange(n)[:, None]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(FRAME_LENGTH) / FRAME_LENGTH)
    frames = emphasized[idx] * window
    power = np.abs(np.fft.rfft(frames, FRAME_LENGTH, axis=1)) ** 2 / FRAME_LENGTH
    energies = power @ mel_filterbank().T
    log_energies = np.log(energies + LOG_FLOOR)
    return MfccMatrix(dct_ortho(log_energies, NUM_CEPSTRA))


def make_windows(mfcc: MfccMatrix) -> List[FrameWindow]:
    """One zero-padded 19x26 window per frame, centred on row 9."""
    stack = window_stack(mfcc.values)
    return [FrameWindow(stack[i], i) for i in range(stack.shape[0])]


def window_stack(values: np.ndarray) -> np.ndarray:
    """Array form of make_windows: (N, 26) -> (N, 19, 26)."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    padded = np.zeros((n + 2 * CONTEXT, values.shape[1]))
    padded[CONTEXT:CONTEXT + n] = values
    idx = np.arange(n)[:, None] + np.arange(WINDOW_ROWS)[None, :]
    return padded[idx]


def stack_windows(windows: Sequence[FrameWindow]) -> np.ndarray:
    return np.stack([w.values for w in windows]) if windows else np.zeros((0, WINDOW_ROWS, NUM_CEPSTRA))


def export_mfcc_csv(mfcc: MfccMatrix, path) -> None:
    from .render import export_csv

    export_csv(mfcc.values, path)
