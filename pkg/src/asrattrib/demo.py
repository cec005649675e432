"""Synthetic speech-like audio and the small demo classifier trained on it.

Each letter is rendered as a pair of steady tones (a crude formant pair),
space as faint noise and hyphen as a broadband burst. The result is not
speech, but it gives the classifier frame-level structure to learn so that
attributions are not explanations of noise.
"""

from __future__ import annotations

from importlib import resources
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .features import (FRAME_LENGTH, FRAME_STRIDE, SAMPLE_RATE, AudioClip,
                       compute_mfcc, frame_count, window_stack)
from .model import (CHARSET, Dense, ModelParams, char_index, init_model,
                    load_model, train_epoch)

SEGMENT_SAMPLES = 1600  # 100 ms per character
DEMO_TEXT = "it has been mentioned but the article is not mine"


def _formants(idx: int) -> Tuple[float, float]:
    return 250.0 + 45.0 * idx, 1300.0 + 210.0 * ((7 * idx) % 26)


def synthesize(text: str, seed: int = 0, segment: int = SEGMENT_SAMPLES,
               noise: float = 0.003) -> Tuple[AudioClip, List[str]]:
    """Render ``text`` and return the clip with one character label per MFCC frame."""
    rng = np.random.default_rng(seed)
    chunks = []
    t = np.arange(segment) / SAMPLE_RATE
    ramp = np.minimum(1.0, np.minimum(np.arange(segment), np.arange(segment)[::-1]) / 80.0)
    for ch in text:
        idx = char_index(ch)
        if ch == " ":
            sig = np.zeros(segment)
        elif ch == "-":
            sig = 0.15 * rng.uniform(-1.0, 1.0, segment)
        else:
            f1, f2 = _formants(idx)
            phase = rng.uniform(0, 2 * np.pi, 2)
            sig = 0.3 * np.sin(2 * np.pi * f1 * t + phase[0]) + 0.15 * np.sin(2 * np.pi * f2 * t + phase[1])
            sig *= ramp
        chunks.append(sig)
    samples = np.concatenate(chunks) if chunks else np.zeros(0)
    samples = samples + noise * rng.standard_normal(samples.size)
    samples = np.clip(samples, -1.0, 1.0)

    labels = []
    for i in range(frame_count(samples.size)):
        center = i * FRAME_STRIDE + FRAME_LENGTH // 2
        labels.append(text[min(center // segment, len(text) - 1)])
    return AudioClip(samples), labels


def random_text(rng: np.random.Generator, length: int) -> str:
    # letters dominate, with word breaks and the occasional hyphen
    weights = np.array([1.0] * 26 + [5.0, 0.6])
    picks = rng.choice(len(CHARSET), size=length, p=weights / weights.sum())
    return "".join(CHARSET[p] for p in picks)


def training_set(seed: int = 0, num_clips: int = 24, clip_chars: int = 40):
    rng = np.random.default_rng(seed)
    windows, labels = [], []
    for c in range(num_clips):
        clip, frame_labels = synthesize(random_text(rng, clip_chars), seed=seed * 1000 + c)
        windows.append(window_stack(compute_mfcc(clip).values))
        labels.extend(char_index(ch) for ch in frame_labels)
    return np.concatenate(windows), np.asarray(labels)


def fold_standardization(model: ModelParams, mean: np.ndarray, std: np.ndarray) -> ModelParams:
    """Absorb x -> (x - mean) / std into the first layer, keeping the model affine+ReLU on raw MFCCs."""
    first = model.layers[0]
    w = first.weight / std
    b = first.bias - w @ mean
    return ModelParams((Dense(w, b),) + model.layers[1:])


def train_demo_model(seed: int = 0, epochs: int = 8, learning_rate: float = 0.05,
                     hidden: Sequence[int] = (128, 128), log=None) -> ModelParams:
    windows, labels = training_set(seed)
    flat = windows.reshape(len(windows), -1)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std[std < 1e-6] = 1.0
    scaled = ((flat - mean) / std).reshape(windows.shape)

    model = init_model(hidden, seed=seed)
    for epoch in range(epochs):
        model, loss = train_epoch(model, scaled, labels, learning_rate, seed=seed + epoch)
        if log is not None:
            log(f"epoch {epoch}: loss {loss:.4f}")
    return fold_standardization(model, mean, std)


def demo_model_path():
    return resources.files("asrattrib") / "data" / "demo_model.json"


def demo_audio_path():
    return resources.files("asrattrib") / "data" / "demo.wav"


def load_demo_model() -> ModelParams:
    with resources.as_file(demo_model_path()) as path:
        return load_model(path)
