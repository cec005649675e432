"""Per-window attributions: saliency, epsilon-LRP and sampled Shapley values.

All three explain a single target logit of a ``ModelParams`` network for a
19x26 window. ``exact_shapley`` enumerates every coalition and is kept as the
reference the sampler is checked against.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (DimensionMismatch, EmptyInput, ParseError, TooManyFeatures,
                     UnsupportedLayer)
from .features import NUM_CEPSTRA, WINDOW_ROWS
from .model import (CHARSET, INPUT_DIM, Dense, ModelParams, _check_target,
                    _flatten, forward_trace, input_gradient, logits_batch)

METHODS = ("saliency", "lrp", "shap")
NUM_FEATURES = INPUT_DIM
DIVISION_GUARD = 1e-12
MAX_EXACT_FEATURES = 20
NON_LETTERS = (CHARSET.index(" "), CHARSET.index("-"))

_SHAP_CHUNK = 64


@dataclass(frozen=True)
class LrpConfig:
    epsilon: float = 1e-4

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")


@dataclass(frozen=True)
class BackgroundSample:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (WINDOW_ROWS, NUM_CEPSTRA):
            raise DimensionMismatch(f"background must be ({WINDOW_ROWS}, {NUM_CEPSTRA}), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("background has non-finite entries")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls) -> "BackgroundSample":
        return cls(np.zeros((WINDOW_ROWS, NUM_CEPSTRA)))


@dataclass(frozen=True)
class ShapConfig:
    num_permutations: int = 2000
    seed: int = 0
    background: BackgroundSample = field(default_factory=BackgroundSample.zeros)

    def __post_init__(self):
        if int(self.num_permutations) < 1:
            raise ValueError("num_permutations must be at least 1")


@dataclass
class AttributionTensor:
    values: np.ndarray
    method: str
    targets: np.ndarray
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.values.ndim != 3 or self.values.shape[1:] != (WINDOW_ROWS, NUM_CEPSTRA):
            raise DimensionMismatch(f"attribution tensor must be (N, {WINDOW_ROWS}, {NUM_CEPSTRA}), got {self.values.shape}")
        if self.targets.shape != (self.values.shape[0],):
            raise DimensionMismatch("one target per window required")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def num_windows(self) -> int:
        return self.values.shape[0]


# --- saliency -------------------------------------------------------------

def compute_saliency(model: ModelParams, window, target: int) -> np.ndarray:
    return np.abs(input_gradient(model, window, target))


# --- epsilon-LRP ----------------------------------------------------------

def lrp_relevances(model: ModelParams, window, target: int, config: LrpConfig = LrpConfig(),
                   *, denominator_shift: float = 0.0) -> list:
    """Relevance vectors for every layer, input first and output last.

    ``denominator_shift`` perturbs every stabilised denominator; it exists so
    the verification suite can prove that it detects a broken rule.
    """
    target = _check_target(target)
    for layer in model.layers:
        if not isinstance(layer, Dense):
            raise UnsupportedLayer(f"cannot propagate relevance through {type(layer).__name__}")
    trace = forward_trace(model, window)
    relevance = np.zeros_like(trace.logits)
    relevance[target] = trace.logits[target]
    stack = [relevance]
    scale = 1.0 + config.epsilon
    for l in range(model.depth - 1, -1, -1):
        layer = model.layers[l]
        z = layer.weight * trace.activations[l]
        total = z.sum(axis=1) + layer.bias
        live = np.abs(total) >= DIVISION_GUARD
        ratio = np.zeros_like(total)
        ratio[live] = relevance[live] / (scale * total[live] + denominator_shift)
        relevance = ratio @ z
        stack.append(relevance)
    return stack[::-1]


def compute_lrp(model: ModelParams, window, target: int, config: LrpConfig = LrpConfig()) -> np.ndarray:
    return lrp_relevances(model, window, target, config)[0].reshape(WINDOW_ROWS, NUM_CEPSTRA)


# --- Shapley values -------------------------------------------------------

def build_background(windows) -> BackgroundSample:
    """Elementwise lower median of a set of windows."""
    stack = [np.asarray(getattr(w, "values", w), dtype=np.float64) for w in windows]
    if not stack:
        raise EmptyInput("background needs at least one window")
    ordered = np.sort(np.stack(stack), axis=0)
    return BackgroundSample(ordered[(len(stack) - 1) // 2])


def letter_windows(model: ModelParams, windows: np.ndarray) -> np.ndarray:
    """Windows whose predicted character is neither space nor hyphen.

    Falls back to all windows when the model predicts no letters at all.
    """
    windows = np.asarray(windows, dtype=np.float64)
    pred = np.argmax(logits_batch(model, windows), axis=1)
    mask = ~np.isin(pred, NON_LETTERS)
    return windows[mask] if mask.any() else windows


@dataclass
class ShapEstimate:
    values: np.ndarray
    stderr: np.ndarray
    num_permutations: int


def _draw_orders(rng: np.random.Generator, num_permutations: int, num_features: int,
                 active: np.ndarray) -> np.ndarray:
    """Uniform permutations of all features, restricted to the active ones.

    Filtering keeps the relative order, so the induced order on the active
    features is itself uniform.
    """
    perms = rng.permuted(np.tile(np.arange(num_features), (num_permutations, 1)), axis=1)
    keep = np.zeros(num_features, dtype=bool)
    keep[active] = True
    return perms[keep[perms]].reshape(num_permutations, active.size)


def _marginals(orders: np.ndarray, walk_values: np.ndarray, num_features: int) -> np.ndarray:
    """Scatter walk increments back to feature positions, one row per permutation."""
    per_feature = np.zeros((orders.shape[0], num_features))
    per_feature[np.arange(orders.shape[0])[:, None], orders] = np.diff(walk_values, axis=1)
    return per_feature


def _finish(marginals: list, shape) -> ShapEstimate:
    samples = np.concatenate(marginals)
    m = samples.shape[0]
    mean = samples.mean(axis=0)
    if m > 1:
        stderr = samples.std(axis=0, ddof=1) / np.sqrt(m)
    else:
        stderr = np.full_like(mean, np.nan)
    return ShapEstimate(mean.reshape(shape), stderr.reshape(shape), m)


def sample_shapley(value_fn: Callable[[np.ndarray], np.ndarray], x, background,
                   num_permutations: int, seed: int) -> ShapEstimate:
    """Permutation-sampling Shapley estimate for an arbitrary batched game.

    ``value_fn`` maps a (B, F) array of hybrid inputs (features from ``x``
    inside the coalition, from ``background`` outside) to B scalar payoffs.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    bg = np.asarray(background, dtype=np.float64).ravel()
    if x.shape != bg.shape:
        raise DimensionMismatch("input and background differ in size")
    f = x.size
    rng = np.random.default_rng(seed)
    active = np.flatnonzero(x != bg)
    orders = _draw_orders(rng, num_permutations, f, active)
    marginals = []
    for start in range(0, num_permutations, _SHAP_CHUNK):
        chunk = orders[start:start + _SHAP_CHUNK]
        b, a = chunk.shape
        rank = np.full((b, f), a + 1)
        rank[np.arange(b)[:, None], chunk] = np.arange(a)
        # hybrid t of a walk holds the first t features of its order
        included = rank[:, None, :] < np.arange(a + 1)[None, :, None]
        hybrids = np.where(included, x, bg)
        walk = np.asarray(value_fn(hybrids.reshape(-1, f)), dtype=np.float64).reshape(b, a + 1)
        marginals.append(_marginals(chunk, walk, f))
    return _finish(marginals, x.shape)


def _model_walks(model: ModelParams, target: int, x: np.ndarray, bg: np.ndarray,
                 orders: np.ndarray, z_background: np.ndarray) -> np.ndarray:
    """Target logit along each permutation walk from background to input.

    Consecutive hybrids differ in a single feature, so the first layer's
    pre-activations are built by cumulative column updates instead of a
    full matrix product per hybrid.
    """
    first = model.layers[0]
    b, a = orders.shape
    steps = first.weight.T[orders] * (x - bg)[orders][..., None]
    z = np.empty((b, a + 1, first.shape[0]))
    z[:, 0] = z_background
    z[:, 1:] = z_background + np.cumsum(steps, axis=1)
    h = z.reshape(b * (a + 1), -1)
    if model.depth == 1:
        return h[:, target].reshape(b, a + 1)
    for layer in model.layers[1:-1]:
        h = np.maximum(h, 0.0) @ layer.weight.T + layer.bias
    out = model.layers[-1]
    return (np.maximum(h, 0.0) @ out.weight[target] + out.bias[target]).reshape(b, a + 1)


def shap_estimate(model: ModelParams, window, target: int, config: ShapConfig = ShapConfig(),
                  window_index: int = 0) -> ShapEstimate:
    """Monte-Carlo Shapley values of the target logit, with standard errors.

    Features outside the coalition take the background value. Features whose
    input equals the background have identically zero marginals and are
    skipped in the walk; they still take part in the permutation draw, so the
    result does not depend on that shortcut. The generator is seeded with
    ``config.seed ^ window_index``.
    """
    target = _check_target(target)
    x = _flatten(window)
    bg = config.background.values.reshape(-1)
    m = int(config.num_permutations)
    rng = np.random.default_rng(int(config.seed) ^ int(window_index))
    active = np.flatnonzero(x != bg)
    orders = _draw_orders(rng, m, NUM_FEATURES, active)
    first = model.layers[0]
    z_background = first.weight @ bg + first.bias
    marginals = []
    for start in range(0, m, _SHAP_CHUNK):
        chunk = orders[start:start + _SHAP_CHUNK]
        walk = _model_walks(model, target, x, bg, chunk, z_background)
        marginals.append(_marginals(chunk, walk, NUM_FEATURES))
    return _finish(marginals, (WINDOW_ROWS, NUM_CEPSTRA))


def compute_shap(model: ModelParams, window, target: int, config: ShapConfig = ShapConfig(),
                 window_index: int = 0) -> np.ndarray:
    return shap_estimate(model, window, target, config, window_index).values


def exact_shapley(value_function: Callable, num_features: int, *, batched: bool = False) -> np.ndarray:
    """Shapley values by enumerating all 2^F coalitions.

    ``value_function`` receives a boolean membership mask of length F, or with
    ``batched=True`` the full (2^F, F) mask table at once, and returns the
    coalition payoff(s).
    """
    if num_features > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"exact enumeration limited to {MAX_EXACT_FEATURES} features")
    f = int(num_features)
    codes = np.arange(2 ** f)
    masks = ((codes[:, None] >> np.arange(f)[None, :]) & 1).astype(bool)
    if batched:
        payoff = np.asarray(value_function(masks), dtype=np.float64).reshape(-1)
    else:
        payoff = np.array([value_function(mask) for mask in masks], dtype=np.float64)
    sizes = masks.sum(axis=1)
    weight_by_size = np.array([math.factorial(s) * math.factorial(f - s - 1) / math.factorial(f)
                               for s in range(f)])
    phi = np.zeros(f)
    for p in range(f):
        without = codes[~masks[:, p]]
        terms = weight_by_size[sizes[without]] * (payoff[without | (1 << p)] - payoff[without])
        # correctly rounded sum: interchangeable players get bit-identical values
        phi[p] = math.fsum(terms.tolist())
    return phi


# --- tensors over many windows -------------------------------------------

def _thread_count(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get("ATTRIB_THREADS", "1") or 1)
    return max(1, int(threads))


def attribute_windows(model: ModelParams, windows, method: str, targets: Optional[Sequence[int]] = None,
                      lrp_config: LrpConfig = LrpConfig(), shap_config: Optional[ShapConfig] = None,
                      threads: Optional[int] = None) -> AttributionTensor:
    """Attribute every window of an (N, 19, 26) stack.

    Targets default to each window's argmax logit. Work is spread over
    ``threads`` workers (``ATTRIB_THREADS`` when unset); results are always
    assembled in window order.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    stack = np.asarray([getattr(w, "values", w) for w in windows], dtype=np.float64)
    if stack.ndim != 3 or stack.shape[1:] != (WINDOW_ROWS, NUM_CEPSTRA):
        raise DimensionMismatch(f"expected (N, {WINDOW_ROWS}, {NUM_CEPSTRA}) windows, got {stack.shape}")
    if targets is None:
        targets = np.argmax(logits_batch(model, stack), axis=1) if len(stack) else np.zeros(0, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (len(stack),):
        raise DimensionMismatch("one target per window required")

    if method == "saliency":
        config = {}
        job = lambda i: compute_saliency(model, stack[i], targets[i])
    elif method == "lrp":
        config = {"epsilon": lrp_config.epsilon}
        job = lambda i: compute_lrp(model, stack[i], targets[i], lrp_config)
    else:
        shap_config = shap_config or ShapConfig()
        config = {"num_permutations": int(shap_config.num_permutations), "seed": int(shap_config.seed),
                  "background": shap_config.background.values.tolist()}
        job = lambda i: compute_shap(model, stack[i], targets[i], shap_config, window_index=i)

    workers = _thread_count(threads)
    if workers == 1 or len(stack) < 2:
        results = [job(i) for i in range(len(stack))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(len(stack))))
    values = np.stack(results) if results else np.zeros((0, WINDOW_ROWS, NUM_CEPSTRA))
    return AttributionTensor(values, method, targets, config)


# --- export ---------------------------------------------------------------

def _num(v: float) -> float:
    return float(format(float(v), ".17g"))


def tensor_to_json(tensor: AttributionTensor) -> str:
    doc = {
        "method": tensor.method,
        "config": tensor.config,
        "targets": [int(t) for t in tensor.targets],
        "shape": list(tensor.values.shape),
        "values": [_num(v) for v in tensor.values.ravel()],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_tensor_json(tensor: AttributionTensor, path) -> None:
    Path(path).write_text(tensor_to_json(tensor), encoding="utf-8")


def load_tensor_json(path) -> AttributionTensor:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        shape = tuple(int(s) for s in doc["shape"])
        values = np.asarray(doc["values"], dtype=np.float64).reshape(shape)
        return AttributionTensor(values, doc["method"], doc["targets"], doc.get("config", {}))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: malformed attribution document: {exc}") from exc


def save_tensor_csv(tensor: AttributionTensor, path) -> None:
    """One row per (window, relative position) with 26 attribution columns."""
    header = ",".join(["window", "position"] + [f"mfcc_{k}" for k in range(NUM_CEPSTRA)])
    lines = [header]
    for i, block in enumerate(tensor.values):
        for j, row in enumerate(block):
            lines.append(f"{i},{j}," + ",".join(format(v, ".9g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
