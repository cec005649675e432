"""Feed-forward ReLU character classifier over flattened 19x26 windows."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, InvalidLabel, LengthMismatch, ParseError
from .features import NUM_CEPSTRA, WINDOW_ROWS

CHARSET: Tuple[str, ...] = tuple("abcdefghijklmnopqrstuvwxyz") + (" ", "-")
NUM_CLASSES = len(CHARSET)
INPUT_DIM = WINDOW_ROWS * NUM_CEPSTRA
DEFAULT_HIDDEN = (128, 128)
FORMAT_VERSION = 1
BATCH_SIZE = 32

assert NUM_CLASSES == 28 and len(set(CHARSET)) == 28


def char_index(symbol: str) -> int:
    try:
        return CHARSET.index(symbol)
    except ValueError:
        raise InvalidLabel(f"{symbol!r} is not in the character set") from None


@dataclass(frozen=True)
class Dense:
    """Affine layer y = weight @ x + bias."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DimensionMismatch(f"weight {w.shape} and bias {b.shape} disagree")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.weight.shape


@dataclass(frozen=True)
class ModelParams:
    """Stack of affine layers; ReLU between them, identity on the output."""

    layers: Tuple[Dense, ...]
    charset: Tuple[str, ...] = CHARSET

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionMismatch("model needs at least one layer")
        if layers[0].shape[1] != INPUT_DIM:
            raise DimensionMismatch(f"first layer takes {layers[0].shape[1]} inputs, expected {INPUT_DIM}")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise DimensionMismatch(f"layer of width {prev.shape[0]} feeds a layer expecting {nxt.shape[1]}")
        if layers[-1].shape[0] != NUM_CLASSES:
            raise DimensionMismatch(f"output layer has {layers[-1].shape[0]} rows, expected {NUM_CLASSES}")
        if tuple(self.charset) != CHARSET:
            raise DimensionMismatch("unsupported character set")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "charset", tuple(self.charset))

    @property
    def depth(self) -> int:
        return len(self.layers)

    def __eq__(self, other):
        if not isinstance(other, ModelParams) or self.depth != other.depth:
            return False
        return all(
            np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )

    __hash__ = None


def init_model(hidden: Sequence[int] = DEFAULT_HIDDEN, seed: int = 0) -> ModelParams:
    """He-initialised weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [INPUT_DIM, *hidden, NUM_CLASSES]
    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        layers.append(Dense(w, np.zeros(fan_out)))
    return ModelParams(tuple(layers))


@dataclass
class ForwardTrace:
    pre_activations: List[np.ndarray] = field(default_factory=list)
    # activations[0] is the flattened input; activations[l] feeds layer l
    activations: List[np.ndarray] = field(default_factory=list)
    logits: Optional[np.ndarray] = None
    probabilities: Optional[np.ndarray] = None

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.logits))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _flatten(window) -> np.ndarray:
    values = getattr(window, "values", window)
    x = np.asarray(values, dtype=np.float64)
    if x.shape not in ((WINDOW_ROWS, NUM_CEPSTRA), (INPUT_DIM,)):
        raise DimensionMismatch(f"window must be ({WINDOW_ROWS}, {NUM_CEPSTRA}), got {x.shape}")
    return x.reshape(INPUT_DIM)


def forward_trace(model: ModelParams, window) -> ForwardTrace:
    x = _flatten(window)
    trace = ForwardTrace(activations=[x])
    last = model.depth - 1
    for l, layer in enumerate(model.layers):
        z = layer.weight @ x + layer.bias
        trace.pre_activations.append(z)
        if l < last:
            x = np.maximum(z, 0.0)
            trace.activations.append(x)
    trace.logits = trace.pre_activations[-1]
    trace.probabilities = softmax(trace.logits)
    return trace


def logits_batch(model: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Logits for a batch of flattened inputs, shape (B, 494) -> (B, 28)."""
    x = np.asarray(inputs, dtype=np.float64).reshape(-1, INPUT_DIM)
    last = model.depth - 1
    for l, layer in enumerate(model.layers):
        x = x @ layer.weight.T + layer.bias
        if l < last:
            x = np.maximum(x, 0.0)
    return x


def predict(model: ModelParams, windows: np.ndarray) -> np.ndarray:
    """Argmax character index per window for an (N, 19, 26) stack."""
    return np.argmax(logits_batch(model, windows), axis=1)


def _check_target(target: int) -> int:
    if not 0 <= int(target) < NUM_CLASSES:
        raise InvalidLabel(f"target {target} outside [0, {NUM_CLASSES})")
    return int(target)


def input_gradient(model: ModelParams, window, target: int) -> np.ndarray:
    """d logit_target / d input, reshaped to 19x26. ReLU'(0) is taken as 0."""
    target = _check_target(target)
    trace = forward_trace(model, window)
    grad = model.layers[-1].weight[target].copy()
    for l in range(model.depth - 2, -1, -1):
        grad = grad * (trace.pre_activations[l] > 0.0)
        grad = grad @ model.layers[l].weight
    return grad.reshape(WINDOW_ROWS, NUM_CEPSTRA)


def _fmt(values: np.ndarray) -> list:
    # 17 significant digits round-trips every IEEE double exactly
    return [float(format(v, ".17g")) for v in values.ravel()]


def model_to_dict(model: ModelParams) -> dict:
    return {
        "version": FORMAT_VERSION,
        "charset": list(model.charset),
        "layers": [
            {
                "rows": int(layer.shape[0]),
                "cols": int(layer.shape[1]),
                "weights": _fmt(layer.weight),
                "bias": _fmt(layer.bias),
            }
            for layer in model.layers
        ],
    }


def save_model(model: ModelParams, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), separators=(",", ":")) + "\n", encoding="utf-8")


def model_from_dict(doc: dict) -> ModelParams:
    try:
        if doc["version"] != FORMAT_VERSION:
            raise ParseError(f"unsupported model format version {doc['version']!r}")
        layers = []
        for spec in doc["layers"]:
            rows, cols = int(spec["rows"]), int(spec["cols"])
            weights = np.asarray(spec["weights"], dtype=np.float64)
            bias = np.asarray(spec["bias"], dtype=np.float64)
            if weights.size != rows * cols or bias.size != rows:
                raise DimensionMismatch(f"layer declares {rows}x{cols} but carries {weights.size} weights, {bias.size} biases")
            layers.append(Dense(weights.reshape(rows, cols), bias))
        charset = tuple(doc.get("charset", CHARSET))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model document: {exc}") from exc
    return ModelParams(tuple(layers), charset)


def load_model(path) -> ModelParams:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object")
    return model_from_dict(doc)


def cross_entropy(model: ModelParams, inputs: np.ndarray, labels: np.ndarray) -> float:
    logits = logits_batch(model, inputs)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-np.mean(log_probs[np.arange(len(labels)), labels]))


def _batch_gradients(model: ModelParams, x: np.ndarray, labels: np.ndarray):
    acts = [x]
    pres = []
    last = model.depth - 1
    for l, layer in enumerate(model.layers):
        z = acts[-1] @ layer.weight.T + layer.bias
        pres.append(z)
        if l < last:
            acts.append(np.maximum(z, 0.0))
    delta = softmax(pres[-1])
    delta[np.arange(len(labels)), labels] -= 1.0
    delta /= len(labels)
    grads = [None] * model.depth
    for l in range(last, -1, -1):
        grads[l] = (delta.T @ acts[l], delta.sum(axis=0))
        if l > 0:
            delta = (delta @ model.layers[l].weight) * (pres[l - 1] > 0.0)
    return grads


def train_epoch(model: ModelParams, windows, labels, learning_rate: float, seed: int,
                batch_size: int = BATCH_SIZE) -> Tuple[ModelParams, float]:
    """One shuffled pass of minibatch SGD on softmax cross-entropy.

    Returns the updated model and the mean loss measured before the update.
    """
    inputs = np.stack([_flatten(w) for w in windows]) if len(windows) else np.zeros((0, INPUT_DIM))
    labels = np.asarray(labels, dtype=np.int64)
    if len(inputs) != len(labels):
        raise LengthMismatch(f"{len(inputs)} windows but {len(labels)} labels")
    if len(inputs) == 0:
        raise LengthMismatch("training set is empty")
    if labels.min() < 0 or labels.max() >= NUM_CLASSES:
        raise InvalidLabel(f"labels must lie in [0, {NUM_CLASSES})")
    if learning_rate < 0:
        raise ValueError("learning_rate must be nonnegative")

    loss = cross_entropy(model, inputs, labels)
    if learning_rate == 0:
        return model, loss

    weights = [layer.weight.copy() for layer in model.layers]
    biases = [layer.bias.copy() for layer in model.layers]
    order = np.random.default_rng(seed).permutation(len(inputs))
    for start in range(0, len(order), batch_size):
        batch = order[start:start + batch_size]
        current = ModelParams(tuple(Dense(w, b) for w, b in zip(weights, biases)))
        for l, (gw, gb) in enumerate(_batch_gradients(current, inputs[batch], labels[batch])):
            weights[l] -= learning_rate * gw
            biases[l] -= learning_rate * gb
    return ModelParams(tuple(Dense(w, b) for w, b in zip(weights, biases))), loss
