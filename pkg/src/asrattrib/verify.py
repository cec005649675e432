"""Seeded property suites behind ``asrattrib verify``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import aggregate, attribution, render
from .features import NUM_CEPSTRA, WINDOW_ROWS
from .model import INPUT_DIM, NUM_CLASSES, Dense, ModelParams, init_model, input_gradient, logits_batch


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.suite}: {self.name}" + (f" ({self.detail})" if self.detail else "")


def random_model(rng: np.random.Generator, hidden=(128, 128), zero_bias: bool = False) -> ModelParams:
    model = init_model(hidden, seed=int(rng.integers(2 ** 31)))
    if zero_bias:
        return model
    return ModelParams(tuple(Dense(l.weight, rng.normal(0.0, 0.1, l.shape[0])) for l in model.layers))


def central_difference(model: ModelParams, window: np.ndarray, target: int, coords, h: float = 1e-5) -> np.ndarray:
    flat = window.reshape(-1)
    probes = np.repeat(flat[None, :], 2 * len(coords), axis=0)
    for n, p in enumerate(coords):
        probes[2 * n, p] += h
        probes[2 * n + 1, p] -= h
    logits = logits_batch(model, probes)[:, target]
    return (logits[0::2] - logits[1::2]) / (2 * h)


def gradient_suite(seed: int = 11, models: int = 20, coords: int = 50) -> List[Check]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(models):
        model = random_model(rng)
        x = rng.normal(size=(WINDOW_ROWS, NUM_CEPSTRA))
        c = int(rng.integers(NUM_CLASSES))
        picked = rng.choice(INPUT_DIM, size=coords, replace=False)
        grad = input_gradient(model, x, c).reshape(-1)[picked]
        fd = central_difference(model, x, c, picked)
        big = np.abs(grad) > 1e-8
        rel = np.abs(grad - fd)[big] / np.maximum(np.abs(grad), np.abs(fd))[big]
        worst = max(worst, float(rel.max(initial=0.0)))
    return [Check("gradient", "input gradient vs central differences", worst < 1e-5, f"max rel err {worst:.2e}")]


def lrp_suite(seed: int = 12, models: int = 20, denominator_shift: float = 0.0) -> List[Check]:
    rng = np.random.default_rng(seed)
    worst_cons = worst_eps = worst_layer = 0.0
    for _ in range(models):
        model = random_model(rng, zero_bias=True)
        x = rng.normal(size=(WINDOW_ROWS, NUM_CEPSTRA))
        c = int(rng.integers(NUM_CLASSES))
        logit = logits_batch(model, x)[0, c]
        rel = attribution.lrp_relevances(model, x, c, attribution.LrpConfig(0.0), denominator_shift=denominator_shift)
        worst_cons = max(worst_cons, abs(rel[0].sum() - logit) / abs(logit))
        sums = [r.sum() for r in rel]
        for lower, upper in zip(sums, sums[1:]):
            worst_layer = max(worst_layer, abs(lower - upper) / abs(upper))
        eps = 1e-4
        rel = attribution.lrp_relevances(model, x, c, attribution.LrpConfig(eps), denominator_shift=denominator_shift)
        expected = logit / (1 + eps) ** model.depth
        worst_eps = max(worst_eps, abs(rel[0].sum() - expected) / abs(expected))
    return [
        Check("lrp", "conservation at eps=0", worst_cons < 1e-9, f"max rel err {worst_cons:.2e}"),
        Check("lrp", "layerwise sums equal at eps=0", worst_layer < 1e-9, f"max rel err {worst_layer:.2e}"),
        Check("lrp", "factor 1/(1+eps) per layer", worst_eps < 1e-9, f"max rel err {worst_eps:.2e}"),
    ]


def _restricted_game(rng, model, active_count):
    bg = rng.normal(size=INPUT_DIM)
    x = bg.copy()
    active = rng.choice(INPUT_DIM, size=active_count, replace=False)
    x[active] = rng.normal(size=active_count) * 3.0
    return x, bg, active


def shapley_suite(seed: int = 13, trials: int = 20, permutations: int = 2000, features: int = 10) -> List[Check]:
    rng = np.random.default_rng(seed)
    checks = []
    product = lambda m: float(m[0] and m[1])
    phi = attribution.exact_shapley(product, 2)
    checks.append(Check("shapley", "exact symmetry on product game", bool(np.all(phi == 0.5)), str(phi.tolist())))
    dummy = lambda m: float(m[0]) * 2.0 + float(m[1] and m[2])
    phi = attribution.exact_shapley(dummy, 4)
    checks.append(Check("shapley", "exact dummy axiom", phi[3] == 0.0, f"phi_dummy={phi[3]}"))

    within = total = 0
    worst_eff = 0.0
    for _ in range(trials):
        model = random_model(rng, hidden=(32, 32))
        x, bg, active = _restricted_game(rng, model, features)
        c = int(rng.integers(NUM_CLASSES))

        def game(masks, x=x, bg=bg, active=active, model=model, c=c):
            inputs = np.repeat(bg[None, :], len(masks), axis=0)
            for col, p in enumerate(active):
                inputs[masks[:, col], p] = x[p]
            return logits_batch(model, inputs)[:, c]

        exact = attribution.exact_shapley(game, features, batched=True)
        config = attribution.ShapConfig(permutations, int(rng.integers(2 ** 31)),
                                        attribution.BackgroundSample(bg.reshape(WINDOW_ROWS, NUM_CEPSTRA)))
        est = attribution.shap_estimate(model, x, c, config)
        values, se = est.values.reshape(-1)[active], est.stderr.reshape(-1)[active]
        ok = np.abs(values - exact) <= np.maximum(3 * se, 1e-9)
        within += int(ok.sum())
        total += features
        gap = logits_batch(model, x)[0, c] - logits_batch(model, bg)[0, c]
        worst_eff = max(worst_eff, abs(est.values.sum() - gap))
        exact_gap = abs(exact.sum() - gap)
        worst_eff = max(worst_eff, exact_gap)
    frac = within / total
    checks.append(Check("shapley", "sampled within 3 SE of exact", frac >= 0.95, f"{frac:.3f} of features"))
    checks.append(Check("shapley", "efficiency sum(phi) = f(x) - f(bg)", worst_eff < 1e-9, f"max gap {worst_eff:.2e}"))
    return checks


def aggregate_suite(seed: int = 14) -> List[Check]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (1, 5, 19, 20, 137, 500):
        t = rng.normal(size=(n, WINDOW_ROWS, NUM_CEPSTRA)) * aggregate.valid_rows(n)[..., None]
        total = t.sum()
        for agg in (aggregate.sum_per_frame(t), aggregate.sum_per_window(t)):
            worst = max(worst, abs(agg.values.sum() - total) / max(1.0, abs(total)))
    ones = aggregate.sum_per_frame(np.ones((40, WINDOW_ROWS, NUM_CEPSTRA))).values
    counts_ok = bool(np.all(ones[0] == 10) and np.all(ones[9:31] == 19))
    return [
        Check("aggregate", "mass identity", worst < 1e-12, f"max rel err {worst:.2e}"),
        Check("aggregate", "boundary window counts", counts_ok),
    ]


def render_suite(seed: int = 15) -> List[Check]:
    rng = np.random.default_rng(seed)
    anchors = (render.color_of(0.0, 2.0) == (255, 255, 255) and render.color_of(2.0, 2.0) == (255, 0, 0)
               and render.color_of(-2.0, 2.0) == (0, 0, 255))
    m = rng.normal(size=(30, NUM_CEPSTRA))
    same = render.render_heatmap(m).svg_bytes == render.render_heatmap(m.copy()).svg_bytes
    return [Check("render", "colour anchors", anchors), Check("render", "byte-identical SVG", same)]


SUITES: Dict[str, Callable[..., List[Check]]] = {
    "gradient": gradient_suite,
    "lrp": lrp_suite,
    "shapley": shapley_suite,
    "aggregate": aggregate_suite,
    "render": render_suite,
}


def run(only=None, inject_fault=None) -> List[Check]:
    names = list(only) if only else list(SUITES)
    checks = []
    for name in names:
        if name == "lrp" and inject_fault == "lrp-denominator":
            checks.extend(lrp_suite(denominator_shift=0.5))
        else:
            checks.extend(SUITES[name]())
    return checks
