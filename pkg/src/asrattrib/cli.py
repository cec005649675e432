"""Command-line front end: features, attribute, compare, verify, train-demo."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import DEFAULT_HEAD_FRAMES, aggregate, attribution_stats, compare_stats
from .attribution import (METHODS, AttributionTensor, BackgroundSample, LrpConfig, ShapConfig,
                          attribute_windows, build_background, letter_windows, load_tensor_json,
                          save_tensor_csv, save_tensor_json)
from .errors import AttribError, ShapeMismatch
from .features import WINDOW_ROWS, compute_mfcc, read_wav, window_stack
from .model import CHARSET, char_index, load_model, logits_batch, save_model
from .render import RenderSpec, export_csv, render_heatmap

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _display(value: str) -> str:
    if value in ("per-frame", "per-window"):
        return value
    if value.startswith("relative:"):
        try:
            j = int(value.split(":", 1)[1])
        except ValueError:
            j = -1
        if 0 <= j < WINDOW_ROWS:
            return value
    raise argparse.ArgumentTypeError(f"expected per-frame, per-window or relative:<0..{WINDOW_ROWS - 1}>, got {value!r}")


def _target(value: str) -> str:
    if value == "argmax":
        return value
    if value.startswith("char:") and len(value) == 6 and value[5] in CHARSET:
        return value
    raise argparse.ArgumentTypeError(f"expected argmax or char:<c> with c in a-z, space or '-', got {value!r}")


def _nonneg_float(value: str) -> float:
    v = float(value)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _positive_int(value: str) -> int:
    v = int(value)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _percentile(value: str) -> float:
    v = float(value)
    if not 50.0 < v <= 100.0:
        raise argparse.ArgumentTypeError("must lie in (50, 100]")
    return v


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_model_arg(path):
    if path is not None:
        return load_model(path), str(path)
    from importlib import resources

    from .demo import demo_model_path

    with resources.as_file(demo_model_path()) as p:
        return load_model(p), str(p)


def _background(source: str, model, windows: np.ndarray) -> BackgroundSample:
    if source == "input":
        return build_background(letter_windows(model, windows))
    path = Path(source)
    if path.suffix.lower() == ".wav":
        train = window_stack(compute_mfcc(read_wav(path)).values)
        return build_background(letter_windows(model, train))
    doc = json.loads(path.read_text(encoding="utf-8"))
    return BackgroundSample(np.asarray(doc["values"] if isinstance(doc, dict) else doc))


def cmd_features(args) -> int:
    mfcc = compute_mfcc(read_wav(args.input))
    export_csv(mfcc.values, args.out)
    print(f"wrote {mfcc.num_frames} frames to {args.out}")
    return EXIT_OK


def cmd_attribute(args) -> int:
    model, model_path = _load_model_arg(args.model)
    clip = read_wav(args.input)
    windows = window_stack(compute_mfcc(clip).values)
    logits = logits_batch(model, windows)
    predicted = np.argmax(logits, axis=1)
    targets = predicted if args.target == "argmax" else np.full(len(windows), char_index(args.target[5]))

    config = {"method": args.method, "display": args.display, "target": args.target,
              "clip_percentile": args.clip_percentile, "head_frames": args.k}
    lrp_config = LrpConfig(args.epsilon)
    shap_config = None
    if args.method == "lrp":
        config["epsilon"] = args.epsilon
    elif args.method == "shap":
        background = _background(args.background, model, windows)
        shap_config = ShapConfig(args.permutations, args.seed, background)
        config.update(permutations=args.permutations, seed=args.seed, background=args.background)

    tensor = attribute_windows(model, windows, args.method, targets, lrp_config, shap_config)
    agg = aggregate(tensor, args.display)
    labels = [CHARSET[p] for p in predicted]
    heatmap = render_heatmap(agg.values, RenderSpec(clip_percentile=args.clip_percentile), labels,
                             title=f"{args.method} {args.display}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "attribution.json": lambda p: save_tensor_json(tensor, p),
        "attribution.csv": lambda p: save_tensor_csv(tensor, p),
        "aggregate.csv": lambda p: export_csv(agg.values, p),
        "heatmap.svg": heatmap.save,
    }
    hashes = {}
    for name, write in files.items():
        write(out / name)
        hashes[name] = _sha256(out / name)

    manifest = {
        "tool": "asrattrib",
        "version": __version__,
        "command": "attribute",
        "config": config,
        "threads": int(os.environ.get("ATTRIB_THREADS", "1") or 1),
        "inputs": {
            "audio": {"path": str(args.input), "sha256": _sha256(args.input), "samples": int(clip.samples.size)},
            "model": {"path": model_path, "sha256": _sha256(model_path)},
        },
        "shape": list(tensor.values.shape),
        "transcript": "".join(labels),
        "outputs": hashes,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{args.method}: {tensor.num_windows} windows -> {out}")
    return EXIT_OK


def _report_table(diff, a_stats, b_stats) -> str:
    rows = [f"{'bin':>4} {'A':>12} {'B':>12} {'A-B':>12}"]
    for k, (va, vb, d) in enumerate(zip(a_stats.per_bin_mean_magnitude, b_stats.per_bin_mean_magnitude,
                                        diff.per_bin_mean_magnitude)):
        rows.append(f"{k:>4} {va:12.5g} {vb:12.5g} {d:12.5g}")
    rows.append(f"head energy fraction (first {diff.head_frames} frames): "
                f"A={a_stats.head_energy_fraction:.5g} B={b_stats.head_energy_fraction:.5g} "
                f"A-B={diff.head_energy_fraction:.5g}")
    return "\n".join(rows)


def compare_tensors(a: AttributionTensor, b: AttributionTensor, k: int = DEFAULT_HEAD_FRAMES) -> dict:
    if a.method != b.method:
        raise ShapeMismatch(f"methods differ ({a.method} vs {b.method})")
    if a.values.shape != b.values.shape:
        raise ShapeMismatch(f"shapes differ ({a.values.shape} vs {b.values.shape})")
    sa, sb = attribution_stats(a, k), attribution_stats(b, k)
    return {"method": a.method, "a": sa.to_dict(), "b": sb.to_dict(), "difference": compare_stats(sa, sb).to_dict()}


def cmd_compare(args) -> int:
    a, b = load_tensor_json(args.a), load_tensor_json(args.b)
    report = compare_tensors(a, b, args.k)
    sa, sb = attribution_stats(a, args.k), attribution_stats(b, args.k)
    print(_report_table(compare_stats(sa, sb), sa, sb))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    checks = verify.run(args.only, args.inject_fault)
    for check in checks:
        print(check.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} properties passed")
    return EXIT_OK if failed == 0 else EXIT_FAILURE


def cmd_train_demo(args) -> int:
    from .demo import DEMO_TEXT, synthesize, train_demo_model
    from .features import write_wav

    model = train_demo_model(seed=args.seed, epochs=args.epochs, log=print)
    save_model(model, args.out)
    print(f"wrote model to {args.out}")
    if args.audio:
        clip, _ = synthesize(args.text or DEMO_TEXT, seed=args.seed + 7)
        write_wav(args.audio, clip.samples)
        print(f"wrote demo audio to {args.audio}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asrattrib", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="compute MFCCs of a WAV file and write them as CSV")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("attribute", help="attribute, aggregate and render one WAV file")
    p.add_argument("input")
    p.add_argument("--model", default=None, help="model JSON (default: shipped demo model)")
    p.add_argument("--method", choices=METHODS, default="lrp")
    p.add_argument("--display", type=_display, default="per-window")
    p.add_argument("--target", type=_target, default="argmax")
    p.add_argument("--epsilon", type=_nonneg_float, default=1e-4)
    p.add_argument("--permutations", type=_positive_int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--background", default="input",
                   help="'input', a training WAV, or a JSON file with a 19x26 'values' matrix")
    p.add_argument("--clip-percentile", type=_percentile, default=99.0)
    p.add_argument("--k", type=int, default=DEFAULT_HEAD_FRAMES, help="leading frames for head energy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("compare", help="difference of attribution statistics between two runs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--k", type=int, default=DEFAULT_HEAD_FRAMES)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="run the oracle property suites")
    p.add_argument("--only", action="append", choices=["gradient", "lrp", "shapley", "aggregate", "render"])
    p.add_argument("--inject-fault", choices=["lrp-denominator"], help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train-demo", help="train the demo model on synthetic audio")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=_positive_int, default=8)
    p.add_argument("--audio", default=None, help="also write a demo WAV here")
    p.add_argument("--text", default=None)
    p.set_defaults(func=cmd_train_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "method", None) == "shap" and args.seed is None:
        parser.error("--seed is required with --method shap")
    try:
        return args.func(args)
    except (AttribError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
