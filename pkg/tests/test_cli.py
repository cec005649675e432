import json

import numpy as np
import pytest

from asrattrib.cli import main
from asrattrib.demo import DEMO_TEXT, load_demo_model, synthesize
from asrattrib.features import read_wav
from asrattrib.model import CHARSET, load_model


@pytest.fixture
def short_wav(wav_file):
    clip, _ = synthesize("hi there", seed=3)
    return wav_file(clip.samples[:8000], "short.wav")


def run(*argv):
    return main([str(a) for a in argv])


def test_features(tmp_path, short_wav):
    assert run("features", short_wav, "--out", tmp_path / "m.csv") == 0
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines) == 1 + 24 and lines[0].startswith("frame,mfcc_0")


def test_attribute_lrp_defaults(tmp_path, short_wav):
    out = tmp_path / "lrp"
    assert run("attribute", short_wav, "--method", "lrp", "--display", "per-window", "--out", out) == 0
    names = {p.name for p in out.iterdir()}
    assert {"attribution.json", "aggregate.csv", "heatmap.svg", "manifest.json"} <= names
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["epsilon"] == 1e-4
    assert manifest["shape"] == [24, 19, 26]
    assert set(manifest["outputs"]) >= {"attribution.json", "heatmap.svg"}
    assert len(manifest["inputs"]["audio"]["sha256"]) == 64


@pytest.mark.parametrize("display", ["per-frame", "relative:9", "relative:0"])
def test_attribute_displays(tmp_path, short_wav, display):
    assert run("attribute", short_wav, "--method", "saliency", "--display", display, "--out", tmp_path / "o") == 0
    rows = (tmp_path / "o" / "aggregate.csv").read_text().splitlines()
    assert len(rows) == 25


def test_attribute_fixed_target(tmp_path, short_wav):
    assert run("attribute", short_wav, "--target", "char:e", "--out", tmp_path / "o") == 0
    doc = json.loads((tmp_path / "o" / "attribution.json").read_text())
    assert set(doc["targets"]) == {CHARSET.index("e")}


def test_shap_deterministic(tmp_path, short_wav):
    args = ["attribute", short_wav, "--method", "shap", "--permutations", "10", "--seed", "4"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "attribution.json").read_bytes() == (tmp_path / "b" / "attribution.json").read_bytes()


def test_shap_requires_seed(tmp_path, short_wav):
    with pytest.raises(SystemExit) as exc:
        run("attribute", short_wav, "--method", "shap", "--out", tmp_path / "o")
    assert exc.value.code == 2


def test_shap_background_file(tmp_path, short_wav):
    (tmp_path / "bg.json").write_text(json.dumps({"values": np.zeros((19, 26)).tolist()}))
    assert run("attribute", short_wav, "--method", "shap", "--permutations", "3", "--seed", "1",
               "--background", tmp_path / "bg.json", "--out", tmp_path / "o") == 0


@pytest.mark.parametrize("flags", [["--method", "foo"], ["--display", "relative:19"], ["--target", "char:A"],
                                   ["--clip-percentile", "40"], ["--epsilon", "-1"]])
def test_usage_errors(tmp_path, short_wav, flags):
    with pytest.raises(SystemExit) as exc:
        run("attribute", short_wav, *flags, "--out", tmp_path / "o")
    assert exc.value.code == 2
    assert not (tmp_path / "o").exists()


def test_runtime_errors(tmp_path, short_wav, capsys):
    assert run("attribute", tmp_path / "missing.wav", "--out", tmp_path / "o") == 1
    (tmp_path / "bad.json").write_text("{")
    assert run("attribute", short_wav, "--model", tmp_path / "bad.json", "--out", tmp_path / "o") == 1
    assert "error:" in capsys.readouterr().err


def test_compare(tmp_path, short_wav, wav_file, capsys):
    assert run("attribute", short_wav, "--out", tmp_path / "a") == 0
    a = tmp_path / "a" / "attribution.json"
    assert run("compare", a, a, "--k", "5", "--out", tmp_path / "self.json") == 0
    report = json.loads((tmp_path / "self.json").read_text())
    assert not any(report["difference"]["per_bin_mean_magnitude"])
    assert "head energy fraction" in capsys.readouterr().out

    doc = json.loads(a.read_text())
    doc["values"] = [2 * v for v in doc["values"]]
    (tmp_path / "double.json").write_text(json.dumps(doc))
    assert run("compare", tmp_path / "double.json", a, "--k", "5", "--out", tmp_path / "d.json") == 0
    report = json.loads((tmp_path / "d.json").read_text())
    np.testing.assert_allclose(report["difference"]["per_bin_mean_magnitude"],
                               report["b"]["per_bin_mean_magnitude"], rtol=1e-12)

    longer = wav_file(np.concatenate([read_wav(short_wav).samples] * 2), "long.wav")
    assert run("attribute", longer, "--out", tmp_path / "b") == 0
    assert run("compare", a, tmp_path / "b" / "attribution.json") == 1


def test_verify_all_and_only(capsys):
    assert run("verify", "--only", "gradient") == 0
    out = capsys.readouterr().out
    assert "gradient" in out and "lrp" not in out
    assert run("verify") == 0


def test_verify_detects_lrp_fault(capsys):
    assert run("verify", "--only", "lrp", "--inject-fault", "lrp-denominator") == 1
    assert "[FAIL] lrp: conservation" in capsys.readouterr().out


def test_train_demo(tmp_path):
    assert run("train-demo", "--out", tmp_path / "m.json", "--epochs", "1", "--audio", tmp_path / "d.wav") == 0
    assert load_model(tmp_path / "m.json").depth == 3
    assert read_wav(tmp_path / "d.wav").samples.size > 0


def test_shipped_demo_model_reads_demo_text():
    model = load_demo_model()
    clip, labels = synthesize(DEMO_TEXT, seed=11)
    from asrattrib.features import compute_mfcc, window_stack
    from asrattrib.model import predict

    pred = predict(model, window_stack(compute_mfcc(clip).values))
    accuracy = np.mean([CHARSET[p] == c for p, c in zip(pred, labels)])
    assert accuracy > 0.9
