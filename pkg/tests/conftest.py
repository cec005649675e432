import numpy as np
import pytest

from asrattrib.features import SAMPLE_RATE, write_wav
from asrattrib.model import Dense, ModelParams, init_model


def tone(freq=1000.0, seconds=1.0, amplitude=1.0):
    t = np.arange(int(round(seconds * SAMPLE_RATE))) / SAMPLE_RATE
    return amplitude * np.sin(2 * np.pi * freq * t)


def random_model(rng, hidden=(128, 128), bias_scale=0.1):
    model = init_model(hidden, seed=int(rng.integers(2 ** 31)))
    if bias_scale == 0:
        return model
    return ModelParams(tuple(Dense(l.weight, rng.normal(0, bias_scale, l.shape[0])) for l in model.layers))


def linear_model(rng):
    return random_model(rng, hidden=(), bias_scale=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def wav_file(tmp_path):
    def make(samples, name="clip.wav"):
        path = tmp_path / name
        write_wav(path, samples)
        return path

    return make


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS:
        terminalreporter.write_line(line)
