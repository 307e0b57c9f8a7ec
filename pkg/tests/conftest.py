import numpy as np
import pytest

from msmtfn.config import ModelConfig
from msmtfn.dataio import CallExample, SegmentFeatures


def toy_segment(rng, cfg, audio_len=10, text_len=6, audio_valid=None, text_valid=None):
    am = np.zeros(audio_len, dtype=bool)
    am[: audio_len if audio_valid is None else audio_valid] = True
    tm = np.zeros(text_len, dtype=bool)
    tm[: text_len if text_valid is None else text_valid] = True
    return SegmentFeatures(rng.normal(size=(audio_len, cfg.d_audio)), am,
                           rng.normal(size=(text_len, cfg.d_text)), tm)


def toy_call(rng, cfg, call_id="c0", label="B", n_segments=2, **kw):
    return CallExample(call_id, label, [toy_segment(rng, cfg, **kw) for _ in range(n_segments)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_cfg():
    return ModelConfig.toy()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results.values():
            terminalreporter.write_line(line)
