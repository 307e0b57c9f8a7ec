import numpy as np
import pytest

from msmtfn.augment import (
    AugmentPolicy, HomophoneDict, augment_waveform, expand_dataset, gaussian_noise, homophone_substitute,
    random_mask, speed_perturb,
)
from msmtfn.dataio import CallRecord, SegmentRecord, manifest_digest, stub_encode_text, pad_or_truncate_tokens
from msmtfn.errors import ValidationError

SR = 8000


def sine(freq, seconds=2.0, sr=SR):
    return np.sin(2 * np.pi * freq * np.arange(int(seconds * sr)) / sr)


def peak_hz(wave, sr=SR):
    n = 1 << 17
    spec = np.abs(np.fft.rfft(wave * np.hanning(wave.size), n))
    return np.argmax(spec) * sr / n


# -- gaussian noise ----------------------------------------------------------------

def test_noise_identity_and_determinism(rng):
    w = rng.normal(size=1000)
    assert np.array_equal(gaussian_noise(w, 0.0, rng), w)
    a = gaussian_noise(w, 0.1, np.random.default_rng(3))
    b = gaussian_noise(w, 0.1, np.random.default_rng(3))
    assert a.tobytes() == b.tobytes() and a.shape == w.shape


def test_noise_variance_within_five_percent():
    w = np.zeros(100_000)
    sigma = 0.05
    d = gaussian_noise(w, sigma, np.random.default_rng(11)) - w
    assert abs(d.var() - sigma**2) <= 0.05 * sigma**2


def test_noise_rejects_negative_sigma_and_nonfinite(rng):
    with pytest.raises(ValueError):
        gaussian_noise(np.zeros(3), -1.0, rng)
    with pytest.raises(ValueError):
        gaussian_noise(np.array([0.0, np.nan]), 0.1, rng)


# -- speed perturbation --------------------------------------------------------------

def test_speed_identity_fast_path(rng):
    w = rng.normal(size=777)
    out = speed_perturb(w, 1.0)
    assert np.array_equal(out, w) and out is not w


@pytest.mark.parametrize("factor", [0.8, 0.9, 1.1, 1.25])
def test_speed_preserves_pitch(factor):
    out = speed_perturb(sine(200.0), factor)
    assert abs(peak_hz(out) - 200.0) <= 0.02 * 200.0


def test_speed_length_contract():
    w = np.random.default_rng(0).normal(size=320_000) * 0.1
    assert speed_perturb(w, 1.25).size == 256_000
    assert abs(speed_perturb(sine(200, 1.0), 0.8).size - 10_000) <= 200


def test_speed_rejects_out_of_range():
    with pytest.raises(ValueError):
        speed_perturb(np.zeros(10), 2.5)


def test_speed_is_deterministic():
    w = np.random.default_rng(1).normal(size=5000)
    assert speed_perturb(w, 0.9).tobytes() == speed_perturb(w, 0.9).tobytes()


# -- random masking -------------------------------------------------------------------

def test_mask_identity_and_full():
    w = np.random.default_rng(0).normal(size=500) + 5
    assert np.array_equal(random_mask(w, 0.0, 10, np.random.default_rng(0)), w)
    assert not random_mask(w, 1.0, 1000, np.random.default_rng(0)).any()


@pytest.mark.parametrize("seed", range(20))
def test_mask_count_bounds(seed):
    g = np.random.default_rng(seed)
    n = int(g.integers(200, 3000))
    rate = float(g.uniform(0.01, 0.5))
    width = int(g.integers(1, 300))
    w = g.normal(size=n) + 10.0  # never zero by chance
    zeroed = int((random_mask(w, rate, width, g) == 0).sum())
    lo = int(np.ceil(rate * n))
    assert lo <= zeroed <= lo + width


def test_mask_determinism_and_errors():
    w = np.ones(1000)
    a = random_mask(w, 0.2, 50, np.random.default_rng(4))
    assert a.tobytes() == random_mask(w, 0.2, 50, np.random.default_rng(4)).tobytes()
    with pytest.raises(ValueError):
        random_mask(w, 1.5, 50, np.random.default_rng(4))
    with pytest.raises(ValueError):
        random_mask(w, 0.5, 0, np.random.default_rng(4))


# -- homophones ---------------------------------------------------------------------------

def test_homophone_dictionary_validation():
    with pytest.raises(ValidationError):
        HomophoneDict({"a": ()})
    with pytest.raises(ValidationError):
        HomophoneDict({"a": ("a",)})
    d = HomophoneDict.parse("# comment\n是\t事 市\n")
    assert d.entries == {"是": ("事", "市")}
    assert len(HomophoneDict.sample()) >= 30


def test_homophone_laws(rng):
    d = HomophoneDict.sample()
    text = "我是他的人"
    assert homophone_substitute(text, d, 0.0, rng) == text
    out = homophone_substitute(text, d, 1.0, rng)
    assert len(out) == len(text)
    assert all(o != c and o in d.entries[c] for o, c in zip(out, text))
    assert homophone_substitute("xyz", d, 1.0, rng) == "xyz"
    assert homophone_substitute(list("是x"), d, 0.0, rng) == ["是", "x"]


def test_substitution_changes_only_substituted_rows():
    d = HomophoneDict.sample()
    text = "我是他的人我x"
    out = homophone_substitute(text, d, 0.5, np.random.default_rng(2))
    a = stub_encode_text(pad_or_truncate_tokens(text)[0])
    b = stub_encode_text(pad_or_truncate_tokens(out)[0])
    changed = [i for i, (x, y) in enumerate(zip(text, out)) if x != y]
    assert changed
    diff_rows = np.flatnonzero(np.abs(a - b).sum(axis=1) > 0).tolist()
    assert diff_rows == changed


# -- policy and expansion -----------------------------------------------------------------

def test_policy_validation():
    with pytest.raises(ValidationError) as err:
        AugmentPolicy(noise_sigma=-1, homophone_prob=2, audio_multiplicity=-1)
    assert len(err.value.problems) == 3


def test_augment_waveform_degenerate_is_identity(rng):
    w = rng.normal(size=4000)
    pol = AugmentPolicy(noise_sigma=0.0, speed_factors=(1.0,), mask_rate=0.0)
    assert np.array_equal(augment_waveform(w, pol, "c1", 1), w)


def records(n_calls=3, segs=2, split="train", seconds=0.1):
    g = np.random.default_rng(0)
    out = []
    for i in range(n_calls):
        s = [SegmentRecord(j + 1, transcript="我是他的人", waveform=g.normal(size=int(SR * seconds)) * 0.1)
             for j in range(segs)]
        out.append(CallRecord(f"c{i}", s, "ABCDE"[i % 5], split=split))
    return out


def test_expand_zero_multiplicity_is_identity():
    recs = records()
    assert expand_dataset(recs, AugmentPolicy(audio_multiplicity=0, text_multiplicity=0)) == recs


def test_expand_preserves_labels_ids_and_order():
    recs = records()
    out = expand_dataset(recs, AugmentPolicy(audio_multiplicity=2, text_multiplicity=1))
    assert len(out) == 3 * 4
    assert [r.variant for r in out[:4]] == ["orig", "audio-1", "audio-2", "text-1"]
    for r in out:
        src = recs[int(r.call_id[1:])]
        assert r.label == src.label and [s.index for s in r.segments] == [1, 2]
    assert out[1].segments[0].transcript == recs[0].segments[0].transcript
    assert out[3].segments[0].waveform is recs[0].segments[0].waveform


def test_expand_is_deterministic():
    pol = AugmentPolicy(audio_multiplicity=1, text_multiplicity=1, seed=9)
    a = manifest_digest(expand_dataset(records(), pol))
    b = manifest_digest(expand_dataset(records(), pol))
    c = manifest_digest(expand_dataset(records(), AugmentPolicy(audio_multiplicity=1, text_multiplicity=1, seed=10)))
    assert a == b != c


def test_expand_per_record_multiplicity():
    pol = AugmentPolicy(audio_multiplicity=1, text_multiplicity=0, per_record={"c1": (0, 2)})
    variants = [(r.call_id, r.variant) for r in expand_dataset(records(), pol)]
    assert variants == [("c0", "orig"), ("c0", "audio-1"), ("c1", "orig"), ("c1", "text-1"), ("c1", "text-2"),
                        ("c2", "orig"), ("c2", "audio-1")]


def test_expand_refuses_other_splits():
    with pytest.raises(ValidationError, match="train"):
        expand_dataset(records(split="val"), AugmentPolicy())


def test_expand_segment_count_arithmetic():
    # 2,293 training segments with two audio copies each give 6,879 audio-track segments
    recs = records(n_calls=229, segs=10, seconds=0.05) + records(n_calls=1, segs=3, seconds=0.05)
    assert sum(len(r.segments) for r in recs) == 2293
    out = expand_dataset(recs, AugmentPolicy(audio_multiplicity=2, text_multiplicity=0, mask_max_width=20))
    assert sum(len(r.segments) for r in out) == 6879
