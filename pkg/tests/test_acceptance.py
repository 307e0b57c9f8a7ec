"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed at the end of the
pytest run and also when this file is executed directly::

    python tests/test_acceptance.py
"""
import copy
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from msmtfn import blob  # noqa: E402
from msmtfn.attention import AttentionBlockParams, cross_attention_block, self_attention_block  # noqa: E402
from msmtfn.augment import gaussian_noise, homophone_substitute, HomophoneDict, random_mask, speed_perturb  # noqa: E402
from msmtfn.config import ModelConfig  # noqa: E402
from msmtfn.context import GruParams, bigru_forward, gru_scan  # noqa: E402
from msmtfn.dataio import (  # noqa: E402
    CallRecord, SegmentRecord, ingest_segment, load_examples, load_manifest, synth_dataset, write_manifest,
)
from msmtfn.errors import ValidationError  # noqa: E402
from msmtfn.fusion import BottleneckState, FusionParams, bottleneck_layer, bottleneck_stack  # noqa: E402
from msmtfn.gradcheck import grad_check, toy_model_check  # noqa: E402
from msmtfn.heads import HeadParams, merge_label, total_loss  # noqa: E402
from msmtfn.model import MSMTFN  # noqa: E402
from msmtfn.tensor import Tensor  # noqa: E402
from msmtfn.train import AdamW, TrainConfig, accumulate_and_step, evaluate, train  # noqa: E402

from conftest import toy_call  # noqa: E402
from op_cases import OPS  # noqa: E402
from reference import randomize  # noqa: E402

RESULTS: dict = {}

# learnability setup: small widths so 300 steps fit comfortably in the time budget
LEARN_MODEL = dict(d_model=16, n_heads=4, d_ff=32, pathway_depth=2, bottleneck_layers=2, bottleneck_tokens=4,
                   gru_layers=2, gru_hidden=16)
LEARN_LR = 3e-3


def record(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    RESULTS[name] = line
    print(line)
    assert ok, line


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_gradient_integrity():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}
    for name, (f, arrays) in OPS.items():
        worst[f"op:{name}"] = grad_check(f, [T(a, True) for a in arrays])

    blk = randomize(AttentionBlockParams.init(rng, 8, 16, 4), rng)
    cross = randomize(AttentionBlockParams.init(rng, 8, 16, 4, cross=True), rng)
    x, audio, w = T(rng.normal(size=(5, 8))), T(rng.normal(size=(4, 8))), T(rng.normal(size=(5, 8)))
    worst["attention blocks"] = grad_check(
        lambda *_: (cross_attention_block(cross, self_attention_block(blk, x, [1, 1, 0, 1, 1]), audio, [1, 0, 1, 1]) * w).sum(),
        [x, audio] + blk.parameters() + cross.parameters(), eps=1e-5)

    gru = randomize(GruParams.init(rng, 6, 5, 2), rng)
    segs = T(rng.normal(size=(3, 6)))
    worst["bi-gru"] = grad_check(lambda *_: (bigru_forward(segs, None, gru)[1] * 1.7).sum(),
                                 [segs] + gru.parameters())

    heads = HeadParams.init(rng, 6)
    rep = T(rng.normal(size=6))
    worst["heads + total loss"] = grad_check(lambda *_: total_loss(rep, heads, "C"), [rep] + heads.parameters())

    # full model: d_model 8, L_t 6, L_a 10, two segments, four heads; 16 probes per parameter tensor
    worst["full model"] = toy_model_check(seed=0, eps=1e-5, max_coords=16, n_segments=2, text_len=6, audio_len=10)
    elapsed = time.perf_counter() - start
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err <= 1e-4 and elapsed < 120
    record("gradient integrity", ok,
           f"max rel err {err:.2e} ({name}; full model {worst['full model']:.2e}) over {len(worst)} checks "
           f"in {elapsed:.1f}s (limits 1e-4, 120s)")


def test_bottleneck_update_is_exact_mean():
    rng = np.random.default_rng(1)
    L, n, d = 4, 3, 8
    b1, b2 = rng.normal(size=(n, d)), rng.normal(size=(n, d))

    def mock(bott):
        return lambda x, m: T(np.vstack([rng.normal(size=(L, d)), bott]))

    state = BottleneckState(T(rng.normal(size=(L, d))), T(rng.normal(size=(L, d))), T(rng.normal(size=(n, d))),
                            np.array([1, 1, 0, 1], bool))
    out = bottleneck_layer(state, mock(b1), mock(b2))
    ident = bottleneck_layer(state, lambda x, m: x, lambda x, m: x)
    ok = out.T_fsn.data.tobytes() == ((b1 + b2) * 0.5).tobytes() and \
        ident.T_fsn.data.tobytes() == state.T_fsn.data.tobytes()
    record("bottleneck mean update", ok, "T_fsn' == (B1 + B2) / 2 bit-for-bit; identity transformers keep T_fsn")


def test_total_loss_arithmetic():
    rng = np.random.default_rng(2)
    heads = HeadParams.init(rng, 6)
    for lin in heads.heads.values():
        lin.weight.data[:] = 0.0
        lin.bias.data[:] = 0.0
    rep = T(rng.normal(size=6))
    expect = math.log(5) + math.log(4) + math.log(3) + math.log(2)
    worst = max(abs(total_loss(rep, heads, lab).item() - expect) for lab in "ABCDE")
    heads = HeadParams.init(rng, 6)
    from msmtfn.heads import cross_entropy
    single = total_loss(rep, heads, "D", ("five",)).item()
    five_term = cross_entropy(heads.heads["five"](rep), merge_label("D", "five")).item()
    ok = worst <= 1e-6 and abs(expect - 4.7875) < 1e-4 and single == five_term
    record("summed task loss", ok, f"uniform total {expect:.6f} (max dev {worst:.1e}); "
                                   f"five-only loss equals five term: {single == five_term}")


def test_attention_mask_locality():
    rng = np.random.default_rng(3)
    blk = randomize(AttentionBlockParams.init(rng, 8, 16, 4), rng)
    cross = randomize(AttentionBlockParams.init(rng, 8, 16, 4, cross=True), rng)
    fus = randomize(FusionParams.init(ModelConfig.toy(), rng), rng, 0.3)

    def perturb(a, mask):
        b = a.copy()
        b[~mask] = 1e3 * rng.normal(size=b[~mask].shape)
        return b

    x = rng.normal(size=(7, 8))
    m = np.array([1, 0, 1, 1, 0, 1, 0], bool)
    self_ok = self_attention_block(blk, T(x), m).data[m].tobytes() == \
        self_attention_block(blk, T(perturb(x, m)), m).data[m].tobytes()

    text, audio = rng.normal(size=(4, 8)), rng.normal(size=(6, 8))
    am = np.array([1, 1, 0, 1, 0, 0], bool)
    cross_ok = cross_attention_block(cross, T(text), T(audio), am).data.tobytes() == \
        cross_attention_block(cross, T(text), T(perturb(audio, am)), am).data.tobytes()

    t, tm = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    mk = np.array([1, 1, 0, 1, 0], bool)
    a_t, a_f = bottleneck_stack(fus, T(t), T(tm), mk)
    b_t, b_f = bottleneck_stack(fus, T(perturb(t, mk)), T(perturb(tm, mk)), mk)
    bott_ok = a_t.data[mk].tobytes() == b_t.data[mk].tobytes() and a_f.data.tobytes() == b_f.data.tobytes()
    record("attention mask locality", self_ok and cross_ok and bott_ok,
           f"self={self_ok} cross={cross_ok} bottleneck-extended={bott_ok} (bit-exact)")


def test_bigru_decomposition():
    rng = np.random.default_rng(4)
    gru = randomize(GruParams.init(rng, 6, 5, 2), rng)
    x = rng.normal(size=(5, 6))
    seq, ok = x, True
    for layer, (fwd, bwd) in enumerate(gru.layers):
        single = GruParams([gru.layers[layer]])
        out, _ = bigru_forward(T(seq), None, single)
        expect = np.concatenate([gru_scan(T(seq), fwd).data, gru_scan(T(seq[::-1].copy()), bwd).data[::-1]], axis=1)
        ok &= out.data.tobytes() == np.ascontiguousarray(expect).tobytes()
        seq = out.data
    full, _ = bigru_forward(T(x), None, gru)
    ok &= full.data.tobytes() == seq.tobytes()
    record("bi-gru decomposition", ok, "each layer equals [GRU(x) | reverse(GRU(reverse(x)))] bit-for-bit")


def test_label_merge_table():
    groups = {"five": ["A", "B", "C", "D", "E"], "four": ["A", "B", "C", "DE"],
              "three": ["A", "BC", "DE"], "two": ["ABC", "DE"]}
    mismatches = [(lab, task) for task, g in groups.items() for lab in "ABCDE"
                  if merge_label(lab, task) != next(i for i, grp in enumerate(g) if lab in grp)]
    record("label merge table", not mismatches, f"20 label x task cells, mismatches: {mismatches or 'none'}")


def test_shape_contract():
    rng = np.random.default_rng(5)
    problems = []
    for n_samples, text in ((320_000, "字" * 199), (8_000, "你好"), (500_000, "x" * 250)):
        f = ingest_segment(SegmentRecord(1, transcript=text, waveform=rng.normal(size=n_samples) * 0.1))
        if f.audio.shape != (999, 768) or f.text.shape != (199, 768):
            problems.append(f"{n_samples}/{len(text)} -> {f.audio.shape}, {f.text.shape}")
    rejected = []
    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        m, recs = synth_dataset(d, n_calls=5, audio_frames=3, text_tokens=2)
        blob.save_tensor(d / "features" / f"{recs[0].call_id}_1.audio.tblob", np.zeros((1000, 768)))
        blob.save_tensor(d / "features" / f"{recs[1].call_id}_1.text.tblob", np.zeros((200, 768)))
        blob.save_tensor(d / "features" / f"{recs[2].call_id}_1.text.tblob", np.zeros((5, 512)))
        try:
            load_manifest(m)
        except ValidationError as exc:
            rejected = exc.problems
        rec = CallRecord("w1", [SegmentRecord(1, transcript="x", waveform=np.zeros(100))], "A")
        write_manifest([rec], d / "w.jsonl")
        from msmtfn.dataio import write_wav
        write_wav(d / "wav" / "w1_orig_1.wav", np.zeros(100), sample_rate=16000)
        try:
            load_manifest(d / "w.jsonl")
        except ValidationError as exc:
            rejected += exc.problems
    ok = not problems and len(rejected) == 4
    record("shape contract", ok, f"999x768 / 199x768 for 3 inputs ({problems or 'all exact'}); "
                                 f"{len(rejected)}/4 violating files rejected at load")


def test_augmentation_laws():
    rng = np.random.default_rng(6)
    w = rng.normal(size=16_000) * 0.1
    d = HomophoneDict.sample()
    identity = (np.array_equal(gaussian_noise(w, 0.0, rng), w) and np.array_equal(speed_perturb(w, 1.0), w)
                and np.array_equal(random_mask(w, 0.0, 100, rng), w) and homophone_substitute("我是他", d, 0.0, rng) == "我是他")

    def g():
        return np.random.default_rng(42)

    determinism = (gaussian_noise(w, 0.1, g()).tobytes() == gaussian_noise(w, 0.1, g()).tobytes()
                   and speed_perturb(w, 0.9).tobytes() == speed_perturb(w, 0.9).tobytes()
                   and random_mask(w, 0.1, 50, g()).tobytes() == random_mask(w, 0.1, 50, g()).tobytes()
                   and homophone_substitute("我是他的人", d, 0.5, g()) == homophone_substitute("我是他的人", d, 0.5, g()))

    tone = np.sin(2 * np.pi * 200.0 * np.arange(16_000) / 8000)
    out = speed_perturb(tone, 1.25)
    n = 1 << 17
    peak = np.argmax(np.abs(np.fft.rfft(out * np.hanning(out.size), n))) * 8000 / n
    pitch = abs(peak - 200.0) <= 4.0

    sigma = 0.05
    var = (gaussian_noise(np.zeros(100_000), sigma, g())).var()
    noise = abs(var - sigma**2) <= 0.05 * sigma**2
    record("augmentation laws", identity and determinism and pitch and noise,
           f"identity={identity} determinism={determinism} peak {peak:.2f} Hz at x1.25 "
           f"noise var/sigma^2={var / sigma**2:.4f}")


def _learn_config(max_steps=300, patience=5):
    return TrainConfig(learning_rate=LEARN_LR, epochs=10_000, max_steps=max_steps, patience=patience,
                       model=ModelConfig(**LEARN_MODEL))


def test_learnability():
    with tempfile.TemporaryDirectory() as d:
        _, recs = synth_dataset(Path(d) / "sig", n_calls=16, segments_per_call=3, class_signal_strength=1.0, seed=0)
        start = time.perf_counter()
        res = train(load_examples(recs), [], _learn_config())
        elapsed = time.perf_counter() - start
        first = next((row["step"] for row in res.history
                      if min(row[f"train_acc{k}"] for k in (5, 4, 3, 2)) >= 0.95), None)
        accs = {t: res.report.accuracy(t) for t in res.report.tasks}
        learn_ok = first is not None and first <= 300 and min(accs.values()) >= 0.95 and elapsed < 300

        # null signal: fit the planted-free corpus for the full step budget, score unseen calls
        _, null = synth_dataset(Path(d) / "null", n_calls=16, segments_per_call=3, class_signal_strength=0.0, seed=0)
        _, held = synth_dataset(Path(d) / "held", n_calls=400, segments_per_call=3, class_signal_strength=0.0,
                                seed=1, split="val", id_prefix="h")
        start = time.perf_counter()
        null_res = train(load_examples(null), [], _learn_config(patience=0))
        rep = evaluate(null_res.model, load_examples(held))
        null_elapsed = time.perf_counter() - start
    gaps = {}
    for t, m in rep.tasks.items():
        c = m.confusion / m.confusion.sum()
        chance = float(c.sum(axis=1) @ c.sum(axis=0))  # accuracy of a label-independent predictor
        gaps[t] = m.accuracy - chance
    null_ok = all(abs(v) <= 0.10 for v in gaps.values())
    record("learnability", learn_ok and null_ok,
           f">=95% on all tasks at step {first} ({elapsed:.1f}s; final {min(accs.values()):.3f}); "
           f"null-signal accuracy minus chance: " + ", ".join(f"{t} {v:+.3f}" for t, v in gaps.items())
           + f" ({null_elapsed:.1f}s)")


def test_accumulation_equivalence():
    rng = np.random.default_rng(7)
    cfg = ModelConfig.toy(dropout=0.3)
    calls = [toy_call(rng, cfg, call_id=f"c{i}", label="ABCDE"[i], n_segments=1 + i % 3) for i in range(4)]

    def delta(micro):
        model = MSMTFN(cfg)
        before = model.state_dict()
        accumulate_and_step(model, micro, AdamW(model.named_parameters(), lr=1e-3, weight_decay=0.01), seed=0, step=0)
        return {k: v - before[k] for k, v in model.state_dict().items()}

    split = delta([[c] for c in calls])
    joint = delta([calls])
    worst = max(float(np.abs(split[k] - joint[k]).max()) for k in split)
    record("gradient accumulation", worst <= 1e-6, f"4 micro-batches vs 1 combined: max update diff {worst:.1e}")


def test_determinism():
    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        m, _ = synth_dataset(d / "data", n_calls=6, segments_per_call=2, audio_frames=6, text_tokens=4)
        config = TrainConfig(learning_rate=1e-2, epochs=3, dropout=0.3,
                             model=ModelConfig(d_model=8, n_heads=2, d_ff=16, pathway_depth=1, bottleneck_layers=1,
                                               bottleneck_tokens=2, gru_layers=1, gru_hidden=4))
        for run in ("a", "b"):
            train(load_manifest(m), load_manifest(m), copy.deepcopy(config), d / run)
        files = ["model.ckpt", "metrics.csv", "metrics.jsonl", "best.csv", "best.jsonl"]
        same = [f for f in files if (d / "a" / f).read_bytes() == (d / "b" / f).read_bytes()]
    record("determinism", len(same) == len(files), f"{len(same)}/{len(files)} output files byte-identical")


CRITERIA = [
    test_gradient_integrity, test_bottleneck_update_is_exact_mean, test_total_loss_arithmetic,
    test_attention_mask_locality, test_bigru_decomposition, test_label_merge_table, test_shape_contract,
    test_augmentation_laws, test_learnability, test_accumulation_equivalence, test_determinism,
]


if __name__ == "__main__":
    failed = 0
    for fn in CRITERIA:
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
