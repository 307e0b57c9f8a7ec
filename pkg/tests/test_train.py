import numpy as np
import pytest

from msmtfn.config import ModelConfig
from msmtfn.dataio import load_examples, load_manifest, synth_dataset
from msmtfn.errors import NumericError, ValidationError
from msmtfn.model import MSMTFN
from msmtfn.tensor import Tensor
from msmtfn.train import (
    AdamW, TaskMetrics, TrainConfig, accumulate_and_step, batch_loss, evaluate, predictions, train,
)

from conftest import toy_call

SMALL = dict(d_audio=768, d_text=768, d_model=8, n_heads=2, d_ff=16, pathway_depth=1,
             bottleneck_layers=1, bottleneck_tokens=2, gru_layers=1, gru_hidden=4)


def param(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# -- optimiser ------------------------------------------------------------------------

def test_adamw_zero_gradient_no_decay_is_noop():
    p = param([1.0, -2.0])
    p.grad = np.zeros(2)
    AdamW([("p", p)], lr=0.1).step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamw_zero_gradient_decoupled_decay():
    p = param([1.0, -2.0])
    p.grad = np.zeros(2)
    AdamW([("p", p)], lr=0.1, weight_decay=0.5).step()
    np.testing.assert_array_equal(p.data, np.array([1.0, -2.0]) * (1 - 0.1 * 0.5))


def test_adamw_first_step_closed_form():
    p = param([0.5, 3.0, -1.0])
    p.grad = np.ones(3)
    AdamW([("p", p)], lr=1e-3).step()
    np.testing.assert_allclose(p.data, np.array([0.5, 3.0, -1.0]) - 1e-3 / (1 + 1e-8), rtol=0, atol=1e-15)


def test_adamw_skips_parameters_without_gradient():
    p = param([1.0])
    AdamW([("p", p)], lr=0.1, weight_decay=0.5).step()
    assert p.data[0] == 1.0


def test_adamw_aborts_on_nonfinite_gradient():
    a, b = param([1.0]), param([1.0, 2.0])
    a.grad, b.grad = np.ones(1), np.array([0.0, np.inf])
    with pytest.raises(NumericError, match="b at flat index 1"):
        AdamW([("a", a), ("b", b)], lr=0.1).step()
    assert a.data[0] == 1.0


# -- accumulation --------------------------------------------------------------------

def calls(rng, cfg, n):
    return [toy_call(rng, cfg, call_id=f"c{i}", label="ABCDE"[i % 5], n_segments=1 + i % 3) for i in range(n)]


def step_delta(cfg, micro, seed=0):
    model = MSMTFN(cfg)
    before = model.state_dict()
    accumulate_and_step(model, micro, AdamW(model.named_parameters(), lr=1e-3), seed=seed, step=3)
    return {k: model.state_dict()[k] - before[k] for k in before}, model


def test_accumulation_single_batch_is_plain_step(rng):
    cfg = ModelConfig.toy(dropout=0.3)
    batch = calls(rng, cfg, 2)
    model = MSMTFN(cfg)
    opt = AdamW(model.named_parameters(), lr=1e-3)
    loss = batch_loss(model, batch, None, 0, 3)
    loss.backward()
    opt.step()
    delta, _ = step_delta(cfg, [batch])
    init = MSMTFN(cfg).state_dict()
    for k, v in model.state_dict().items():
        assert (v - init[k]).tobytes() == delta[k].tobytes()


def test_accumulation_of_identical_copies(rng):
    cfg = ModelConfig.toy()
    batch = calls(rng, cfg, 2)
    one, _ = step_delta(cfg, [batch])
    four, _ = step_delta(cfg, [batch] * 4)
    for k in one:
        np.testing.assert_allclose(four[k], one[k], atol=1e-12)


@pytest.mark.parametrize("n_micro", [2, 4])
def test_accumulation_equals_combined_batch(rng, n_micro):
    cfg = ModelConfig.toy(dropout=0.3)
    batch = calls(rng, cfg, 4)
    size = 4 // n_micro
    split, m1 = step_delta(cfg, [batch[i : i + size] for i in range(0, 4, size)])
    joint, m2 = step_delta(cfg, [batch])
    for k in split:
        np.testing.assert_allclose(split[k], joint[k], rtol=0, atol=1e-6)


# -- ablations -------------------------------------------------------------------------

def test_no_bottleneck_leaves_bottleneck_gradients_zero(rng):
    cfg = ModelConfig.toy(use_bottleneck=False)
    model = MSMTFN(cfg)
    model.loss(toy_call(rng, cfg)).backward()
    for name, p in model.named_parameters():
        if name.startswith(("fusion.bottleneck", "fusion.fsn", "fusion.text_stack")):
            assert p.grad is None or not p.grad.any(), name
        elif name.startswith("fusion.fused_stack"):
            assert p.grad is not None


def test_no_multitask_updates_only_five_head(rng):
    cfg = ModelConfig.toy()
    config = TrainConfig(no_multitask=True, model=cfg)
    model = MSMTFN(config.model_config())
    before = model.state_dict()
    accumulate_and_step(model, [calls(rng, cfg, 2)], AdamW(model.named_parameters(), lr=1e-2, weight_decay=0.1),
                        tasks=config.loss_tasks())
    after = model.state_dict()
    for name in before:
        if name.startswith("heads."):
            assert np.array_equal(before[name], after[name]) == (not name.startswith("heads.heads.five"))


def test_train_config_ablation_wiring():
    cfg = TrainConfig(no_bottleneck=True, no_multitask=True, dropout=0.1, seed=7, model=ModelConfig.toy())
    mc = cfg.model_config()
    assert (mc.use_bottleneck, mc.dropout, mc.seed) == (False, 0.1, 7)
    assert cfg.loss_tasks() == ("five",)
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=0, accumulation_steps=0)


# -- metrics ---------------------------------------------------------------------------

def test_task_metrics_perfect_and_recomputable():
    m = TaskMetrics("three", np.diag([3, 2, 4]))
    assert m.accuracy == 1.0 and m.macro_f1 == 1.0
    c = np.array([[2, 1, 0], [0, 3, 1], [1, 0, 2]])
    m = TaskMetrics("three", c)
    assert m.accuracy == np.trace(c) / c.sum()
    f1 = [2 * c[i, i] / (c[i].sum() + c[:, i].sum()) for i in range(3)]
    assert abs(m.macro_f1 - np.mean(f1)) < 1e-15


def test_constant_predictor_balanced_accuracy(tmp_path):
    m, _ = synth_dataset(tmp_path, n_calls=10, audio_frames=3, text_tokens=2)
    ex = load_examples(load_manifest(m))
    model = MSMTFN(ModelConfig(**SMALL))
    for lin in model.heads.heads.values():
        lin.weight.data[:] = 0.0
        lin.bias.data[:] = 0.0
        lin.bias.data[0] = 1.0
    rep = evaluate(model, ex)
    assert rep.accuracy("five") == 0.2
    assert rep.accuracy("two") == 0.6  # A, B, C collapse into class 0
    assert (rep.tasks["five"].confusion[:, 1:] == 0).all()


def test_evaluate_rejects_mismatched_tasks_and_unlabeled(rng):
    cfg = ModelConfig.toy(tasks=("five", "two"))
    model = MSMTFN(cfg)
    ex = [toy_call(rng, cfg)]
    with pytest.raises(ValidationError, match="three"):
        evaluate(model, ex, tasks=("five", "three"))
    ex[0].label = None
    with pytest.raises(ValidationError):
        evaluate(model, ex)


def test_predictions_rows(rng):
    cfg = ModelConfig.toy()
    model = MSMTFN(cfg)
    rows = predictions(model, [toy_call(rng, cfg, call_id="q1")])
    assert rows[0]["call_id"] == "q1" and set(rows[0]["predictions"]) == {"five", "four", "three", "two"}
    p = rows[0]["predictions"]["three"]
    assert len(p["probabilities"]) == 3 and abs(sum(p["probabilities"]) - 1) < 1e-12


# -- checkpoints and training ------------------------------------------------------------

def test_model_save_load_round_trip(tmp_path, rng):
    cfg = ModelConfig.toy(seed=3)
    model = MSMTFN(cfg)
    model.save(tmp_path / "m.ckpt", {"note": "x"})
    back, meta = MSMTFN.load(tmp_path / "m.ckpt")
    assert back.config == cfg and meta["note"] == "x"
    call = toy_call(rng, cfg)
    assert back.loss(call).item() == model.loss(call).item()


def test_load_state_dict_itemizes_problems():
    model = MSMTFN(ModelConfig.toy())
    state = model.state_dict()
    name = next(iter(state))
    state[name] = np.zeros((1, 1))
    state.pop("heads.heads.two.bias")
    state["bogus"] = np.zeros(1)
    with pytest.raises(ValidationError) as err:
        model.load_state_dict(state)
    assert len(err.value.problems) == 3


def small_train(tmp_path, name, **kw):
    m, _ = synth_dataset(tmp_path / "data", n_calls=5, segments_per_call=2, audio_frames=4, text_tokens=3)
    config = TrainConfig(learning_rate=1e-2, accumulation_steps=2, epochs=2, dropout=0.3,
                         model=ModelConfig(**SMALL), **kw)
    return train(load_manifest(m), load_manifest(m), config, tmp_path / name)


def test_training_is_byte_deterministic(tmp_path):
    a = small_train(tmp_path, "a")
    b = small_train(tmp_path, "b")
    for f in ("model.ckpt", "metrics.csv", "metrics.jsonl", "best.csv", "best.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    assert a.history == b.history
    small_train(tmp_path, "c", seed=1)
    assert (tmp_path / "a" / "model.ckpt").read_bytes() != (tmp_path / "c" / "model.ckpt").read_bytes()


def test_training_outputs_and_best_selection(tmp_path):
    res = small_train(tmp_path, "run")
    assert res.steps == 2 * 3  # 5 calls / 2 per step, rounded up, over 2 epochs
    best = max(range(len(res.history)), key=lambda e: (res.history[e]["val_acc5"], -e))
    assert res.best_epoch == best
    model, meta = MSMTFN.load(res.checkpoint)
    assert meta["best_epoch"] == best and meta["train_config"]["learning_rate"] == 1e-2
    header = (tmp_path / "run" / "metrics.csv").read_text().splitlines()[0]
    assert header.startswith("epoch,step,train_loss") and "val_acc5" in header


def test_training_rejects_empty_split():
    with pytest.raises(ValidationError):
        train([], [], TrainConfig())


def test_nonfinite_loss_aborts(tmp_path, rng):
    cfg = ModelConfig.toy()
    bad = toy_call(rng, cfg)
    bad.segments[0].text[0, 0] = np.nan
    model = MSMTFN(cfg)
    with pytest.raises(NumericError):
        accumulate_and_step(model, [[bad]], AdamW(model.named_parameters()))
