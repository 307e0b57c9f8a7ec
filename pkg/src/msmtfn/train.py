"""Optimiser, gradient accumulation, training loop and metrics."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .augment import AugmentPolicy, HomophoneDict, expand_dataset
from .config import ALL_TASKS, ModelConfig
from .dataio import CallExample, CallRecord, load_examples, load_manifest
from .errors import NumericError, ValidationError
from .heads import TASKS, merge_label, predict, total_loss
from .model import MSMTFN
from .rng import generator
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    accumulation_steps: int = 4
    weight_decay: float = 0.01
    dropout: float = 0.3
    epochs: int = 50
    patience: int = 10
    batch_size: int = 1
    max_steps: Optional[int] = None
    seed: int = 0
    stub_seed: int = 0
    no_bottleneck: bool = False
    no_multitask: bool = False
    disable_audio_aug: bool = False
    disable_text_aug: bool = False
    remove_silence: bool = False
    track_train_metrics: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        problems = []
        for name in ("learning_rate", "accumulation_steps", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.weight_decay < 0:
            problems.append("weight_decay must be >= 0")
        if self.patience < 0:
            problems.append("patience must be >= 0 (0 disables early stopping)")
        if self.max_steps is not None and self.max_steps <= 0:
            problems.append("max_steps must be positive")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must be in [0, 1)")
        if problems:
            raise ValidationError("invalid TrainConfig", problems)

    def model_config(self) -> ModelConfig:
        return dataclasses.replace(
            self.model, dropout=self.dropout, use_bottleneck=not self.no_bottleneck, seed=self.seed
        )

    def loss_tasks(self) -> tuple:
        return ("five",) if self.no_multitask else tuple(t for t in ALL_TASKS if t in self.model.tasks)


# -- optimiser -------------------------------------------------------------------

class AdamW:
    """Adaptive moments with weight decay applied directly to the weights.

    Parameters whose ``grad`` is None took no part in the loss and are left
    untouched, decay included.
    """

    def __init__(self, named_params, lr: float = 1e-5, weight_decay: float = 0.0,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self) -> None:
        for name, p in self.named_params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                bad = int(np.flatnonzero(~np.isfinite(p.grad.reshape(-1)))[0])
                raise NumericError(f"non-finite gradient in {name} at flat index {bad}; step aborted")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (_, p) in enumerate(self.named_params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = (p.data * (1.0 - self.lr * self.weight_decay) - self.lr * update).astype(p.data.dtype)


@dataclass
class StepResult:
    loss: float
    n_calls: int


def batch_loss(model: MSMTFN, calls: Sequence[CallExample], tasks, seed: int, step: int, training: bool = True) -> Tensor:
    """Mean per-call loss. Dropout streams are keyed by (seed, step, call, variant) only."""
    total = None
    for call in calls:
        rng = generator(seed, "dropout", step, call.call_id, call.variant) if training else None
        loss = model.loss(call, rng, tasks)
        total = loss if total is None else total + loss
    return total * (1.0 / len(calls))


def accumulate_and_step(model: MSMTFN, micro_batches: Sequence[Sequence[CallExample]], optimizer: AdamW,
                        tasks=None, seed: int = 0, step: int = 0, training: bool = True) -> StepResult:
    """Sum gradients of N micro-batches, scale by 1/N, take one optimiser step."""
    if not micro_batches:
        raise ValueError("need at least one micro-batch")
    model.zero_grad()
    losses = []
    for mb in micro_batches:
        loss = batch_loss(model, mb, tasks, seed, step, training)
        if not np.isfinite(loss.data).all():
            raise NumericError(f"non-finite loss at step {step}")
        loss.backward()
        losses.append(loss.item())
    scale = 1.0 / len(micro_batches)
    for p in model.parameters():
        if p.grad is not None:
            p.grad = p.grad * scale
    optimizer.step()
    return StepResult(float(np.mean(losses)), sum(len(mb) for mb in micro_batches))


# -- metrics ------------------------------------------------------------------------

@dataclass
class TaskMetrics:
    task: str
    confusion: np.ndarray  # rows: gold, columns: predicted

    @property
    def k(self) -> int:
        return self.confusion.shape[0]

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum()) if self.n else float("nan")

    @property
    def macro_f1(self) -> float:
        """Mean F1 over classes that occur in gold or predictions."""
        c = self.confusion.astype(np.float64)
        tp = np.diag(c)
        denom = c.sum(axis=0) + c.sum(axis=1)
        present = denom > 0
        if not present.any():
            return float("nan")
        return float(np.mean(2 * tp[present] / denom[present]))

    def to_dict(self) -> dict:
        return {"task": self.task, "k": self.k, "n": self.n, "accuracy": self.accuracy,
                "macro_f1": self.macro_f1, "confusion": self.confusion.tolist()}


@dataclass
class MetricsReport:
    tasks: dict
    loss: Optional[float] = None
    loss_curve: list = field(default_factory=list)

    def accuracy(self, task: str) -> float:
        return self.tasks[task].accuracy

    def to_dict(self) -> dict:
        return {"loss": self.loss, "loss_curve": list(self.loss_curve),
                "tasks": {t: m.to_dict() for t, m in self.tasks.items()}}

    def summary(self) -> str:
        return "  ".join(f"ACC{TASKS[t].k}={m.accuracy:.3f} F1={m.macro_f1:.3f}" for t, m in self.tasks.items())


def evaluate(model: MSMTFN, examples: Sequence[CallExample], tasks=None) -> MetricsReport:
    """Per-task accuracy, macro-F1 and confusion matrices over labelled calls."""
    tasks = tuple(tasks) if tasks is not None else model.heads.tasks
    missing = [t for t in tasks if t not in model.heads.heads]
    if missing:
        raise ValidationError(f"model has no head for task(s) {missing}")
    unlabeled = [e.call_id for e in examples if e.label is None]
    if unlabeled:
        raise ValidationError("cannot evaluate unlabeled calls", [f"call {c} has no label" for c in unlabeled])
    conf = {t: np.zeros((TASKS[t].k, TASKS[t].k), dtype=np.int64) for t in tasks}
    loss_sum = 0.0
    with no_grad():
        for ex in examples:
            rep = model.call_vector(ex.segments)
            loss_sum += total_loss(rep, model.heads, ex.label, tasks).item()
            pred = predict(rep, model.heads)
            for t in tasks:
                conf[t][merge_label(ex.label, t), pred[t][0]] += 1
    return MetricsReport({t: TaskMetrics(t, conf[t]) for t in tasks},
                         loss_sum / len(examples) if examples else None)


def predictions(model: MSMTFN, examples: Sequence[CallExample]) -> list[dict]:
    out = []
    for ex in examples:
        pred = model.predict(ex)
        out.append({
            "call_id": ex.call_id,
            "variant": ex.variant,
            "predictions": {t: {"class": c, "probabilities": [float(x) for x in probs]} for t, (c, probs) in pred.items()},
        })
    return out


def write_jsonl(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def write_report(report: MetricsReport, out_dir, stem: str = "eval") -> None:
    """``<stem>.csv`` (one row per task) and ``<stem>.jsonl`` (with confusion matrices)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{stem}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "k", "n", "accuracy", "macro_f1"])
        for m in report.tasks.values():
            w.writerow([m.task, m.k, m.n, repr(m.accuracy), repr(m.macro_f1)])
    write_jsonl([m.to_dict() for m in report.tasks.values()], out_dir / f"{stem}.jsonl")


# -- training loop ------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: MSMTFN
    history: list
    best_epoch: int
    steps: int
    report: MetricsReport
    checkpoint: Optional[Path] = None


def _expand_if_requested(records, config: TrainConfig, policy, homophones):
    if policy is None:
        return list(records)
    overrides = {cid: (0 if config.disable_audio_aug else a, 0 if config.disable_text_aug else t)
                 for cid, (a, t) in policy.per_record.items()}
    policy = dataclasses.replace(
        policy,
        audio_multiplicity=0 if config.disable_audio_aug else policy.audio_multiplicity,
        text_multiplicity=0 if config.disable_text_aug else policy.text_multiplicity,
        per_record=overrides,
    )
    return expand_dataset(records, policy, homophones)


def _history_row(epoch, step, train_loss, train_rep, val_rep) -> dict:
    row = {"epoch": epoch, "step": step, "train_loss": train_loss}
    for prefix, rep in (("train", train_rep), ("val", val_rep)):
        if rep is None:
            continue
        row[f"{prefix}_eval_loss"] = rep.loss
        for t, m in rep.tasks.items():
            row[f"{prefix}_acc{m.k}"] = m.accuracy
            row[f"{prefix}_f1{m.k}"] = m.macro_f1
    return row


def train(train_records: Sequence, val_records: Sequence = (), config: TrainConfig | None = None,
          out_dir=None, policy: AugmentPolicy | None = None, homophones: HomophoneDict | None = None) -> TrainResult:
    """Fit a model. Records may be CallRecords (loaded here) or ready CallExamples.

    Model selection keeps the epoch with the best five-category accuracy on
    the validation calls (training calls when no validation set is given).
    """
    config = config or TrainConfig()
    if not train_records:
        raise ValidationError("training split is empty")
    if isinstance(train_records[0], CallRecord):
        train_records = _expand_if_requested(train_records, config, policy, homophones)
        examples = load_examples(train_records, config.stub_seed, config.remove_silence)
    else:
        examples = list(train_records)
    if val_records and isinstance(val_records[0], CallRecord):
        val_examples = load_examples(val_records, config.stub_seed, config.remove_silence)
    else:
        val_examples = list(val_records)
    originals = [e for e in examples if e.variant == "orig"] or examples

    model = MSMTFN(config.model_config())
    optimizer = AdamW(model.named_parameters(), config.learning_rate, config.weight_decay)
    tasks = config.loss_tasks()
    history, step = [], 0
    best_score, best_epoch, best_state, best_report = -1.0, -1, None, None
    stale = 0
    for epoch in range(config.epochs):
        order = generator(config.seed, "shuffle", epoch).permutation(len(examples))
        batches = [[examples[i] for i in order[s : s + config.batch_size]]
                   for s in range(0, len(order), config.batch_size)]
        losses = []
        for g in range(0, len(batches), config.accumulation_steps):
            res = accumulate_and_step(model, batches[g : g + config.accumulation_steps], optimizer,
                                      tasks, config.seed, step)
            losses.append(res.loss)
            step += 1
            if config.max_steps is not None and step >= config.max_steps:
                break
        train_rep = evaluate(model, originals) if config.track_train_metrics else None
        val_rep = evaluate(model, val_examples) if val_examples else None
        history.append(_history_row(epoch, step, float(np.mean(losses)), train_rep, val_rep))
        ref = val_rep if val_rep is not None else train_rep
        score = ref.accuracy("five") if ref is not None else -float(np.mean(losses))
        if score > best_score:
            best_score, best_epoch, best_state, best_report, stale = score, epoch, model.state_dict(), ref, 0
        else:
            stale += 1
        log.info("epoch %d step %d loss %.4f %s", epoch, step, history[-1]["train_loss"],
                 ref.summary() if ref is not None else "")
        if config.patience and stale >= config.patience:
            break
        if config.max_steps is not None and step >= config.max_steps:
            break
    model.load_state_dict(best_state)
    if best_report is None:
        best_report = evaluate(model, originals)
    best_report.loss_curve = [row["train_loss"] for row in history]

    ckpt = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "model.ckpt"
        model.save(ckpt, {"best_epoch": best_epoch, "steps": step,
                          "train_config": {k: v for k, v in dataclasses.asdict(config).items() if k != "model"}})
        write_history(history, out_dir)
        write_report(best_report, out_dir, "best")
    return TrainResult(model, history, best_epoch, step, best_report, ckpt)


def write_history(history: Sequence[dict], out_dir) -> None:
    out_dir = Path(out_dir)
    keys = []
    for row in history:
        keys.extend(k for k in row if k not in keys)
    with open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in history:
            w.writerow([repr(row[k]) if isinstance(row.get(k), float) else row.get(k, "") for k in keys])
    write_jsonl(history, out_dir / "metrics.jsonl")


def evaluate_checkpoint(checkpoint, manifest, stub_seed: int = 0, remove_silence: bool = False) -> MetricsReport:
    model, _ = MSMTFN.load(checkpoint)
    examples = load_examples(load_manifest(manifest), stub_seed, remove_silence)
    return evaluate(model, examples)
