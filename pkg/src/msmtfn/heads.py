"""Task-specific classification heads, label merging and the summed loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ALL_TASKS
from .nn import LinearParams, Params
from .tensor import Tensor, log_softmax, no_grad

LABELS = "ABCDE"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    k: int
    merge: tuple  # five-category index -> class index

    def __post_init__(self):
        if len(self.merge) != 5:
            raise ValueError(f"{self.name}: merge map must cover all five labels")
        if sorted(set(self.merge)) != list(range(self.k)):
            raise ValueError(f"{self.name}: merge map must be onto 0..{self.k - 1}")
        if any(b < a for a, b in zip(self.merge, self.merge[1:])):
            raise ValueError(f"{self.name}: merge groups must be contiguous")


# A, B, C, D, E
TASKS = {
    "five": TaskSpec("five", 5, (0, 1, 2, 3, 4)),
    "four": TaskSpec("four", 4, (0, 1, 2, 3, 3)),
    "three": TaskSpec("three", 3, (0, 1, 1, 2, 2)),
    "two": TaskSpec("two", 2, (0, 0, 0, 1, 1)),
}


def label_index(label) -> int:
    """Accept 'A'..'E' or 0..4."""
    if isinstance(label, str):
        if len(label) != 1 or label.upper() not in LABELS:
            raise ValueError(f"unknown label {label!r}")
        return LABELS.index(label.upper())
    idx = int(label)
    if not 0 <= idx < 5:
        raise ValueError(f"five-category label out of range: {label}")
    return idx


def merge_label(label, task: TaskSpec | str) -> int:
    spec = TASKS[task] if isinstance(task, str) else task
    return spec.merge[label_index(label)]


@dataclass
class HeadParams(Params):
    heads: dict  # task name -> LinearParams

    @classmethod
    def init(cls, rng, d_call: int, tasks=ALL_TASKS, dtype=np.float64) -> "HeadParams":
        return cls({t: LinearParams.init(rng, d_call, TASKS[t].k, dtype) for t in ALL_TASKS if t in tasks})

    @property
    def tasks(self) -> tuple:
        return tuple(self.heads)


def cross_entropy(logits: Tensor, gold: int) -> Tensor:
    """-log softmax(logits)[gold] for a single [k] logit vector."""
    k = logits.shape[-1]
    if not 0 <= gold < k:
        raise ValueError(f"gold class {gold} outside 0..{k - 1}")
    return -log_softmax(logits)[gold]


def head_logits(call_repr: Tensor, heads: HeadParams) -> dict:
    return {name: lin(call_repr) for name, lin in heads.heads.items()}


def task_losses(call_repr: Tensor, heads: HeadParams, five_label, tasks=None) -> dict:
    gold = label_index(five_label)
    active = heads.tasks if tasks is None else tuple(t for t in heads.tasks if t in tasks)
    return {t: cross_entropy(heads.heads[t](call_repr), TASKS[t].merge[gold]) for t in active}


def total_loss(call_repr: Tensor, heads: HeadParams, five_label, tasks=None) -> Tensor:
    """Unweighted sum of the per-task cross-entropies, accumulated in task order."""
    losses = list(task_losses(call_repr, heads, five_label, tasks).values())
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    return total


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def predict(call_repr: Tensor, heads: HeadParams) -> dict:
    """Per task: (class index, probability vector). Ties go to the lower index."""
    with no_grad():
        logits = head_logits(call_repr, heads)
    out = {}
    for name, lg in logits.items():
        probs = softmax_np(lg.data)
        out[name] = (int(np.argmax(lg.data)), probs)
    return out
