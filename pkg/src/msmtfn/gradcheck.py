"""Central-difference gradient checking against the tape."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .tensor import Tensor


def _eval(f, inputs) -> float:
    out = f(*inputs)
    value = out.item() if isinstance(out, Tensor) else float(out)
    return value


def grad_check(
    f: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    eps: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f(*inputs)`` must return a scalar tensor. Each coordinate of each input is
    nudged by ``±eps`` in place and restored. The relative error for a
    coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``. With ``max_coords`` only
    that many randomly chosen coordinates per input are probed.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    for x in inputs:
        if x.dtype != np.float64:
            raise TypeError("grad_check needs float64 inputs")
        x.requires_grad = True
        x.grad = None
    out = f(*inputs)
    if not np.isfinite(out.data).all():
        raise NumericError("function value is not finite at the base point")
    out.backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for which, x in enumerate(inputs):
        flat = x.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        a_flat = analytic[which].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = _eval(f, inputs)
            flat[i] = orig - eps
            fm = _eval(f, inputs)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite value probing input {which} at coordinate {int(i)}")
            num = (fp - fm) / (2.0 * eps)
            a = a_flat[i]
            if not np.isfinite(a):
                raise NumericError(f"non-finite analytic gradient for input {which} at coordinate {int(i)}")
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def toy_model_check(seed: int = 0, eps: float = 1e-5, max_coords: int | None = 4,
                    n_segments: int = 2, text_len: int = 6, audio_len: int = 10) -> float:
    """Gradient check of the summed four-task loss of a small model over all parameter tensors.

    ``max_coords`` limits the probed coordinates per tensor (None probes all).
    """
    from types import SimpleNamespace

    from .config import ModelConfig
    from .model import MSMTFN

    cfg = ModelConfig.toy(seed=seed)
    model = MSMTFN(cfg)
    rng = np.random.default_rng(seed)
    segments = [
        SimpleNamespace(
            audio=rng.normal(size=(audio_len, cfg.d_audio)),
            audio_mask=np.ones(audio_len, dtype=bool),
            text=rng.normal(size=(text_len, cfg.d_text)),
            text_mask=np.ones(text_len, dtype=bool),
        )
        for _ in range(n_segments)
    ]
    call = SimpleNamespace(segments=segments, label=int(rng.integers(5)))
    return grad_check(lambda *_: model.loss(call), model.parameters(), eps=eps, max_coords=max_coords, seed=seed)
