"""Bidirectional GRU over the ordered segment vectors of a call."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MaskError, ShapeError
from .nn import Params, glorot, zeros
from .tensor import Tensor, concat, dropout, sigmoid, stack, tanh


@dataclass
class GruDirection(Params):
    """Gate weights stacked as [update | reset | candidate] along the last axis."""

    w_x: Tensor  # [d_in, 3h]
    w_h: Tensor  # [h, 3h]
    bias: Tensor  # [3h]

    @classmethod
    def init(cls, rng, d_in: int, d_h: int, dtype=np.float64) -> "GruDirection":
        w_x = np.concatenate([glorot(rng, d_in, d_h, dtype).data for _ in range(3)], axis=1)
        w_h = np.concatenate([glorot(rng, d_h, d_h, dtype).data for _ in range(3)], axis=1)
        return cls(Tensor(w_x, requires_grad=True), Tensor(w_h, requires_grad=True), zeros(3 * d_h, dtype))

    @property
    def d_in(self) -> int:
        return self.w_x.shape[0]

    @property
    def d_h(self) -> int:
        return self.w_h.shape[0]


@dataclass
class GruParams(Params):
    layers: list  # per layer: [forward GruDirection, backward GruDirection]

    @classmethod
    def init(cls, rng, d_in: int, d_h: int, n_layers: int = 2, dtype=np.float64) -> "GruParams":
        layers = []
        for i in range(n_layers):
            width = d_in if i == 0 else 2 * d_h
            layers.append([GruDirection.init(rng, width, d_h, dtype), GruDirection.init(rng, width, d_h, dtype)])
        return cls(layers)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def d_h(self) -> int:
        return self.layers[0][0].d_h


def _gates(gx: Tensor, h: Tensor, p: GruDirection) -> Tensor:
    n = p.d_h
    gh = h @ p.w_h
    z = sigmoid(gx[:n] + gh[:n])
    r = sigmoid(gx[n : 2 * n] + gh[n : 2 * n])
    cand = tanh(gx[2 * n :] + r * gh[2 * n :])
    return (1.0 - z) * cand + z * h


def gru_cell(x: Tensor, h: Tensor, p: GruDirection) -> Tensor:
    """h' = (1 - z) * n + z * h with the reset gate applied to U_n h."""
    if x.shape != (p.d_in,) or h.shape != (p.d_h,):
        raise ShapeError(f"gru_cell expects x[{p.d_in}], h[{p.d_h}]; got {x.shape}, {h.shape}")
    return _gates(x @ p.w_x + p.bias, h, p)


def gru_scan(xs: Tensor, p: GruDirection) -> Tensor:
    """Unidirectional GRU from a zero state; returns every hidden state [l, h]."""
    if xs.ndim != 2 or xs.shape[1] != p.d_in:
        raise ShapeError(f"gru_scan expects [l, {p.d_in}], got {xs.shape}")
    # per-step projections: a batched product can round a row differently
    # depending on its position, which would break exact reversal identities
    h = Tensor(np.zeros(p.d_h, dtype=xs.dtype))
    states = []
    for t in range(xs.shape[0]):
        h = _gates(xs[t] @ p.w_x + p.bias, h, p)
        states.append(h)
    return stack(states, axis=0)


def _reverse(x: Tensor) -> Tensor:
    return x[::-1]


def _scatter_rows(rows: Tensor, idx: np.ndarray, total: int) -> Tensor:
    out = np.zeros((total,) + rows.shape[1:], dtype=rows.dtype)
    out[idx] = rows.data
    return Tensor.from_op(out, (rows,), lambda g: (g[idx],))


def bigru_forward(segs: Tensor, seg_mask, params: GruParams, *, rate: float = 0.0, rng=None) -> tuple[Tensor, Tensor]:
    """Run the stacked Bi-GRU over the valid segments.

    Returns per-step outputs [l, 2h] (zeros at padded steps) and h_n
    [2 * n_layers * h], which holds for each layer the last forward state and
    the backward state at the first valid step.
    """
    if segs.ndim != 2 or segs.shape[0] == 0:
        raise ShapeError(f"bigru_forward needs a nonempty [l, d] sequence, got {segs.shape}")
    mask = np.ones(segs.shape[0], dtype=bool) if seg_mask is None else np.asarray(seg_mask, dtype=bool).reshape(-1)
    if mask.shape[0] != segs.shape[0]:
        raise ShapeError(f"segment mask length {mask.shape[0]} != {segs.shape[0]} segments")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise MaskError("call has no valid segment")
    x = segs if idx.size == segs.shape[0] else segs[idx]
    finals = []
    for i, (fwd, bwd) in enumerate(params.layers):
        if i > 0:
            x = dropout(x, rate, rng, rng is not None)
        hf = gru_scan(x, fwd)
        hb = _reverse(gru_scan(_reverse(x), bwd))
        x = concat([hf, hb], axis=1)
        finals.extend([hf[-1], hb[0]])
    outputs = x if idx.size == segs.shape[0] else _scatter_rows(x, idx, segs.shape[0])
    return outputs, concat(finals, axis=0)


def call_representation(h_n: Tensor, d_h: int) -> Tensor:
    """Top-layer final forward and backward states, concatenated."""
    return h_n[-2 * d_h :]
