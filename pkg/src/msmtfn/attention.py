"""Multi-head attention and the pre-norm transformer blocks built from it."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError
from .nn import LayerNormParams, LinearParams, Params
from .tensor import Tensor, dropout, layer_norm, relu, softmax_masked


@dataclass
class AttentionParams(Params):
    """Projection weights. The key projection has no bias: softmax is invariant
    to it, so it could never receive a gradient."""

    q: LinearParams
    k: LinearParams
    v: LinearParams
    o: LinearParams

    @classmethod
    def init(cls, rng, d_model: int, dtype=np.float64) -> "AttentionParams":
        return cls(
            LinearParams.init(rng, d_model, d_model, dtype),
            LinearParams.init(rng, d_model, d_model, dtype, bias=False),
            LinearParams.init(rng, d_model, d_model, dtype),
            LinearParams.init(rng, d_model, d_model, dtype),
        )


@dataclass
class FeedForwardParams(Params):
    inner: LinearParams
    outer: LinearParams

    @classmethod
    def init(cls, rng, d_model: int, d_ff: int, dtype=np.float64) -> "FeedForwardParams":
        return cls(LinearParams.init(rng, d_model, d_ff, dtype), LinearParams.init(rng, d_ff, d_model, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(relu(self.inner(x)))


@dataclass
class AttentionBlockParams(Params):
    """Weights of one pre-norm block.

    ``norm_kv`` is only present for cross-attention blocks, where keys and
    values come from a second sequence with its own normalisation.
    """

    attn: AttentionParams
    ffn: FeedForwardParams
    norm_attn: LayerNormParams
    norm_ffn: LayerNormParams
    norm_kv: Optional[LayerNormParams] = None
    n_heads: int = 4

    @classmethod
    def init(cls, rng, d_model: int, d_ff: int, n_heads: int = 4, cross: bool = False, dtype=np.float64):
        if n_heads < 1 or d_model % n_heads:
            raise ShapeError(f"n_heads={n_heads} must divide d_model={d_model}")
        return cls(
            attn=AttentionParams.init(rng, d_model, dtype),
            ffn=FeedForwardParams.init(rng, d_model, d_ff, dtype),
            norm_attn=LayerNormParams.init(d_model, dtype),
            norm_ffn=LayerNormParams.init(d_model, dtype),
            norm_kv=LayerNormParams.init(d_model, dtype) if cross else None,
            n_heads=n_heads,
        )

    @property
    def d_model(self) -> int:
        return self.attn.q.weight.shape[0]


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    length, d = x.shape
    return x.reshape(length, n_heads, d // n_heads).transpose(1, 0, 2)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_mask=None, n_heads: int = 1) -> Tensor:
    """softmax(q kᵀ / sqrt(d_k)) v computed per head, heads concatenated.

    q: [L_q, d], k and v: [L_k, d], key_mask: [L_k] (nonzero = attendable).
    No projections are applied here.
    """
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError(f"attention expects 2-D inputs, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[1] != k.shape[1] or k.shape[1] != v.shape[1]:
        raise ShapeError(f"q/k/v model dims disagree: {q.shape}, {k.shape}, {v.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"keys and values differ in length: {k.shape} vs {v.shape}")
    d = q.shape[1]
    if d % n_heads:
        raise ShapeError(f"n_heads={n_heads} does not divide model dim {d}")
    d_k = d // n_heads
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scores = (qh @ kh.transpose(0, 2, 1)) * (1.0 / np.sqrt(d_k))
    mask = None if key_mask is None else np.asarray(
        key_mask.data if isinstance(key_mask, Tensor) else key_mask
    ).reshape(1, 1, -1)
    weights = softmax_masked(scores, mask)
    out = weights @ vh
    return out.transpose(1, 0, 2).reshape(q.shape[0], d)


def multi_head_attention(p: AttentionParams, x_q: Tensor, x_kv: Tensor, key_mask, n_heads: int) -> Tensor:
    att = scaled_dot_attention(p.q(x_q), p.k(x_kv), p.v(x_kv), key_mask, n_heads)
    return p.o(att)


def _norm(p: LayerNormParams, x: Tensor) -> Tensor:
    return layer_norm(x, p.gain, p.offset)


def self_attention_block(
    p: AttentionBlockParams, x: Tensor, mask=None, *, rate: float = 0.0, rng=None
) -> Tensor:
    """Pre-norm self-attention plus feed-forward, each with a residual.

    Dropout at ``rate`` is active only when an ``rng`` is supplied.
    """
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"self-attention needs a nonempty [L, d] input, got {x.shape}")
    training = rng is not None
    h = _norm(p.norm_attn, x)
    x = x + dropout(multi_head_attention(p.attn, h, h, mask, p.n_heads), rate, rng, training)
    return x + dropout(p.ffn(_norm(p.norm_ffn, x)), rate, rng, training)


def cross_attention_block(
    p: AttentionBlockParams, text: Tensor, audio: Tensor, audio_mask=None, *, rate: float = 0.0, rng=None
) -> Tensor:
    """Text queries attend over audio keys/values; residual stays on the text stream."""
    if p.norm_kv is None:
        raise ValueError("cross_attention_block needs parameters built with cross=True")
    if text.shape[1] != audio.shape[1]:
        raise ShapeError(f"text {text.shape} and audio {audio.shape} differ in model dim")
    training = rng is not None
    q = _norm(p.norm_attn, text)
    kv = _norm(p.norm_kv, audio)
    y = text + dropout(multi_head_attention(p.attn, q, kv, audio_mask, p.n_heads), rate, rng, training)
    return y + dropout(p.ffn(_norm(p.norm_ffn, y)), rate, rng, training)
