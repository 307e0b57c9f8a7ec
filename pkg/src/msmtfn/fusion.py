"""Per-segment forward pass: text backbone, fused complementary pathway, bottleneck fusion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .attention import AttentionBlockParams, cross_attention_block, self_attention_block
from .config import ModelConfig
from .errors import MaskError, ShapeError
from .nn import LinearParams, Params, normal
from .tensor import Tensor, concat

Transformer = Callable[[Tensor, np.ndarray], Tensor]


@dataclass
class PathwayStack(Params):
    blocks: list

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def __call__(self, x: Tensor, mask, rate: float = 0.0, rng=None) -> Tensor:
        for block in self.blocks:
            x = self_attention_block(block, x, mask, rate=rate, rng=rng)
        return x


@dataclass
class FusionParams(Params):
    audio_proj: LinearParams
    text_proj: LinearParams
    text_stack: PathwayStack
    cross: AttentionBlockParams
    fused_stack: PathwayStack
    fsn: Tensor
    bottleneck_text: list
    bottleneck_fused: list
    audio_pos: Optional[Tensor] = None
    text_pos: Optional[Tensor] = None

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "FusionParams":
        dt = cfg.np_dtype

        def block(cross=False):
            return AttentionBlockParams.init(rng, cfg.d_model, cfg.d_ff, cfg.n_heads, cross=cross, dtype=dt)

        bt = [block() for _ in range(cfg.bottleneck_layers)]
        bf = [] if cfg.share_bottleneck else [block() for _ in range(cfg.bottleneck_layers)]
        return cls(
            audio_proj=LinearParams.init(rng, cfg.d_audio, cfg.d_model, dt),
            text_proj=LinearParams.init(rng, cfg.d_text, cfg.d_model, dt),
            text_stack=PathwayStack([block() for _ in range(cfg.pathway_depth)]),
            cross=block(cross=True),
            fused_stack=PathwayStack([block() for _ in range(cfg.pathway_depth)]),
            fsn=normal(rng, (cfg.bottleneck_tokens, cfg.d_model), 0.02, dt),
            bottleneck_text=bt,
            bottleneck_fused=bf,
            audio_pos=normal(rng, (cfg.max_audio_len, cfg.d_model), 0.02, dt) if cfg.positional else None,
            text_pos=normal(rng, (cfg.max_text_len, cfg.d_model), 0.02, dt) if cfg.positional else None,
        )

    def bottleneck_blocks(self, layer: int) -> tuple:
        fused = self.bottleneck_fused[layer] if self.bottleneck_fused else self.bottleneck_text[layer]
        return self.bottleneck_text[layer], fused


def _mask_array(mask, length: int, what: str) -> np.ndarray:
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool).reshape(-1)
    if m.shape[0] != length:
        raise ShapeError(f"{what} mask length {m.shape[0]} != sequence length {length}")
    if not m.any():
        raise MaskError(f"{what} mask has no valid position")
    return m


def embed_inputs(p: FusionParams, audio_feat: Tensor, text_feat: Tensor) -> tuple[Tensor, Tensor]:
    """Project raw feature rows to the model width and add positional embeddings."""
    audio = p.audio_proj(audio_feat)
    text = p.text_proj(text_feat)
    if p.audio_pos is not None:
        if audio.shape[0] > p.audio_pos.shape[0] or text.shape[0] > p.text_pos.shape[0]:
            raise ShapeError("sequence longer than the positional table")
        audio = audio + p.audio_pos[: audio.shape[0]]
        text = text + p.text_pos[: text.shape[0]]
    return audio, text


def segment_pathways(
    p: FusionParams, audio: Tensor, audio_mask, text: Tensor, text_mask, *, rate: float = 0.0, rng=None
) -> tuple[Tensor, Tensor]:
    """Return (T, T_m) for one segment; inputs are already at model width.

    T is the text refined by self-attention only. T_m lets the text query the
    audio through cross-attention and is then refined by its own self-attention
    stack.
    """
    am = _mask_array(audio_mask, audio.shape[0], "audio")
    tm = _mask_array(text_mask, text.shape[0], "text")
    t = p.text_stack(text, tm, rate, rng)
    tmix = cross_attention_block(p.cross, text, audio, am, rate=rate, rng=rng)
    tmix = p.fused_stack(tmix, tm, rate, rng)
    return t, tmix


@dataclass
class BottleneckState:
    T: Tensor
    T_m: Tensor
    T_fsn: Tensor
    mask: np.ndarray
    layer_index: int = 0


def extend_mask(mask: np.ndarray, n_tokens: int) -> np.ndarray:
    """Text mask followed by ``n_tokens`` always-attendable bottleneck slots."""
    return np.concatenate([np.asarray(mask, dtype=bool), np.ones(n_tokens, dtype=bool)])


def bottleneck_layer(state: BottleneckState, text_transformer: Transformer, fused_transformer: Transformer) -> BottleneckState:
    """One exchange round through the shared bottleneck tokens.

    Each channel runs its transformer over [channel ‖ bottleneck]; the channel
    part replaces the channel and the two bottleneck copies are averaged.
    """
    length = state.T.shape[0]
    n = state.T_fsn.shape[0]
    if state.T_m.shape != state.T.shape:
        raise ShapeError(f"T {state.T.shape} and T_m {state.T_m.shape} must match")
    ext = extend_mask(state.mask, n)
    out_t = text_transformer(concat([state.T, state.T_fsn], axis=0), ext)
    out_m = fused_transformer(concat([state.T_m, state.T_fsn], axis=0), ext)
    fsn = (out_t[length:] + out_m[length:]) * 0.5
    return BottleneckState(out_t[:length], out_m[:length], fsn, state.mask, state.layer_index + 1)


def run_bottleneck(p: FusionParams, T: Tensor, T_m: Tensor, mask, *, rate: float = 0.0, rng=None) -> BottleneckState:
    state = BottleneckState(T, T_m, p.fsn, _mask_array(mask, T.shape[0], "text"))
    for layer in range(len(p.bottleneck_text)):
        bt, bf = p.bottleneck_blocks(layer)
        state = bottleneck_layer(
            state,
            lambda x, m, b=bt: self_attention_block(b, x, m, rate=rate, rng=rng),
            lambda x, m, b=bf: self_attention_block(b, x, m, rate=rate, rng=rng),
        )
    return state


def bottleneck_stack(p: FusionParams, T: Tensor, T_m: Tensor, mask, *, rate: float = 0.0, rng=None) -> tuple[Tensor, Tensor]:
    state = run_bottleneck(p, T, T_m, mask, rate=rate, rng=rng)
    return state.T, state.T_fsn


def segment_pool(T_final: Tensor, mask) -> Tensor:
    """Mean of the rows marked valid in ``mask``."""
    m = _mask_array(mask, T_final.shape[0], "text")
    idx = np.flatnonzero(m)
    rows = T_final if idx.size == T_final.shape[0] else T_final[idx]
    return rows.sum(axis=0) * (1.0 / idx.size)
