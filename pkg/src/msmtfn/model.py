"""The assembled network: segment fusion, Bi-GRU context, multi-task heads."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import blob
from .config import ModelConfig
from .context import GruParams, bigru_forward, call_representation
from .errors import ShapeError, ValidationError
from .fusion import FusionParams, bottleneck_stack, embed_inputs, segment_pathways, segment_pool
from .heads import HeadParams, predict, total_loss
from .rng import generator
from .tensor import Tensor, no_grad, stack


def _valid_extent(mask) -> int:
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    return int(idx[-1]) + 1 if idx.size else 0


class MSMTFN:
    """Multi-segment multi-task fusion network.

    A call is a sequence of segments; each segment carries ``audio`` [L_a, d_audio],
    ``audio_mask`` [L_a], ``text`` [L_t, d_text] and ``text_mask`` [L_t]. Padding
    beyond the last valid position is cropped before the forward pass, which
    cannot change any valid output because padded keys are masked.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = generator(config.seed, "init")
        dt = config.np_dtype
        self.fusion = FusionParams.init(config, rng)
        self.context = GruParams.init(rng, config.d_model, config.gru_hidden, config.gru_layers, dt)
        self.heads = HeadParams.init(rng, 2 * config.gru_hidden, config.tasks, dt)

    # -- parameters ---------------------------------------------------------
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return (
            list(self.fusion.named_parameters("fusion."))
            + list(self.context.named_parameters("context."))
            + list(self.heads.named_parameters("heads."))
        )

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        problems = [f"missing tensor {n}" for n in own if n not in state]
        problems += [f"unexpected tensor {n}" for n in state if n not in own]
        problems += [
            f"{n}: shape {np.shape(state[n])} != {own[n].shape}"
            for n in own
            if n in state and np.shape(state[n]) != own[n].shape
        ]
        if problems:
            raise ValidationError("checkpoint does not fit this model", problems)
        for n, t in own.items():
            t.data = np.array(state[n], dtype=self.config.np_dtype)

    def save(self, path, metadata: dict | None = None) -> None:
        meta = {"model_config": self.config.to_dict()}
        meta.update(metadata or {})
        blob.save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> tuple["MSMTFN", dict]:
        tensors, meta = blob.load_checkpoint(path)
        if "model_config" not in meta:
            raise ValidationError(f"{path}: checkpoint lacks a model_config")
        model = cls(ModelConfig.from_dict(meta["model_config"]))
        model.load_state_dict(tensors)
        return model, meta

    # -- forward ------------------------------------------------------------
    def _as_tensor(self, array) -> Tensor:
        return Tensor(np.asarray(array, dtype=self.config.np_dtype))

    def segment_vector(self, segment, rng=None) -> Tensor:
        cfg = self.config
        rate = cfg.dropout if rng is not None else 0.0
        la = _valid_extent(segment.audio_mask)
        lt = _valid_extent(segment.text_mask)
        audio_np, text_np = np.asarray(segment.audio), np.asarray(segment.text)
        if audio_np.ndim != 2 or audio_np.shape[1] != cfg.d_audio:
            raise ShapeError(f"audio features must be [L, {cfg.d_audio}], got {audio_np.shape}")
        if text_np.ndim != 2 or text_np.shape[1] != cfg.d_text:
            raise ShapeError(f"text features must be [L, {cfg.d_text}], got {text_np.shape}")
        if la == 0 or lt == 0:
            raise ShapeError("segment has an all-padding audio or text mask")
        am = np.asarray(segment.audio_mask, dtype=bool)[:la]
        tm = np.asarray(segment.text_mask, dtype=bool)[:lt]
        audio, text = embed_inputs(self.fusion, self._as_tensor(audio_np[:la]), self._as_tensor(text_np[:lt]))
        t, t_m = segment_pathways(self.fusion, audio, am, text, tm, rate=rate, rng=rng)
        if not cfg.use_bottleneck:
            return segment_pool(t_m, tm)
        t_final, fsn = bottleneck_stack(self.fusion, t, t_m, tm, rate=rate, rng=rng)
        if cfg.segment_vector == "fsn_mean":
            return fsn.mean(axis=0)
        return segment_pool(t_final, tm)

    def call_vector(self, segments: Sequence, rng=None) -> Tensor:
        if not segments:
            raise ShapeError("a call needs at least one segment")
        vecs = stack([self.segment_vector(s, rng) for s in segments], axis=0)
        rate = self.config.dropout if rng is not None else 0.0
        _, h_n = bigru_forward(vecs, None, self.context, rate=rate, rng=rng)
        return call_representation(h_n, self.config.gru_hidden)

    def loss(self, call, rng=None, tasks: Iterable[str] | None = None) -> Tensor:
        """Summed cross-entropy over ``tasks`` (default: every head) for one call."""
        rep = self.call_vector(call.segments, rng)
        return total_loss(rep, self.heads, call.label, tuple(tasks) if tasks is not None else None)

    def predict(self, call) -> dict:
        with no_grad():
            rep = self.call_vector(call.segments)
        return predict(rep, self.heads)
