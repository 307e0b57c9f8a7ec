"""Per-segment fusion: two pathways joined through shared bottleneck tokens.

The text pathway and the audio-conditioned pathway each see the bottleneck
tokens appended to their sequence. After every layer the new bottleneck is the
average of the two updated copies.

Run: python3 demos/03_bottleneck_fusion.py
"""
import numpy as np

from msmtfn.config import ModelConfig
from msmtfn.fusion import BottleneckState, FusionParams, bottleneck_layer, embed_inputs, run_bottleneck, segment_pathways
from msmtfn.tensor import Tensor

rng = np.random.default_rng(0)
cfg = ModelConfig.toy()
p = FusionParams.init(cfg, rng)

audio = Tensor(rng.normal(size=(10, cfg.d_audio)))
text = Tensor(rng.normal(size=(6, cfg.d_text)))
text_mask = np.array([1, 1, 1, 1, 0, 0], bool)
a, t = embed_inputs(p, audio, text)
T, T_m = segment_pathways(p, a, np.ones(10, bool), t, text_mask)
print("text pathway", T.shape, "audio-conditioned pathway", T_m.shape)

state = run_bottleneck(p, T, T_m, text_mask)
print("bottleneck tokens after the stack:", state.T_fsn.shape)

# With stand-in transformers the update rule is visible directly.
b1, b2 = np.full((cfg.bottleneck_tokens, cfg.d_model), 1.0), np.full((cfg.bottleneck_tokens, cfg.d_model), 3.0)
start = BottleneckState(T, T_m, Tensor(np.zeros((cfg.bottleneck_tokens, cfg.d_model))), text_mask)


def fake(b):
    return lambda x, m: Tensor(np.vstack([x.data[: -cfg.bottleneck_tokens], b]))


nxt = bottleneck_layer(start, fake(b1), fake(b2))
print("new bottleneck = mean of the two copies:", np.unique(nxt.T_fsn.data))
