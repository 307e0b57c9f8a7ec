"""Self and cross attention blocks with key padding masks.

Padded keys get exactly zero attention weight, so anything stored in a padded
row cannot leak into the valid outputs.

Run: python3 demos/02_attention_masking.py
"""
import numpy as np

from msmtfn.attention import AttentionBlockParams, cross_attention_block, self_attention_block
from msmtfn.tensor import Tensor, softmax_masked

rng = np.random.default_rng(0)
d_model, d_ff, heads = 8, 16, 2

scores = Tensor(rng.normal(size=(1, 4)))
print("masked softmax:", softmax_masked(scores, np.array([1, 1, 0, 0], bool)).data)

blk = AttentionBlockParams.init(rng, d_model, d_ff, heads)
x = rng.normal(size=(5, d_model))
mask = np.array([1, 1, 1, 0, 0], dtype=bool)
out = self_attention_block(blk, Tensor(x), mask)
x_junk = x.copy()
x_junk[~mask] = 1e6
out_junk = self_attention_block(blk, Tensor(x_junk), mask)
print("valid rows unchanged by padding content:",
      np.array_equal(out.data[mask], out_junk.data[mask]))

# Text queries attend over audio keys and values.
cross = AttentionBlockParams.init(rng, d_model, d_ff, heads, cross=True)
text = Tensor(rng.normal(size=(3, d_model)))
audio = Tensor(rng.normal(size=(6, d_model)))
fused = cross_attention_block(cross, text, audio, np.array([1, 1, 1, 1, 0, 0], bool))
print("cross block output shape (one row per text token):", fused.shape)
