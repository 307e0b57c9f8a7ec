"""Call-level context with a bidirectional GRU over segment vectors.

Each direction is an ordinary GRU; the backward direction runs on the reversed
sequence and its outputs are flipped back into place.

Run: python3 demos/04_segment_context.py
"""
import numpy as np

from msmtfn.context import GruParams, bigru_forward, call_representation, gru_scan
from msmtfn.tensor import Tensor

rng = np.random.default_rng(0)
d_in, hidden = 6, 4
params = GruParams.init(rng, d_in, hidden, n_layers=2)

segments = Tensor(rng.normal(size=(5, d_in)))
outputs, h_n = bigru_forward(segments, None, params)
print("per-segment outputs", outputs.shape, "final states", h_n.shape)

rep = call_representation(h_n, hidden)
print("call representation", rep.shape)

fwd, bwd = params.layers[0]
manual = np.concatenate([gru_scan(segments, fwd).data,
                         gru_scan(Tensor(segments.data[::-1].copy()), bwd).data[::-1]], axis=1)
first_layer, _ = bigru_forward(segments, None, GruParams([params.layers[0]]))
print("first layer equals the manual two-direction composition:", np.array_equal(first_layer.data, manual))

# The order of segments matters to the representation.
_, h_rev = bigru_forward(Tensor(segments.data[::-1].copy()), None, params)
print("reversing the call changes the representation:",
      not np.allclose(call_representation(h_rev, hidden).data, rep.data))
