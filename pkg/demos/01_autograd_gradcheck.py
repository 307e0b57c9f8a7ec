"""Reverse-mode autograd on numpy arrays, checked against central differences.

Run: python3 demos/01_autograd_gradcheck.py
"""
import numpy as np

from msmtfn.gradcheck import grad_check, toy_model_check
from msmtfn.tensor import Tensor, layer_norm, softmax_masked

rng = np.random.default_rng(0)

# A small expression: masked softmax over a layer-normed matrix.
x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
gain = Tensor(np.ones(5), requires_grad=True)
offset = Tensor(np.zeros(5), requires_grad=True)
mask = np.array([1, 1, 0, 1, 0], dtype=bool)
w = Tensor(rng.normal(size=(3, 5)))


def f(x, gain, offset):
    return (softmax_masked(layer_norm(x, gain, offset), mask) * w).sum()


loss = f(x, gain, offset)
loss.backward()
print("loss", loss.item())
print("d loss / d x (masked columns are exactly zero):")
print(np.round(x.grad, 4))

err = grad_check(f, [x, gain, offset])
print(f"max relative error vs central differences: {err:.2e}")

# The same check on the whole classifier at toy size, sampling coordinates per tensor.
print(f"toy model, 4 probes per tensor: {toy_model_check(max_coords=4):.2e}")
