"""Small-shape gradient-check cases, one per differentiable tensor operation."""
import numpy as np

from msmtfn.tensor import (
    Tensor, concat, dropout, exp, layer_norm, log, log_softmax, relu, sigmoid, softmax_masked, sqrt, stack, tanh,
)

_g = np.random.default_rng(99)
_A, _B = _g.normal(size=(3, 4)), _g.normal(size=(4, 5))
_MASK = np.array([[1, 0, 1, 1], [0, 1, 1, 0], [1, 1, 1, 1]], dtype=bool)
_W = Tensor(_g.normal(size=(3, 4)))

OPS = {
    "add": (lambda a: (a + a * a).sum(), [_A]),
    "sub": (lambda a: ((a - 2.0 * a * a) * _W).sum(), [_A]),
    "mul": (lambda a: (a * _W).sum(), [_A]),
    "div": (lambda a: (_W / (a * a + 1.0)).sum(), [_A]),
    "matmul": (lambda a, b: ((a @ b) * (a @ b)).sum(), [_A, _B]),
    "batched_matmul": (lambda a, b: ((a @ b).sum(axis=0) * (a @ b).sum(axis=0)).sum(),
                       [_g.normal(size=(2, 3, 4)), _g.normal(size=(2, 4, 5))]),
    "exp": (lambda a: (exp(a) * _W).sum(), [_A]),
    "log": (lambda a: (log(a * a + 0.5) * _W).sum(), [_A]),
    "sqrt": (lambda a: (sqrt(a * a + 0.5) * _W).sum(), [_A]),
    "tanh": (lambda a: (tanh(a) * _W).sum(), [_A]),
    "sigmoid": (lambda a: (sigmoid(a) * _W).sum(), [_A]),
    "relu": (lambda a: (relu(a) * _W).sum(), [_A]),
    "mean_axis": (lambda a: (a.mean(axis=1) * a.mean(axis=1)).sum(), [_A]),
    "reshape_transpose": (lambda a: (a.reshape(2, 6).T * _W.reshape(6, 2) * a.reshape(2, 6).T).sum(), [_A]),
    "getitem": (lambda a: (a[1:, ::2] * a[1:, ::2]).sum() + (a[[0, 0, 2]] * _W).sum(), [_A]),
    "concat_stack": (lambda a: (concat([a, a * a], axis=1) * concat([_W, _W], axis=1)).sum() + (stack([a, a * a], axis=0) * a).sum(), [_A]),
    "softmax_masked": (lambda a: (softmax_masked(a, _MASK) * _W).sum(), [_A]),
    "log_softmax": (lambda a: (log_softmax(a) * _W).sum(), [_A]),
    "layer_norm": (lambda a, g, b: (layer_norm(a, g, b) * _W).sum(),
                   [_A, _g.normal(size=4), _g.normal(size=4)]),
    "dropout_fixed_mask": (lambda a: (dropout(a, 0.4, np.random.default_rng(3), True) * _W).sum(), [_A]),
}
