"""Parameter containers and initialisers shared by the model blocks."""
from __future__ import annotations

import dataclasses
from typing import Iterator, Optional

import numpy as np

from .tensor import Tensor


class Params:
    """Mixin for dataclasses whose fields are tensors, nested Params, or lists of them."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for f in dataclasses.fields(self):
            yield from _walk(getattr(self, f.name), prefix + f.name)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def _walk(value, name: str):
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, Params):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")
    elif isinstance(value, dict):
        for k in value:
            yield from _walk(value[k], f"{name}.{k}")


def param(array) -> Tensor:
    return Tensor(np.array(array), requires_grad=True)


def normal(rng: np.random.Generator, shape, std: float, dtype=np.float64) -> Tensor:
    return param(rng.normal(0.0, std, size=shape).astype(dtype))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))


def zeros(shape, dtype=np.float64) -> Tensor:
    return param(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float64) -> Tensor:
    return param(np.ones(shape, dtype=dtype))


@dataclasses.dataclass
class LinearParams(Params):
    weight: Tensor
    bias: Optional[Tensor]

    @classmethod
    def init(cls, rng, d_in: int, d_out: int, dtype=np.float64, bias: bool = True) -> "LinearParams":
        return cls(glorot(rng, d_in, d_out, dtype), zeros(d_out, dtype) if bias else None)

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y if self.bias is None else y + self.bias


@dataclasses.dataclass
class LayerNormParams(Params):
    gain: Tensor
    offset: Tensor

    @classmethod
    def init(cls, d: int, dtype=np.float64) -> "LayerNormParams":
        return cls(ones(d, dtype), zeros(d, dtype))
