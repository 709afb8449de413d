"""Parameter containers built on the tensor primitives."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


def uniform_weight(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class that discovers parameters and submodules by attribute walk.

    Parameter names are the dotted attribute path, so two models built from
    the same config always enumerate parameters in the same order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        yield from self._walk(prefix, seen)

    def _walk(self, prefix: str, seen: set[int]):
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield path, value
            elif isinstance(value, Module):
                yield from value._walk(path + ".", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{path}.{i}.", seen)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=T.DTYPE)
            if value.shape != p.shape:
                raise T.ShapeError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True):
        self.weight = Parameter(uniform_weight(rng, (n_out, n_in), n_in), "weight")
        self.bias = Parameter(np.zeros(n_out), "bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d), "gamma")
        self.beta = Parameter(np.zeros(d), "beta")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv1d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, kernel: int):
        if kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel}")
        self.kernels = Parameter(uniform_weight(rng, (c_out, c_in, kernel), c_in * kernel), "kernels")
        self.bias = Parameter(np.zeros(c_out), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.kernels, self.bias)


class LSTM(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_hidden: int):
        self.w_ih = Parameter(uniform_weight(rng, (4 * d_hidden, d_in), d_in), "w_ih")
        self.w_hh = Parameter(uniform_weight(rng, (4 * d_hidden, d_hidden), d_hidden), "w_hh")
        self.bias = Parameter(np.zeros(4 * d_hidden), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return T.lstm_sequence(x, self.w_ih, self.w_hh, self.bias)


class Embedding(Module):
    def __init__(self, rng: np.random.Generator, n: int, d: int):
        self.table = Parameter(uniform_weight(rng, (n, d), d), "table")

    def __call__(self, ids) -> Tensor:
        return T.embedding(ids, self.table)


class FeedForward(Module):
    """Position-wise ``linear -> GELU -> linear``."""

    def __init__(self, rng: np.random.Generator, d: int, d_hidden: int):
        self.inner = Linear(rng, d, d_hidden)
        self.outer = Linear(rng, d_hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(T.gelu(self.inner(x)))
