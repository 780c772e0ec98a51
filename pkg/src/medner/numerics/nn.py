"""Parameter containers and initialisers shared by the tagger architectures.

Initialisation conventions:

* dense weights: uniform in +-sqrt(6 / (fan_in + fan_out))
* biases: zeros
* transformer weights and embeddings: normal with sigma 0.02
* recurrent-path embedding tables: uniform in +-sqrt(3 / dim)
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from medner.numerics.tensor import Parameter, Tensor, as_tensor, matmul

TRANSFORMER_INIT_STD = 0.02


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def scaled_normal(rng: np.random.Generator, shape, std: float = TRANSFORMER_INIT_STD) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


def embedding_uniform(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    bound = np.sqrt(3.0 / dim)
    return rng.uniform(-bound, bound, size=(rows, dim))


class Module:
    """Walks attributes to find parameters, in attribute-definition order."""

    training: bool = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            for child in _children(value):
                yield from child.modules()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.shape}")
            p.data = value.astype(p.data.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
        return self


def _walk(value, name: str):
    if isinstance(value, Parameter):
        if value.name is None:
            value.name = name
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def _children(value):
    if isinstance(value, Module):
        yield value
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from _children(item)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, init: str = "xavier"):
        if init == "xavier":
            w = xavier_uniform(rng, in_dim, out_dim)
        elif init == "normal":
            w = scaled_normal(rng, (in_dim, out_dim))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_dim))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        return matmul(x, self.weight) + self.bias
