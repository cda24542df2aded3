"""Minimal layer containers: parameter naming, initialisation, residual blocks."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import ops
from .checkpoint import CheckpointError
from .tensor import Tensor, default_dtype, relu


class Module:
    """Base class; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        problems = []
        for name, p in own.items():
            if name not in state:
                problems.append(f"missing {name}")
            elif tuple(state[name].shape) != p.dims:
                problems.append(f"{name}: checkpoint {tuple(state[name].shape)} vs model {p.dims}")
        problems += [f"unexpected {name}" for name in state if name not in own]
        if problems:
            raise CheckpointError("checkpoint incompatible: " + "; ".join(problems))
        for name, p in own.items():
            p.data = np.asarray(state[name], dtype=p.dtype).copy()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=default_dtype()), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1,
                 rng: Optional[np.random.Generator] = None, init: str = "he", gain: float = 1.0):
        if k % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.stride = stride
        if init == "zero":
            w = np.zeros((cout, cin, k, k))
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            std = gain * np.sqrt(2.0 / (cin * k * k))
            w = rng.normal(0.0, std, size=(cout, cin, k, k))
        self.weight = param(w)
        self.bias = param(np.zeros(cout))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride)


class ResBlock(Module):
    """conv -> ReLU -> conv plus identity skip, no normalisation."""

    def __init__(self, c: int, rng: np.random.Generator):
        # small residual branch keeps a deep stack near identity at start
        self.conv1 = Conv2d(c, c, 3, rng=rng, gain=0.1)
        self.conv2 = Conv2d(c, c, 3, rng=rng, gain=0.1)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(relu(self.conv1(x)))


class ResStack(Module):
    """Input projection convolution followed by ``blocks`` residual blocks."""

    def __init__(self, cin: int, cout: int, blocks: int, rng: np.random.Generator):
        self.proj = Conv2d(cin, cout, 3, rng=rng)
        self.blocks = [ResBlock(cout, rng) for _ in range(blocks)]

    def forward(self, x: Tensor) -> Tensor:
        y = self.proj(x)
        for b in self.blocks:
            y = b(y)
        return y
