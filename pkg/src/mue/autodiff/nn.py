"""Parameter containers: a small Module base plus the layers the networks use."""
from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from . import ops
from .tensor import Tensor, get_dtype


class Module:
    """Collects parameters from attributes (Tensors, Modules, lists of Modules) in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(get_dtype()), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = _uniform(rng, (n_out, n_in), n_in)
        self.bias = _uniform(rng, (n_out,), n_in)

    def __call__(self, x) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        fan_in = c_in * kernel * kernel
        self.kernel = kernel
        self.weight = _uniform(rng, (c_out, c_in, kernel, kernel), fan_in)
        self.bias = _uniform(rng, (c_out,), fan_in)

    def __call__(self, x) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=1, padding=self.kernel // 2)


class DenseResBlock(Module):
    """Three linear layers with a (projected when widths differ) shortcut."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, final_act: bool = True):
        self.fc1 = Linear(n_in, n_out, rng)
        self.fc2 = Linear(n_out, n_out, rng)
        self.fc3 = Linear(n_out, n_out, rng)
        self.shortcut = Linear(n_in, n_out, rng) if n_in != n_out else None
        self.final_act = final_act

    def __call__(self, x) -> Tensor:
        h = ops.relu(self.fc1(x))
        h = ops.relu(self.fc2(h))
        h = self.fc3(h)
        out = h + (self.shortcut(x) if self.shortcut is not None else x)
        return ops.relu(out) if self.final_act else out


class ConvResBlock(Module):
    """Three 3x3 convolutions; a 1x1 convolution on the shortcut when channels change."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, final_act: bool = True):
        self.conv1 = Conv2d(c_in, c_out, 3, rng)
        self.conv2 = Conv2d(c_out, c_out, 3, rng)
        self.conv3 = Conv2d(c_out, c_out, 3, rng)
        self.shortcut = Conv2d(c_in, c_out, 1, rng) if c_in != c_out else None
        self.final_act = final_act

    def __call__(self, x) -> Tensor:
        h = ops.relu(self.conv1(x))
        h = ops.relu(self.conv2(h))
        h = self.conv3(h)
        out = h + (self.shortcut(x) if self.shortcut is not None else x)
        return ops.relu(out) if self.final_act else out
