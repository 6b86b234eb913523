"""Parameter-holding layers on top of the autodiff ops."""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Tensor


class Module:
    """Base class: parameter discovery, state dict, dtype conversion."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{key}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            raise KeyError(f"state dict mismatch: missing={sorted(missing)} "
                           f"unexpected={sorted(extra)}")
        for k, p in own.items():
            if p.data.shape != state[k].shape:
                raise ValueError(f"shape mismatch for {k}: "
                                 f"{p.data.shape} vs {state[k].shape}")
            p.data = state[k].astype(p.data.dtype, copy=True)

    def to_dtype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, dilation: int = 1,
                 padding_mode: str = "zeros", zero_init: bool = False,
                 dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        self.padding_mode = padding_mode
        if zero_init:
            w = np.zeros((cout, cin, kernel, kernel))
        else:
            std = 1.0 / np.sqrt(cin * kernel * kernel)
            w = rng.normal(0.0, std, size=(cout, cin, kernel, kernel))
        self.weight = _param(w.astype(dtype))
        self.bias = _param(np.zeros(cout, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride,
                          padding=self.padding, dilation=self.dilation,
                          padding_mode=self.padding_mode)


class Linear(Module):
    def __init__(self, nin: int, nout: int, rng: np.random.Generator,
                 zero_init: bool = False, dtype=np.float32):
        if zero_init:
            w = np.zeros((nout, nin))
        else:
            w = rng.normal(0.0, 1.0 / np.sqrt(nin), size=(nout, nin))
        self.weight = _param(w.astype(dtype))
        self.bias = _param(np.zeros(nout, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int, eps: float = 1e-5,
                 dtype=np.float32):
        if channels % groups:
            raise ValueError(f"channels {channels} not divisible by {groups}")
        self.groups = groups
        self.eps = eps
        self.weight = _param(np.ones(channels, dtype=dtype))
        self.bias = _param(np.zeros(channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.weight, self.bias, self.groups, self.eps)
