"""Minimal neural-network building blocks on top of the autograd engine.

Parameter containers intentionally mirror the conventions of the larger
frameworks (named parameters, ``state_dict`` round trips) so checkpoints
are self-describing and bit-exact.
"""

from __future__ import annotations

import json

import numpy as np

from . import autograd
from .autograd import Tensor


class Module:
    """Base class with recursive named-parameter discovery."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{key}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{key}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = set(params) - set(state)
            extra = set(state) - set(params)
            raise ValueError(f"state dict mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, value in state.items():
            if params[name].data.shape != value.shape:
                raise ValueError(f"shape mismatch for {name}: {params[name].data.shape} vs {value.shape}")
            params[name].data = np.array(value, dtype=np.float64)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = Tensor(_glorot(rng, (in_features, out_features), in_features, out_features), True)
        self.bias = Tensor(np.zeros(out_features), True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        pad: int = 0,
    ):
        fan_in = in_channels * kernel_size * kernel_size
        fan_out = out_channels * kernel_size * kernel_size
        self.weight = Tensor(
            _glorot(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, fan_out),
            True,
        )
        self.bias = Tensor(np.zeros(out_channels), True)
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        return autograd.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class ConvStack(Module):
    """Stride-2 conv blocks with ReLU between them: the desk-scale backbone.

    3x3 kernels, same-style padding 1, so each block halves the spatial
    size. ``channels`` lists the output width per block.
    """

    def __init__(self, in_channels: int, channels, rng: np.random.Generator):
        blocks = []
        prev = in_channels
        for width in channels:
            blocks.append(Conv2d(prev, width, 3, rng, stride=2, pad=1))
            prev = width
        self.blocks = blocks
        self.out_channels = prev

    def __call__(self, x: Tensor) -> Tensor:
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i < len(self.blocks) - 1:
                x = x.relu()
        return x.relu()


class LSTMCell(Module):
    """Single-layer LSTM cell, gate order (input, forget, cell, output)."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.w_x = Tensor(_glorot(rng, (input_size, 4 * hidden_size), input_size, hidden_size), True)
        self.w_h = Tensor(_glorot(rng, (hidden_size, 4 * hidden_size), hidden_size, hidden_size), True)
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size : 2 * hidden_size] = 1.0  # forget-gate bias
        self.bias = Tensor(bias, True)
        self.hidden_size = hidden_size

    def __call__(self, x: Tensor, h: Tensor, c: Tensor):
        n = self.hidden_size
        gates = x @ self.w_x + h @ self.w_h + self.bias
        i = gates[:, :n].sigmoid()
        f = gates[:, n : 2 * n].sigmoid()
        g = gates[:, 2 * n : 3 * n].tanh()
        o = gates[:, 3 * n :].sigmoid()
        c_next = f * c + i * g
        h_next = o * c_next.tanh()
        return h_next, c_next


class Adam:
    """Adaptive-moment optimizer with optional global-norm gradient clipping."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8, grad_clip=None):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if self.grad_clip is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if total > self.grad_clip:
                scale = self.grad_clip / total
                grads = [g * scale for g in grads]
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

    def state_dict(self) -> dict:
        state = {"t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"] = m.copy()
            state[f"v.{i}"] = v.copy()
        return state

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        for i in range(len(self.params)):
            self.m[i] = np.array(state[f"m.{i}"], dtype=np.float64)
            self.v[i] = np.array(state[f"v.{i}"], dtype=np.float64)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

_CONFIG_KEY = "__config_json__"


def save_checkpoint(path, config: dict, arrays: dict):
    """Write a self-describing npz checkpoint (config JSON + float64 arrays)."""
    payload = {_CONFIG_KEY: np.frombuffer(json.dumps(config, sort_keys=True).encode(), dtype=np.uint8)}
    for name, value in arrays.items():
        payload[name] = np.asarray(value)
    np.savez(path, **payload)


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns (config, arrays). Arrays round-trip bit-exactly.
    """
    with np.load(path) as data:
        config = json.loads(bytes(data[_CONFIG_KEY]).decode())
        arrays = {k: data[k] for k in data.files if k != _CONFIG_KEY}
    return config, arrays
