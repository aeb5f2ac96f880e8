"""Fully connected network with explicit backpropagation, plus Adam.

Kept in plain numpy so gradients can be checked against finite differences
and parameters serialized without a framework.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError, ShapeError


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


ACTIVATIONS = ("silu", "tanh")


class MLP:
    """Dense network ``widths[0] -> ... -> widths[-1]`` with a smooth hidden activation.

    Parameters are stored as a flat list ``[W0, b0, W1, b1, ...]`` with
    ``W_l`` of shape ``(widths[l], widths[l + 1])``.
    """

    def __init__(self, widths, activation: str = "silu", params=None, rng=None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ParameterError(f"invalid widths {widths}")
        if activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {activation!r}")
        self.widths = widths
        self.activation = activation
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = []
            for fan_in, fan_out in zip(widths[:-1], widths[1:]):
                bound = 1.0 / math.sqrt(fan_in)
                params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                params.append(rng.uniform(-bound, bound, size=(fan_out,)))
        self.params = [np.array(p, dtype=float) for p in params]
        for p, shape in zip(self.params, self.param_shapes()):
            if p.shape != shape:
                raise ShapeError(f"parameter shape {p.shape} != expected {shape}")

    def param_shapes(self):
        shapes = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def copy(self) -> "MLP":
        return MLP(self.widths, self.activation, [p.copy() for p in self.params])

    def _act(self, z):
        if self.activation == "tanh":
            h = np.tanh(z)
            return h, 1.0 - h * h
        h, s = _silu(z)
        return h, s * (1.0 + z * (1.0 - s))

    def forward(self, x: np.ndarray, keep: bool = False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.widths[0]:
            raise ShapeError(f"input width {x.shape[-1]} != {self.widths[0]}")
        cache = [x] if keep else None
        h = x
        for layer in range(self.n_layers):
            W, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ W + b
            if layer == self.n_layers - 1:
                h = z
            else:
                h, dact = self._act(z)
                if keep:
                    cache.append((h, dact))
        return (h, cache) if keep else h

    def backward(self, cache, grad_out: np.ndarray, need_input: bool = False):
        """Gradients of ``sum(grad_out * output)`` w.r.t. parameters (and input)."""
        grads = [None] * len(self.params)
        g = grad_out
        for layer in range(self.n_layers - 1, -1, -1):
            h_prev = cache[layer] if layer == 0 else cache[layer][0]
            W = self.params[2 * layer]
            grads[2 * layer] = h_prev.reshape(-1, h_prev.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[2 * layer + 1] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            if layer > 0 or need_input:
                g = g @ W.T
                if layer > 0:
                    g = g * cache[layer][1]
        return (grads, g) if need_input else grads

    def input_gradient(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        _, cache = self.forward(x, keep=True)
        _, gx = self.backward(cache, grad_out, need_input=True)
        return gx

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for k, p in enumerate(self.params):
            self.params[k] = flat[pos:pos + p.size].reshape(p.shape).copy()
            pos += p.size
        if pos != flat.size:
            raise ShapeError("flat parameter vector has the wrong length")


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sinusoidal_table(M: int, width: int) -> np.ndarray:
    """Rows 0..M of a fixed sinusoidal step embedding."""
    if width % 2:
        raise ParameterError("embedding width must be even")
    half = width // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    steps = np.arange(M + 1, dtype=float)[:, None]
    return np.concatenate([np.sin(steps * freqs), np.cos(steps * freqs)], axis=1)


def iterate_epochs(n_rows: int, batch_size: int, steps: int):
    """Yield (epoch, step) pairs; an epoch is ceil(n_rows / batch_size) steps."""
    per_epoch = max(1, math.ceil(n_rows / batch_size))
    for step in range(steps):
        yield step // per_epoch, step
