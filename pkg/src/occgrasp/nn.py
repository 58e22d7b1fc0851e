"""Multilayer perceptron and Adam on top of :mod:`occgrasp.autodiff`."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Mlp:
    """Fully connected network with ReLU hidden layers and a linear output."""

    def __init__(
        self,
        widths: Sequence[int],
        rng: np.random.Generator,
        dtype=np.float32,
        final_scale: float = 1.0,
    ) -> None:
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError("need at least input and output widths, all positive")
        self.widths = tuple(int(w) for w in widths)
        self.dtype = np.dtype(dtype)
        self.params: list[Tensor] = []
        n_layers = len(self.widths) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            if i == n_layers - 1:
                bound *= final_scale
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype)
            b = rng.uniform(-bound, bound, size=(fan_out,)).astype(self.dtype)
            self.params += [Tensor(W, requires_grad=True), Tensor(b, requires_grad=True)]

    @property
    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.params))

    def __call__(self, x: Tensor | np.ndarray) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            h = ad.add(ad.matmul(h, W), b)
            if i < n_layers - 1:
                h = ad.relu(h)
        return h

    def forward_numpy(self, x: np.ndarray) -> np.ndarray:
        """Inference without building a graph."""
        h = np.asarray(x, dtype=self.dtype)
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = h @ self.params[2 * i].data + self.params[2 * i + 1].data
            if i < n_layers - 1:
                np.maximum(h, 0, out=h)
        return h

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params:
            p.requires_grad = flag

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {flat.size}")
        i = 0
        for p in self.params:
            n = p.data.size
            p.data = flat[i:i + n].reshape(p.data.shape).astype(self.dtype)
            i += n

    def copy_from(self, other: Mlp) -> None:
        for p, q in zip(self.params, other.params):
            p.data = q.data.copy()

    def polyak_from(self, other: Mlp, tau: float) -> None:
        """``self <- (1 - tau) * self + tau * other``."""
        for p, q in zip(self.params, other.params):
            p.data = ((1.0 - tau) * p.data + tau * q.data).astype(self.dtype)


class Adam:
    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * (g * g)
            upd = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = (p.data - upd).astype(p.data.dtype)

    def state(self) -> list[np.ndarray]:
        return self.m + self.v

    def load_state(self, arrays: Sequence[np.ndarray], t: int) -> None:
        n = len(self.params)
        self.m = [np.asarray(a, dtype=p.data.dtype).reshape(p.data.shape) for a, p in zip(arrays[:n], self.params)]
        self.v = [np.asarray(a, dtype=p.data.dtype).reshape(p.data.shape) for a, p in zip(arrays[n:], self.params)]
        self.t = t
