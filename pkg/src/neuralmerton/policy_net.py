"""Feed-forward feedback policy ``(t, y) -> pi``.

Hidden layers use SiLU, the output layer is the identity so the weight is
unconstrained (leverage and short positions are allowed).  Time is fed in
rescaled to ``t / T`` and the squared volatility divided by a fixed,
non-trainable ``y_scale`` carried with the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .market import STREAM_INIT


def silu(x):
    return x * expit(x)


def silu_grad(x):
    s = expit(x)
    return s + x * s * (1.0 - s)


def validate_arch(widths) -> tuple[int, ...]:
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ValueError("architecture needs at least input and output widths")
    if widths[0] != 2 or widths[-1] != 1:
        raise ValueError(f"architecture must map 2 inputs to 1 output, got {widths}")
    if min(widths) < 1:
        raise ValueError("all layer widths must be >= 1")
    return widths


def param_count(arch) -> int:
    arch = validate_arch(arch)
    return sum(arch[i] * arch[i - 1] + arch[i] for i in range(1, len(arch)))


@dataclass
class PolicyParams:
    """Weights ``W_i`` (n_i x n_{i-1}) and biases ``b_i`` for each layer."""

    arch: tuple
    weights: list
    biases: list
    y_scale: float = 1.0

    def __post_init__(self):
        self.arch = validate_arch(self.arch)
        if len(self.weights) != len(self.arch) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match architecture")
        if not self.y_scale > 0:
            raise ValueError("y_scale must be positive")
        for i, (W, b) in enumerate(zip(self.weights, self.biases), start=1):
            if W.shape != (self.arch[i], self.arch[i - 1]) or b.shape != (self.arch[i],):
                raise ValueError(f"layer {i} has shapes {W.shape}, {b.shape}; "
                                 f"expected ({self.arch[i]}, {self.arch[i - 1]}), ({self.arch[i]},)")

    @classmethod
    def zeros(cls, arch, y_scale: float = 1.0) -> "PolicyParams":
        return cls.from_flat(arch, np.zeros(param_count(arch)), y_scale)

    @classmethod
    def from_flat(cls, arch, flat, y_scale: float = 1.0) -> "PolicyParams":
        arch = validate_arch(arch)
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (param_count(arch),):
            raise ValueError(f"expected {param_count(arch)} parameters, got {flat.shape}")
        weights, biases, pos = [], [], 0
        for i in range(1, len(arch)):
            nw = arch[i] * arch[i - 1]
            weights.append(flat[pos:pos + nw].reshape(arch[i], arch[i - 1]).copy())
            pos += nw
            biases.append(flat[pos:pos + arch[i]].copy())
            pos += arch[i]
        return cls(arch, weights, biases, float(y_scale))

    def flatten(self) -> np.ndarray:
        """Layers in order, each as row-major weights followed by biases."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @property
    def size(self) -> int:
        return param_count(self.arch)


def init_params(arch, sigma_init: float = 0.1, seed: int = 0, y_scale: float = 1.0) -> PolicyParams:
    """I.i.d. ``N(0, sigma_init**2)`` entries; output starts close to zero."""
    if sigma_init < 0:
        raise ValueError("sigma_init must be non-negative")
    arch = validate_arch(arch)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(STREAM_INIT,))))
    return PolicyParams.from_flat(arch, sigma_init * rng.standard_normal(param_count(arch)), y_scale)


def forward(theta: PolicyParams, t, y, horizon: float = 1.0, cache: list | None = None):
    """Evaluate the policy at arrays ``t`` (years) and ``y`` of any common shape.

    If ``cache`` is a list, the layer inputs and pre-activations are appended
    to it for :func:`backward`.
    """
    t, y = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(y, dtype=float))
    shape = t.shape
    a = np.stack([t.ravel() / horizon, y.ravel() / theta.y_scale], axis=1)
    last = len(theta.weights) - 1
    for i, (W, b) in enumerate(zip(theta.weights, theta.biases)):
        z = a @ W.T + b
        if cache is not None:
            cache.append((a, z))
        a = z if i == last else silu(z)
    return a[:, 0].reshape(shape)


def backward(theta: PolicyParams, cache: list, dout) -> np.ndarray:
    """Flat gradient of ``sum(dout * pi)`` given the cache of a forward pass."""
    delta = np.asarray(dout, dtype=float).reshape(-1, 1)
    grads_W, grads_b = [None] * len(theta.weights), [None] * len(theta.weights)
    for i in range(len(theta.weights) - 1, -1, -1):
        a_in, z = cache[i]
        if i != len(theta.weights) - 1:
            delta = delta * silu_grad(z)
        grads_W[i] = delta.T @ a_in
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ theta.weights[i]
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in zip(grads_W, grads_b)])
