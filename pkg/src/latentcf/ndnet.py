"""Minimal differentiable dense networks on numpy arrays.

Networks are immutable tuples of :class:`DenseLayer`. ``forward`` evaluates
them, ``backward`` returns exact chain-rule gradients of ``upstream . output``
with respect to every parameter and the input. Inputs may be a single vector
``(in_dim,)`` or a batch ``(n, in_dim)``; parameter gradients of a batch are
summed over rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ACTIVATIONS = ("identity", "relu", "sigmoid")


class ShapeError(ValueError):
    """Raised when array dimensions do not chain."""


def sigmoid(a: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _activate(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return a
    if kind == "relu":
        return np.maximum(a, 0.0)
    return sigmoid(a)


def _activation_grad(kind: str, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Derivative of the activation given pre-activation ``a`` and output ``h``."""
    if kind == "identity":
        return np.ones_like(a)
    if kind == "relu":
        return (a > 0).astype(np.float64)
    return h * (1.0 - h)


@dataclass(frozen=True)
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "identity"

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match weights {w.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Network:
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("a network needs at least one layer")
        for k, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer {k} out_dim {a.out_dim} != layer {k + 1} in_dim {b.in_dim}")
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


@dataclass(frozen=True)
class GradientBundle:
    """Gradients of ``upstream . net(x)``; ``param_grads[k]`` is ``(dW, db)``."""

    param_grads: tuple[tuple[np.ndarray, np.ndarray], ...]
    input_grad: np.ndarray
    output: np.ndarray


def init_network(dims: Sequence[int], activations: Sequence[str],
                 rng: np.random.Generator) -> Network:
    """Uniform ``+-sqrt(6 / (fan_in + fan_out))`` weights, zero biases."""
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return Network(tuple(layers))


def identity_network(dim: int) -> Network:
    return Network((DenseLayer(np.eye(dim), np.zeros(dim), "identity"),))


def _as_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.in_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with in_dim {net.in_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def trace(net: Network, x: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Forward pass keeping ``(pre_activation, output)`` of every layer."""
    x = _as_input(net, x)
    cache = []
    h = x
    for layer in net.layers:
        a = h @ layer.weights.T + layer.bias
        h = _activate(layer.activation, a)
        cache.append((a, h))
    return cache


def forward(net: Network, x) -> np.ndarray:
    return trace(net, x)[-1][1]


def backprop(net: Network, x, cache, upstream, with_params: bool = True):
    """Chain rule over a cache from :func:`trace`; returns ``(param_grads, input_grad)``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    out = cache[-1][1]
    if g.shape != out.shape:
        raise ShapeError(f"upstream shape {g.shape} != output shape {out.shape}")
    grads = []
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        a, h = cache[k]
        delta = g * _activation_grad(layer.activation, a, h)
        if with_params:
            prev = cache[k - 1][1] if k > 0 else x
            if delta.ndim == 1:
                grads.append((np.outer(delta, prev), delta.copy()))
            else:
                grads.append((delta.T @ prev, delta.sum(axis=0)))
        g = delta @ layer.weights
    return tuple(reversed(grads)), g


def backward(net: Network, x, upstream_grad) -> GradientBundle:
    cache = trace(net, x)
    params, gx = backprop(net, x, cache, upstream_grad, True)
    return GradientBundle(params, gx, cache[-1][1])


def input_grad(net: Network, x, upstream_grad) -> np.ndarray:
    """``backward(...).input_grad`` without building parameter gradients."""
    cache = trace(net, x)
    return backprop(net, x, cache, upstream_grad, False)[1]


def value_and_input_grad(net: Network, x, upstream_fn):
    """One forward pass; ``upstream_fn(output)`` supplies the upstream gradient.

    Returns ``(output, upstream, input_grad)``.
    """
    cache = trace(net, x)
    out = cache[-1][1]
    up = upstream_fn(out)
    return out, up, backprop(net, x, cache, up, False)[1]


def composed_input_grad(outer: Network, inner: Network, z, upstream_grad) -> np.ndarray:
    """Gradient w.r.t. ``z`` of ``upstream . outer(inner(z))``."""
    if inner.out_dim != outer.in_dim:
        raise ShapeError(f"inner out_dim {inner.out_dim} != outer in_dim {outer.in_dim}")
    h = forward(inner, z)
    g = input_grad(outer, h, upstream_grad)
    return input_grad(inner, z, g)


def _check_finite_grads(grads: GradientBundle) -> None:
    for dw, db in grads.param_grads:
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise FloatingPointError("non-finite gradient")


def sgd_step(net: Network, grads: GradientBundle, lr: float) -> Network:
    """Return a new network with every parameter ``p - lr * g``."""
    if len(grads.param_grads) != len(net.layers):
        raise ShapeError("gradient bundle does not match network depth")
    _check_finite_grads(grads)
    layers = []
    for layer, (dw, db) in zip(net.layers, grads.param_grads):
        if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
            raise ShapeError("gradient shapes do not mirror the network")
        layers.append(DenseLayer(layer.weights - lr * dw, layer.bias - lr * db,
                                 layer.activation))
    return Network(tuple(layers))


def momentum_step(net: Network, grads: GradientBundle, velocity, lr: float,
                  momentum: float = 0.0):
    """SGD with fixed momentum; returns ``(new_net, new_velocity)``.

    ``velocity`` is ``None`` on the first call. With ``momentum=0`` this is
    exactly :func:`sgd_step`.
    """
    if velocity is None:
        velocity = tuple((np.zeros_like(dw), np.zeros_like(db))
                         for dw, db in grads.param_grads)
    new_v = tuple((momentum * vw + dw, momentum * vb + db)
                  for (vw, vb), (dw, db) in zip(velocity, grads.param_grads))
    step = GradientBundle(new_v, grads.input_grad, grads.output)
    return sgd_step(net, step, lr), new_v
