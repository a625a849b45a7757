"""Small dense-numerics and backprop engine for multilayer perceptrons.

Matrices are ``float64`` numpy arrays. Weights are stored ``(in_dim, out_dim)``
so a layer computes ``x @ W + b`` on row-major batches.

Random streams come from numpy's PCG64 bit generator. A stream is identified
by a master seed plus an optional tuple of integer cell indices, mapped
through ``numpy.random.SeedSequence(entropy=seed, spawn_key=indices)``; the
same identifiers reproduce the same draws on every platform numpy supports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("identity", "relu", "sigmoid", "softmax")


def make_rng(seed: int, *cell: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and optional cell indices."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(c) for c in cell))
    return np.random.Generator(np.random.PCG64(ss))


def as_matrix(x, name: str = "input") -> np.ndarray:
    """Coerce to a finite 2D float64 array (a single row becomes 1 x d)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2:
            raise ValueError(f"weight must be 2D, got shape {self.weight.shape}")
        if self.bias.shape[0] != self.weight.shape[1]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} != weight out-dim {self.weight.shape[1]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class MlpParams:
    """Ordered layers whose dimensions chain."""

    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an MLP needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer {i} out-dim {a.out_dim} does not chain into layer {i + 1} "
                    f"in-dim {b.in_dim}"
                )
        for layer in self.layers[:-1]:
            if layer.activation == "softmax":
                raise ValueError("softmax is only allowed on the output layer")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "MlpParams":
        return MlpParams(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out


@dataclass
class GradBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_grad: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __add__(self, other: "GradBundle") -> "GradBundle":
        _check_grad_shapes(self, other)
        return GradBundle(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def scale(self, c: float) -> "GradBundle":
        return GradBundle(
            [c * w for w in self.weights],
            [c * b for b in self.biases],
            None if self.input_grad is None else c * self.input_grad,
        )

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "GradBundle":
        return cls(
            [np.zeros_like(l.weight) for l in params.layers],
            [np.zeros_like(l.bias) for l in params.layers],
        )


def _check_grad_shapes(a: GradBundle, b) -> None:
    shapes_a = [x.shape for x in a.arrays()]
    shapes_b = [x.shape for x in b.arrays()]
    if shapes_a != shapes_b:
        raise ValueError(f"gradient shape mismatch: {shapes_a} vs {shapes_b}")


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    layer_shapes: list[tuple[int, int]] = field(default_factory=list)


def init_mlp(
    sizes: Sequence[int],
    activations: Sequence[str],
    rng: np.random.Generator,
    *,
    weight_scale: float | None = None,
) -> MlpParams:
    """He-style initialization (or a fixed std via ``weight_scale``), zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        std = weight_scale if weight_scale is not None else np.sqrt(2.0 / fan_in)
        layers.append(Layer(rng.normal(0.0, std, size=(fan_in, fan_out)), np.zeros(fan_out), act))
    return MlpParams(layers)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return softmax(z)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    x = as_matrix(x)
    if x.shape[1] != params.in_dim:
        raise ValueError(
            f"input has {x.shape[1]} columns but the first layer expects {params.in_dim}"
        )
    cache = ForwardCache()
    h = x
    for layer in params.layers:
        # overflow is reported below as a FloatingPointError rather than a warning
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ layer.weight + layer.bias
            a = _activate(z, layer.activation)
        cache.inputs.append(h)
        cache.preacts.append(z)
        cache.outputs.append(a)
        cache.layer_shapes.append(layer.weight.shape)
        h = a
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite MLP output")
    return h, cache


def mlp_backward(params: MlpParams, cache: ForwardCache, upstream_grad) -> GradBundle:
    """Backpropagate ``upstream_grad`` (d loss / d output) through the cached pass."""
    shapes = [l.weight.shape for l in params.layers]
    if shapes != cache.layer_shapes:
        raise ValueError(f"cache was recorded for layers {cache.layer_shapes}, params have {shapes}")
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != cache.outputs[-1].shape:
        raise ValueError(
            f"upstream gradient shape {g.shape} != forward output shape {cache.outputs[-1].shape}"
        )
    n_layers = len(params.layers)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in reversed(range(n_layers)):
        layer = params.layers[i]
        z, a = cache.preacts[i], cache.outputs[i]
        if layer.activation == "relu":
            g = g * (z > 0)
        elif layer.activation == "sigmoid":
            g = g * a * (1.0 - a)
        elif layer.activation == "softmax":
            g = a * (g - np.sum(g * a, axis=1, keepdims=True))
        gw[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ layer.weight.T
    return GradBundle(gw, gb, g)


def grad_reverse(input_grad, coeff: float) -> np.ndarray:
    """Backward pass of a gradient reversal layer: ``-coeff * grad``."""
    if coeff < 0:
        raise ValueError(f"reversal coefficient must be >= 0, got {coeff}")
    return -float(coeff) * np.asarray(input_grad, dtype=np.float64)


def sgd_step(
    params: MlpParams,
    grads: GradBundle,
    lr: float,
    momentum: float = 0.0,
    velocity: GradBundle | None = None,
) -> tuple[MlpParams, GradBundle]:
    """One SGD-with-momentum step: ``v <- m*v + g``, ``p <- p - lr*v``.

    Returns fresh parameter and velocity objects; inputs are not mutated.
    """
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    _check_grad_shapes(GradBundle.zeros_like(params), grads)
    if velocity is None:
        velocity = GradBundle.zeros_like(params)
    else:
        _check_grad_shapes(grads, velocity)
    new_vw = [momentum * v + g for v, g in zip(velocity.weights, grads.weights)]
    new_vb = [momentum * v + g for v, g in zip(velocity.biases, grads.biases)]
    layers = [
        Layer(l.weight - lr * vw, l.bias - lr * vb, l.activation)
        for l, vw, vb in zip(params.layers, new_vw, new_vb)
    ]
    return MlpParams(layers), GradBundle(new_vw, new_vb)


def finite_diff_grad(
    loss_fn: Callable[[MlpParams], float], params: MlpParams, step: float = 1e-5
) -> GradBundle:
    """Central-difference estimate of d loss / d param for every entry."""
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    probe = params.copy()
    grads = GradBundle.zeros_like(params)
    for arr, garr in zip(probe.arrays(), grads.arrays()):
        flat, gflat = arr.reshape(-1), garr.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = float(loss_fn(probe))
            flat[k] = orig - step
            down = float(loss_fn(probe))
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError("loss is non-finite during finite differencing")
            gflat[k] = (up - down) / (2.0 * step)
    return grads


def max_rel_error(a: GradBundle, b: GradBundle, floor: float = 1e-8) -> float:
    """Largest entrywise ``|a-b| / max(|a|, |b|, floor)`` across two bundles."""
    worst = 0.0
    for x, y in zip(a.arrays(), b.arrays()):
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        if x.size:
            worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst
