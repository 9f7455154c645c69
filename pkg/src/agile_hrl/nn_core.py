"""Dense feed-forward networks with hand-written backprop and Adam.

Every learned object in the package (actors, critics, discriminator) is an
:class:`MlpParams`. Inputs may be a single vector ``(in,)`` or a batch
``(n, in)``; gradients from :func:`mlp_backward` are summed over the batch,
so callers fold any averaging into ``output_grad``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import NumericError, ShapeError

HIDDEN_ACTIVATIONS = ("relu", "leaky_relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "sigmoid")


@dataclass
class MlpParams:
    """Weights of a fixed-architecture MLP.

    ``layers[i] = (W, b)`` with ``W`` shaped ``(out, in)``. ``output_scale``
    multiplies a tanh output per dimension and is ignored otherwise.
    """

    layers: list
    hidden_activation: str = "relu"
    leaky_slope: float = 0.2
    output_activation: str = "identity"
    output_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if not self.layers:
            raise ShapeError("an MLP needs at least one layer")
        for i, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeError(f"layer {i}: weight {W.shape} and bias {b.shape} disagree")
            if i and W.shape[1] != self.layers[i - 1][0].shape[0]:
                raise ShapeError(
                    f"layer {i} expects {W.shape[1]} inputs, layer {i - 1} gives "
                    f"{self.layers[i - 1][0].shape[0]}"
                )
        if self.output_activation == "tanh":
            scale = np.ones(self.out_dim) if self.output_scale is None else self.output_scale
            scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (self.out_dim,)).copy()
            if not np.all(scale > 0):
                raise ValueError("output_scale must be strictly positive")
            self.output_scale = scale

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [W.shape[0] for W, _ in self.layers]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [(W.copy(), b.copy()) for W, b in self.layers],
            self.hidden_activation,
            self.leaky_slope,
            self.output_activation,
            None if self.output_scale is None else self.output_scale.copy(),
        )

    def with_layers(self, layers) -> "MlpParams":
        """Same architecture, new weights (no validation of the activations)."""
        new = object.__new__(MlpParams)
        new.layers = layers
        new.hidden_activation = self.hidden_activation
        new.leaky_slope = self.leaky_slope
        new.output_activation = self.output_activation
        new.output_scale = self.output_scale
        return new

    def is_finite(self) -> bool:
        return all(np.isfinite(W).all() and np.isfinite(b).all() for W, b in self.layers)


@dataclass
class GradBundle:
    """Per-layer ``(dW, db)`` pairs, shape-congruent with an MlpParams."""

    layers: list

    def __add__(self, other: "GradBundle") -> "GradBundle":
        return GradBundle([(a + c, b + d) for (a, b), (c, d) in zip(self.layers, other.layers)])

    def scaled(self, factor: float) -> "GradBundle":
        return GradBundle([(factor * a, factor * b) for a, b in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([a.ravel(), b.ravel()]) for a, b in self.layers])


@dataclass
class ForwardCache:
    inputs: list  # input to each layer, i.e. the previous layer's activation
    output: np.ndarray
    batched: bool


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    extra: dict = field(default_factory=dict)


def init_mlp(
    sizes,
    rng: np.random.Generator,
    hidden_activation="relu",
    output_activation="identity",
    output_scale=None,
    leaky_slope=0.2,
    final_scale=1.0,
) -> MlpParams:
    """Uniform fan-in initialisation, bound ``1/sqrt(fan_in)``.

    ``final_scale`` shrinks the last layer so that e.g. a fresh actor emits
    subgoals near zero and a fresh discriminator outputs about 0.5.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeError(f"bad layer sizes {sizes}")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        if i == len(sizes) - 2:
            W *= final_scale
            b *= final_scale
        layers.append((W, b))
    return MlpParams(layers, hidden_activation, leaky_slope, output_activation, output_scale)


def _hidden_inplace(params, z):
    if params.hidden_activation == "relu":
        return np.maximum(z, 0.0, out=z)
    neg = z < 0
    z[neg] *= params.leaky_slope
    return z


def _hidden_grad(params, h, g):
    # the sign of a hidden output equals the sign of its pre-activation
    if params.hidden_activation == "relu":
        return g * (h > 0)
    return g * np.where(h > 0, 1.0, params.leaky_slope)


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != params.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match in_dim={params.in_dim}")
    if not np.isfinite(x).all():
        raise NumericError("non-finite network input")
    h = x if batched else x[None, :]
    inputs = []
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        inputs.append(h)
        h = h @ W.T
        h += b
        if i < last:
            h = _hidden_inplace(params, h)
    act = params.output_activation
    if act == "tanh":
        h = params.output_scale * np.tanh(h)
    elif act == "sigmoid":
        h = expit(h)
    cache = ForwardCache(inputs, h, batched)
    return (h if batched else h[0]), cache


def mlp_predict(params: MlpParams, x) -> np.ndarray:
    """Forward pass without keeping the cache."""
    return mlp_forward(params, x)[0]


def mlp_backward(params: MlpParams, cache: ForwardCache, output_grad) -> tuple[GradBundle, np.ndarray]:
    """Gradients of ``sum(output_grad * output)`` w.r.t. parameters and input."""
    g = np.asarray(output_grad, dtype=np.float64)
    if not cache.batched:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != cache.output.shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {cache.output.shape}")
    y = cache.output
    act = params.output_activation
    if act == "tanh":
        th = y / params.output_scale
        delta = g * params.output_scale * (1.0 - th * th)
    elif act == "sigmoid":
        delta = g * y * (1.0 - y)
    else:
        delta = g
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[i]
        grads[i] = (delta.T @ cache.inputs[i], delta.sum(axis=0))
        dh = delta @ W
        if i:
            delta = _hidden_grad(params, cache.inputs[i], dh)
    return GradBundle(grads), (dh if cache.batched else dh[0])


def adam_init(params: MlpParams, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params.layers]
    v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params.layers]
    return AdamState(m, v, 0, beta1, beta2, eps)


def adam_step(state: AdamState, params: MlpParams, grads: GradBundle, lr: float):
    """One bias-corrected Adam descent step. Returns ``(params', state')``."""
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if len(grads.layers) != len(params.layers):
        raise ShapeError("gradient bundle has the wrong number of layers")
    for i, ((gW, gb), (W, b)) in enumerate(zip(grads.layers, params.layers)):
        if gW.shape != W.shape or gb.shape != b.shape:
            raise ShapeError(f"layer {i}: gradient shape does not match parameters")
        if not (np.isfinite(gW).all() and np.isfinite(gb).all()):
            raise NumericError(f"non-finite gradient in layer {i}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    step = lr / (1.0 - b1**t)
    bc2 = 1.0 - b2**t
    new_layers, new_m, new_v = [], [], []
    for (gW, gb), (W, b), (mW, mb), (vW, vb) in zip(grads.layers, params.layers, state.m, state.v):
        out = []
        for p, g, m, v in ((W, gW, mW, vW), (b, gb, mb, vb)):
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            p = p - step * m / (np.sqrt(v / bc2) + state.eps)
            out.append((p, m, v))
        new_layers.append((out[0][0], out[1][0]))
        new_m.append((out[0][1], out[1][1]))
        new_v.append((out[0][2], out[1][2]))
    new_params = params.with_layers(new_layers)
    if not new_params.is_finite():
        raise NumericError("Adam step produced non-finite parameters")
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


def params_to_vector(params: MlpParams) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in params.layers])


def vector_to_params(template: MlpParams, vec) -> MlpParams:
    layers, pos = [], 0
    for W, b in template.layers:
        nW, nb = W.size, b.size
        layers.append((vec[pos : pos + nW].reshape(W.shape).copy(), vec[pos + nW : pos + nW + nb].copy()))
        pos += nW + nb
    return template.with_layers(layers)


def finite_difference_grad(fn, params: MlpParams, h=1e-5) -> np.ndarray:
    """Central differences of scalar ``fn(params)`` over every parameter (flat order)."""
    base = params_to_vector(params)
    out = np.empty_like(base)
    for j in range(base.size):
        orig = base[j]
        base[j] = orig + h
        plus = fn(vector_to_params(params, base))
        base[j] = orig - h
        minus = fn(vector_to_params(params, base))
        base[j] = orig
        out[j] = (plus - minus) / (2 * h)
    return out


def max_relative_error(a, b, floor=1e-8) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
