"""Dense feed-forward networks with per-example backprop and simple optimizers.

Every network in the package (generators, critics, downstream MLPs) is a
:class:`DenseNet`. Parameters are held as a flat list ``[W0, b0, W1, b1, ...]``
so gradients, optimizer accumulators and clipping all share one ordering.
Batches are row matrices: ``out = act(x @ W.T + b)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from dploc.errors import ConfigError, NumericError, SchemaError, StateError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activations
    post: list[np.ndarray]  # activations


@dataclass
class DenseNet:
    layers: list[Layer]
    cache: ForwardCache | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.layers:
            raise SchemaError("a DenseNet needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise SchemaError(f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {layer.activation!r}")

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        hidden: str = "relu",
        output: str = "identity",
    ) -> "DenseNet":
        """Glorot-uniform weights, zero biases. ``sizes`` = [in, h1, ..., out]."""
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigError(f"invalid layer sizes {list(sizes)}")
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            limit = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-limit, limit, size=(n_out, n_in))
            act = output if i == len(sizes) - 2 else hidden
            layers.append(Layer(w, np.zeros(n_out), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise SchemaError("parameter list length does not match network")
        for i, layer in enumerate(self.layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise SchemaError(f"parameter shape mismatch at layer {i}")
            layer.weight = np.asarray(w, dtype=np.float64)
            layer.bias = np.asarray(b, dtype=np.float64)

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(p))) for p in self.params)


def forward(net: DenseNet, batch: np.ndarray, keep_cache: bool = True) -> np.ndarray:
    """Evaluate ``net`` on a row batch; caches activations for backprop."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise SchemaError(f"expected batch with {net.input_dim} columns, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in network input")
    inputs, pre, post = [], [], []
    a = x
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        a = _act(layer.activation, z)
        pre.append(z)
        post.append(a)
    net.cache = ForwardCache(inputs, pre, post) if keep_cache else None
    return a


def _deltas(net: DenseNet, out_grad: np.ndarray, cache: ForwardCache | None = None) -> tuple[list[np.ndarray], np.ndarray]:
    """Back-propagate ``dL/d(output)`` to every layer's pre-activation.

    Also returns the gradient with respect to the network input, which the
    generator update needs to chain through the critic.
    """
    cache = net.cache if cache is None else cache
    if cache is None:
        raise StateError("backward called without a cached forward pass")
    g = np.asarray(out_grad, dtype=np.float64)
    if g.shape != cache.post[-1].shape:
        raise SchemaError(f"output gradient shape {g.shape} != output shape {cache.post[-1].shape}")
    deltas: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        d = g * _act_grad(layer.activation, cache.pre[i], cache.post[i])
        deltas[i] = d
        g = d @ layer.weight
    return deltas, g


def backward(net: DenseNet, out_grad: np.ndarray, cache: ForwardCache | None = None) -> list[np.ndarray]:
    """Gradient summed over the rows of ``out_grad`` (one array per parameter)."""
    cache = net.cache if cache is None else cache
    deltas, _ = _deltas(net, out_grad, cache)
    grads = []
    for d, a in zip(deltas, cache.inputs):
        grads.append(d.T @ a)
        grads.append(d.sum(axis=0))
    return grads


def backward_per_example(net: DenseNet, out_grad: np.ndarray, cache: ForwardCache | None = None) -> list[np.ndarray]:
    """Per-example gradients; each array carries a leading example axis.

    Row ``i`` of ``out_grad`` is the derivative of example ``i``'s loss with
    respect to its own output. The mean over the example axis equals
    ``backward(net, out_grad / m)``.
    """
    cache = net.cache if cache is None else cache
    deltas, _ = _deltas(net, out_grad, cache)
    grads = []
    for d, a in zip(deltas, cache.inputs):
        grads.append(d[:, :, None] * a[:, None, :])
        grads.append(d.copy())
    return grads


def per_example_sq_norms(net: DenseNet, passes: Sequence[tuple[ForwardCache, np.ndarray]]) -> np.ndarray:
    """Squared L2 norm of each example's gradient summed over several passes.

    Example ``i``'s gradient is the sum over ``passes`` of the row-``i``
    gradients. A dense layer's per-example weight gradient is the outer
    product of its delta and input, so the norm follows from dot products
    without materializing (m, out, in) tensors.
    """
    per_pass = [(_deltas(net, g, c)[0], c.inputs) for c, g in passes]
    m = passes[0][1].shape[0]
    total = np.zeros(m)
    for layer in range(len(net.layers)):
        for p, (dp_, ap_) in enumerate(per_pass):
            for q, (dq_, aq_) in enumerate(per_pass[p:], start=p):
                dd = np.einsum("ij,ij->i", dp_[layer], dq_[layer])
                aa = np.einsum("ij,ij->i", ap_[layer], aq_[layer])
                term = dd * (aa + 1.0)  # +1: bias gradient is the delta itself
                total += term if p == q else 2.0 * term
    return np.maximum(total, 0.0)


def input_gradient(net: DenseNet, out_grad: np.ndarray) -> np.ndarray:
    """d(loss)/d(input) for the cached forward pass."""
    _, g = _deltas(net, out_grad)
    return g


def flatten_per_example(grads: Sequence[np.ndarray]) -> np.ndarray:
    """(m, n_params) view of a per-example gradient set."""
    m = grads[0].shape[0]
    return np.concatenate([g.reshape(m, -1) for g in grads], axis=1)


def unflatten(flat: np.ndarray, like: Sequence[np.ndarray]) -> list[np.ndarray]:
    out, pos = [], 0
    for p in like:
        out.append(flat[pos : pos + p.size].reshape(p.shape))
        pos += p.size
    return out


def finite_difference_check(
    net: DenseNet,
    batch: np.ndarray,
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
    h: float = 1e-4,
) -> float:
    """Max relative deviation between backprop and central differences.

    ``loss(out)`` returns ``(value, d value / d out)`` for the batch output.
    """
    if h <= 0:
        raise ConfigError("finite-difference step must be positive")
    out = forward(net, batch)
    _, g_out = loss(out)
    analytic = backward(net, g_out)
    worst = 0.0
    for p, ga in zip(net.params, analytic):
        flat = p.reshape(-1)
        ga_flat = ga.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up, _ = loss(forward(net, batch, keep_cache=False))
            flat[j] = orig - h
            down, _ = loss(forward(net, batch, keep_cache=False))
            flat[j] = orig
            numeric = (up - down) / (2.0 * h)
            dev = abs(ga_flat[j] - numeric) / (abs(ga_flat[j]) + 1e-8)
            # both effectively zero: central differences carry O(h^2) noise
            if abs(ga_flat[j]) < 1e-10 and abs(numeric) < 1e-10:
                dev = 0.0
            worst = max(worst, dev)
    forward(net, batch)
    return worst


@dataclass
class OptimizerState:
    kind: str
    lr: float
    accum: list[np.ndarray]
    accum2: list[np.ndarray] | None = None  # Adam second moment
    step: int = 0
    rho: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, net: DenseNet, kind: str = "rmsprop", lr: float = 5e-5, **kw) -> "OptimizerState":
        if kind not in ("rmsprop", "adam"):
            raise ConfigError(f"unknown optimizer {kind!r}")
        zeros = [np.zeros_like(p) for p in net.params]
        second = [np.zeros_like(p) for p in net.params] if kind == "adam" else None
        return cls(kind=kind, lr=lr, accum=zeros, accum2=second, **kw)


def optimizer_step(net: DenseNet, grads: Sequence[np.ndarray], state: OptimizerState) -> None:
    """Descend along ``grads`` in place (callers negate for ascent)."""
    params = net.params
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise SchemaError("gradient shapes do not match network parameters")
    state.step += 1
    new = []
    if state.kind == "rmsprop":
        for p, g, v in zip(params, grads, state.accum):
            v *= state.rho
            v += (1.0 - state.rho) * g * g
            new.append(p - state.lr * g / (np.sqrt(v) + state.eps))
    else:
        t = state.step
        c1 = 1.0 - state.beta1**t
        c2 = 1.0 - state.beta2**t
        for p, g, m, v in zip(params, grads, state.accum, state.accum2):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            new.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    if not all(np.all(np.isfinite(p)) for p in new):
        raise NumericError("optimizer produced non-finite parameters")
    net.set_params(new)


def clip_weights(net: DenseNet, bound: float) -> DenseNet:
    """Clamp every parameter component into [-bound, bound] in place."""
    if not bound > 0:
        raise ConfigError("weight clip bound must be positive")
    for layer in net.layers:
        np.clip(layer.weight, -bound, bound, out=layer.weight)
        np.clip(layer.bias, -bound, bound, out=layer.bias)
    return net
