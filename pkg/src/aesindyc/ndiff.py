"""Small dense-numerics substrate: reverse-mode tape, MLPs, Adam, clipping.

Everything runs in float64 on numpy.  Parameter collections are plain
``dict[str, np.ndarray]`` ("blocks") so optimizers and checkpoints can treat
every model the same way.

The tape is intentionally tiny.  Operations dispatch on their inputs: with
plain arrays they return arrays (no graph is recorded), with at least one
:class:`Tensor` they record a node.  That lets the same model code serve both
fast inference and gradient evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import CheckpointError, ConfigError, NumericError, ShapeError

ACTIVATIONS = ("softmax", "softplus", "tanh")

Blocks = dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# reverse-mode tape
# ---------------------------------------------------------------------------


class Tensor:
    """A value on the tape together with its accumulated gradient."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    __array_priority__ = 100.0  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)


def _val(x):
    return x.value if isinstance(x, Tensor) else x


def _any_tensor(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(value, parents, backward):
    return Tensor(value, parents, backward)


def add(a, b):
    if not _any_tensor(a, b):
        return np.add(a, b)
    av, bv = _val(a), _val(b)
    out = av + bv

    def backward(g):
        return (_unbroadcast(g, np.shape(av)), _unbroadcast(g, np.shape(bv)))

    return _node(out, (a, b), backward)


def neg(a):
    if not isinstance(a, Tensor):
        return np.negative(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    if not _any_tensor(a, b):
        return np.multiply(a, b)
    av, bv = _val(a), _val(b)

    def backward(g):
        return (_unbroadcast(g * bv, np.shape(av)), _unbroadcast(g * av, np.shape(bv)))

    return _node(av * bv, (a, b), backward)


def power(a, p):
    if not isinstance(a, Tensor):
        return np.power(a, p)
    av = a.value
    return _node(av**p, (a,), lambda g: (g * p * av ** (p - 1),))


def matmul(a, b):
    if not _any_tensor(a, b):
        return np.matmul(a, b)
    av, bv = _val(a), _val(b)

    def backward(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:
            return bv @ g, np.outer(av, g)
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _node(av @ bv, (a, b), backward)


def transpose(a):
    if not isinstance(a, Tensor):
        return np.transpose(a)
    return _node(a.value.T, (a,), lambda g: (g.T,))


def getitem(a, idx):
    if not isinstance(a, Tensor):
        return np.asarray(a)[idx]
    av = a.value

    def backward(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return (out,)

    return _node(av[idx], (a,), backward)


def tsum(a, axis=None):
    if not isinstance(a, Tensor):
        return np.sum(a, axis=axis)
    av = a.value

    def backward(g):
        if axis is None:
            return (np.full_like(av, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), av.shape).copy(),)

    return _node(av.sum(axis=axis), (a,), backward)


def tmean(a, axis=None):
    n = np.size(_val(a)) if axis is None else np.shape(_val(a))[axis]
    return mul(tsum(a, axis), 1.0 / n)


def exp(a):
    if not isinstance(a, Tensor):
        return np.exp(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    if not isinstance(a, Tensor):
        return np.log(a)
    av = a.value
    return _node(np.log(av), (a,), lambda g: (g / av,))


def tanh(a):
    if not isinstance(a, Tensor):
        return np.tanh(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a):
    av = _val(a)
    out = np.logaddexp(0.0, av)
    if not isinstance(a, Tensor):
        return out
    sig = 0.5 * (1.0 + np.tanh(0.5 * av))
    return _node(out, (a,), lambda g: (g * sig,))


def softmax(a):
    """Softmax over the last axis."""
    av = _val(a)
    e = np.exp(av - av.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    if not isinstance(a, Tensor):
        return out

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, (a,), backward)


def tabs(a):
    if not isinstance(a, Tensor):
        return np.abs(a)
    av = a.value
    # subgradient 0 at 0 (np.sign(0) == 0)
    return _node(np.abs(av), (a,), lambda g: (g * np.sign(av),))


def clip(a, lo, hi):
    if not isinstance(a, Tensor):
        return np.clip(a, lo, hi)
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return _node(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


def minimum(a, b):
    if not _any_tensor(a, b):
        return np.minimum(a, b)
    av, bv = _val(a), _val(b)
    take_a = av <= bv

    def backward(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), np.shape(av)),
            _unbroadcast(np.where(take_a, 0.0, g), np.shape(bv)),
        )

    return _node(np.minimum(av, bv), (a, b), backward)


def concat_last(a, b):
    """Concatenate along the last axis."""
    if not _any_tensor(a, b):
        return np.concatenate([a, b], axis=-1)
    av, bv = _val(a), _val(b)
    n = av.shape[-1]

    def backward(g):
        return g[..., :n], g[..., n:]

    return _node(np.concatenate([av, bv], axis=-1), (a, b), backward)


def backprop(out: Tensor) -> None:
    """Accumulate d(out)/d(node) into ``.grad`` of every node reachable from ``out``."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if isinstance(p, Tensor) and id(p) not in seen:
                stack.append((p, False))

    out.grad = np.ones_like(out.value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if not isinstance(parent, Tensor):
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def grad(loss_fn: Callable[[Mapping[str, Tensor]], Tensor], params: Mapping[str, np.ndarray]):
    """Evaluate ``loss_fn`` and its gradient with respect to every block.

    Returns ``(loss_value, grads)`` with ``grads`` shaped like ``params``.
    Raises :class:`NumericError` naming the offending blocks if the loss is
    not finite.
    """
    leaves = {k: Tensor(np.array(v, dtype=np.float64)) for k, v in params.items()}
    out = loss_fn(leaves)
    if not isinstance(out, Tensor):
        # loss does not depend on any parameter
        value = float(np.asarray(out))
        _check_finite_loss(value, params, None)
        return value, {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
    if out.value.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {out.value.shape}")
    value = float(out.value)
    if not math.isfinite(value):
        backprop(out)
        _check_finite_loss(value, params, leaves)
    backprop(out)
    grads = {}
    for k, leaf in leaves.items():
        grads[k] = np.zeros_like(leaf.value) if leaf.grad is None else leaf.grad
    return value, grads


def _check_finite_loss(value, params, leaves):
    if math.isfinite(value):
        return
    bad = [k for k, v in params.items() if not np.all(np.isfinite(v))]
    if not bad and leaves is not None:
        bad = [k for k, t in leaves.items() if t.grad is not None and not np.all(np.isfinite(t.grad))]
    raise NumericError(f"non-finite loss {value!r}; offending blocks: {bad or ['<unknown>']}", blocks=bad)


# ---------------------------------------------------------------------------
# feedforward networks
# ---------------------------------------------------------------------------


@dataclass
class MlpParams:
    """Weights/biases of a feedforward net; hidden layers use ``activation``."""

    layer_sizes: list[int]
    weights: list  # layer_sizes[l+1] x layer_sizes[l]
    biases: list
    activation: str = "softplus"

    @property
    def n_params(self) -> int:
        return sum(np.size(_val(w)) + np.size(_val(b)) for w, b in zip(self.weights, self.biases))

    def blocks(self, prefix: str) -> Blocks:
        out: Blocks = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    def with_blocks(self, blocks: Mapping, prefix: str) -> "MlpParams":
        n = len(self.weights)
        return MlpParams(
            list(self.layer_sizes),
            [blocks[f"{prefix}.w{i}"] for i in range(n)],
            [blocks[f"{prefix}.b{i}"] for i in range(n)],
            self.activation,
        )

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_sizes),
            [np.array(w, copy=True) for w in self.weights],
            [np.array(b, copy=True) for b in self.biases],
            self.activation,
        )


def mlp_init(layer_sizes, activation: str = "softplus", seed=0) -> MlpParams:
    """Scaled-uniform init: W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), b = 0.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or any(n < 1 for n in sizes):
        raise ConfigError(f"layer_sizes needs >= 2 positive entries, got {list(layer_sizes)}")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(sizes, weights, biases, activation)


def mlp_to_dict(net: MlpParams) -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "activation": net.activation,
        "weights": [np.asarray(w).ravel().tolist() for w in net.weights],
        "biases": [np.asarray(b).ravel().tolist() for b in net.biases],
    }


def mlp_from_dict(d: dict) -> MlpParams:
    sizes = [int(s) for s in d["layer_sizes"]]
    weights, biases = [], []
    for i, (w, b) in enumerate(zip(d["weights"], d["biases"])):
        weights.append(np.array(w, dtype=np.float64).reshape(sizes[i + 1], sizes[i]))
        biases.append(np.array(b, dtype=np.float64).reshape(sizes[i + 1]))
    if len(weights) != len(sizes) - 1:
        raise CheckpointError("layer count does not match layer_sizes")
    return MlpParams(sizes, weights, biases, d["activation"])


_ACT_FN = {"softmax": softmax, "softplus": softplus, "tanh": tanh}


def mlp_forward(p: MlpParams, x):
    """Forward pass for a single vector ``(n_in,)`` or a batch ``(B, n_in)``."""
    xv = _val(x)
    if np.shape(xv)[-1] != p.layer_sizes[0]:
        raise ShapeError(f"input has {np.shape(xv)[-1]} features, network expects {p.layer_sizes[0]}")
    act = _ACT_FN[p.activation]
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = add(matmul(h, transpose(w)), b)
        if i < last:
            h = act(h)
    return h


# ---------------------------------------------------------------------------
# optimizer + clipping
# ---------------------------------------------------------------------------


@dataclass
class OptimState:
    """Adam moment accumulators for a set of blocks."""

    m: Blocks
    v: Blocks
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: Mapping[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        zeros = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        return cls({k: z.copy() for k, z in zeros.items()}, zeros, 0, lr, beta1, beta2, eps)

    def copy(self) -> "OptimState":
        return OptimState(
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
            self.step, self.lr, self.beta1, self.beta2, self.eps,
        )


def optim_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimState):
    """One bias-corrected Adam step.  Returns new ``(params, state)``; inputs untouched."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeError("params, grads and optimizer state must hold the same blocks")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p) or state.m[k].shape != g.shape:
            raise ShapeError(f"block {k!r}: param {np.shape(p)}, grad {g.shape}, state {state.m[k].shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_p[k] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, OptimState(new_m, new_v, t, state.lr, b1, b2, state.eps)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Blocks:
    """Scale all blocks by ``max_norm / g`` when the global L2 norm ``g`` exceeds ``max_norm``."""
    if not max_norm > 0:
        raise ConfigError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}
