"""Small reverse-mode autodiff over numpy arrays.

A :class:`Tape` records every operation in creation order together with a
closure that maps the output gradient to input gradients. ``Tape.backward``
walks the records in reverse and accumulates parameter gradients into the
owning :class:`ParamStore`.

The op set is deliberately fixed: the model only needs dense layers, a tanh
recurrent cell, mean aggregation, combine layers, a bilinear softmax and a
handful of elementwise helpers (softplus, exp, log, ...).
"""
from __future__ import annotations

import json
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EmptyCandidateSet, EmptyNeighborhood, ShapeMismatch


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class ParamStore:
    """Named float64 parameter arrays with a gradient accumulator per name."""

    def __init__(self, params: dict[str, np.ndarray] | None = None):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name!r} has non-finite entries")
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __setitem__(self, name: str, value) -> None:
        arr = np.array(value, dtype=float).reshape(self.params[name].shape)
        self.params[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.params.items()})

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def to_dict(self) -> dict:
        return {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in self.params.items()}

    @classmethod
    def from_dict(cls, payload: dict) -> "ParamStore":
        store = cls()
        for name, entry in payload.items():
            data = np.asarray(entry["data"], dtype=float)
            shape = tuple(entry["shape"])
            if data.size != int(np.prod(shape)):
                raise ShapeMismatch(f"{name}: data length {data.size} != prod{shape}")
            store.add(name, data.reshape(shape))
        return store

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ParamStore":
        return cls.from_dict(json.loads(text))


class Var:
    """A value on a tape. ``grad`` is filled during ``Tape.backward``."""

    __slots__ = ("tape", "value", "grad", "parents", "backward_fn", "param")

    def __init__(self, tape, value, parents=(), backward_fn=None, param=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(self.tape.lift(other)))

    def __rsub__(self, other):
        return add(self.tape.lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return vsum(self, axis)


class Tape:
    """Records operations for one forward pass.

    ``record=False`` builds values only, for inference paths that never call
    ``backward``.
    """

    def __init__(self, store: ParamStore | None = None, record: bool = True):
        self.store = store
        self.record = record
        self.nodes: list[Var] = []
        self._leaves: dict[str, Var] = {}

    def param(self, name: str) -> Var:
        if name not in self._leaves:
            v = Var(self, self.store.params[name], param=name)
            self._leaves[name] = v
        return self._leaves[name]

    def const(self, value) -> Var:
        return Var(self, np.asarray(value, dtype=float))

    def lift(self, x) -> Var:
        return x if isinstance(x, Var) else self.const(x)

    def make(self, value, parents, backward_fn) -> Var:
        if not self.record:
            return Var(self, value)
        v = Var(self, value, tuple(parents), backward_fn)
        self.nodes.append(v)
        return v

    def backward(self, out: Var) -> dict[str, np.ndarray]:
        """Accumulate d(out)/d(param) into the store; ``out`` must be scalar."""
        if not self.record:
            raise RuntimeError("tape was built with record=False")
        if out.value.size != 1:
            raise ShapeMismatch("backward needs a scalar output")
        out.grad = np.ones_like(out.value)
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or (parent.backward_fn is None and parent.param is None):
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=float, copy=True)
                else:
                    parent.grad = parent.grad + g
        result = {}
        for name, leaf in self._leaves.items():
            if leaf.grad is not None:
                self.store.grads[name] += leaf.grad.reshape(self.store.grads[name].shape)
                result[name] = leaf.grad
        return result


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    sa, sb = a.value.shape, b.value.shape
    return tape.make(a.value + b.value, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Var) -> Var:
    return a.tape.make(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    av, bv = a.value, b.value
    return tape.make(av * bv, (a, b),
                     lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    return a.tape.make(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a: Var) -> Var:
    y = np.exp(a.value)
    return a.tape.make(y, (a,), lambda g: (g * y,))


def log(a: Var) -> Var:
    x = a.value
    return a.tape.make(np.log(x), (a,), lambda g: (g / x,))


def vsoftplus(a: Var) -> Var:
    x = a.value
    return a.tape.make(softplus(x), (a,), lambda g: (g * sigmoid(x),))


def log1mexp(a: Var) -> Var:
    """log(1 - exp(a)) for a < 0, computed stably."""
    x = a.value
    y = np.where(x < -0.6931471805599453, np.log1p(-np.exp(x)), np.log(-np.expm1(x)))
    return a.tape.make(y, (a,), lambda g: (g * (-1.0 / np.expm1(-x)),))


def where(mask, a: Var, fill: float = 0.0) -> Var:
    """``a`` where ``mask`` holds, the constant ``fill`` elsewhere (no gradient there)."""
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.value.shape)
    return a.tape.make(np.where(m, a.value, fill), (a,), lambda g: (np.where(m, g, 0.0),))


# -- shape ------------------------------------------------------------------

def vsum(a: Var, axis=None) -> Var:
    shape = a.value.shape
    out = a.value.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return a.tape.make(np.asarray(out), (a,), back)


def take(a: Var, index) -> Var:
    shape = a.value.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return a.tape.make(a.value[index], (a,), back)


def transpose(a: Var) -> Var:
    return a.tape.make(np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Var, shape) -> Var:
    old = a.value.shape
    return a.tape.make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    tape = _tape_of(*xs)
    xs = [tape.lift(x) for x in xs]
    sizes = [x.value.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return tape.make(np.concatenate([x.value for x in xs], axis=axis), xs,
                     lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(xs: Sequence[Var], axis: int = 0) -> Var:
    tape = _tape_of(*xs)
    xs = [tape.lift(x) for x in xs]
    n = len(xs)
    return tape.make(np.stack([x.value for x in xs], axis=axis), xs,
                     lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    av, bv = a.value, b.value
    if av.shape[-1] != bv.shape[-2 if bv.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {av.shape} @ {bv.shape}")

    def back(g):
        if bv.ndim == 1:
            if av.ndim == 1:
                return g * bv, g * av
            ga = g[..., None] * bv
            gb = (av * g[..., None]).reshape(-1, bv.shape[0]).sum(axis=0)
            return ga, gb
        if av.ndim == 1:
            ga = bv @ g[..., None]
            ga = _unbroadcast(ga[..., 0], av.shape)
            gb = _unbroadcast(np.multiply.outer(av, g) if g.ndim == 1 else av[:, None] * g[..., None, :],
                              bv.shape)
            return ga, gb
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return tape.make(av @ bv, (a, b), back)


# -- layers -----------------------------------------------------------------

def _layer(tape: Tape, layer: str):
    return tape.param(f"{layer}.W"), tape.param(f"{layer}.b")


def dense_forward(tape: Tape, layer: str, x) -> Var:
    """tanh(W x + b) for ``x`` of shape [..., n] and W of shape [m, n]."""
    W, b = _layer(tape, layer)
    x = tape.lift(x)
    xv, Wv = x.value, W.value
    if xv.shape[-1] != Wv.shape[1] or b.value.shape != (Wv.shape[0],):
        raise ShapeMismatch(f"{layer}: input {xv.shape} vs W {Wv.shape}, b {b.value.shape}")
    y = np.tanh(xv @ Wv.T + b.value)

    def back(g):
        dz = g * (1.0 - y * y)
        flat = dz.reshape(-1, Wv.shape[0])
        gW = flat.T @ xv.reshape(-1, Wv.shape[1])
        return dz @ Wv, gW, flat.sum(axis=0)

    return tape.make(y, (x, W, b), back)


def rnn_step(tape: Tape, h_prev, x, layer: str = "rnn", mask=None) -> Var:
    """Vanilla tanh cell: h = tanh(W_hh h_prev + W_xh x + b).

    Inputs may carry a leading batch axis. Where ``mask`` is 0 the previous
    state is passed through unchanged (padding in batched sequences).
    """
    Whh, Wxh, b = tape.param(f"{layer}.W_hh"), tape.param(f"{layer}.W_xh"), tape.param(f"{layer}.b")
    h_prev, x = tape.lift(h_prev), tape.lift(x)
    hv, xv = h_prev.value, x.value
    Whv, Wxv = Whh.value, Wxh.value
    if hv.shape[-1] != Whv.shape[1] or xv.shape[-1] != Wxv.shape[1] or Wxv.shape[0] != Whv.shape[0]:
        raise ShapeMismatch(f"rnn_step: h {hv.shape}, x {xv.shape}, W_hh {Whv.shape}, W_xh {Wxv.shape}")
    y = np.tanh(hv @ Whv.T + xv @ Wxv.T + b.value)
    if mask is not None:
        m = np.asarray(mask, dtype=float)[..., None]
        out = m * y + (1.0 - m) * hv
    else:
        m = None
        out = y

    def back(g):
        dz = g * (1.0 - y * y)
        if m is not None:
            dz = dz * m
        dh = dz @ Whv
        if m is not None:
            dh = dh + g * (1.0 - m)
        dz2 = dz.reshape(-1, Whv.shape[0])
        return (dh, dz @ Wxv, dz2.T @ hv.reshape(-1, Whv.shape[1]),
                dz2.T @ xv.reshape(-1, Wxv.shape[1]), dz2.sum(axis=0))

    return tape.make(out, (h_prev, x, Whh, Wxh, b), back)


def aggregate(neighbor_embeddings: Sequence) -> Var:
    """Element-wise mean of a nonempty list of equally shaped embeddings."""
    if len(neighbor_embeddings) == 0:
        raise EmptyNeighborhood("aggregate needs at least one embedding")
    tape = _tape_of(*neighbor_embeddings)
    xs = [tape.lift(v) for v in neighbor_embeddings]
    shape = xs[0].value.shape
    if any(v.value.shape != shape for v in xs):
        raise ShapeMismatch("aggregate inputs must share one shape")
    n = len(xs)
    total = np.zeros(shape)
    for v in xs:
        total = total + v.value
    return tape.make(total / n, xs, lambda g: tuple(g / n for _ in range(n)))


def graph_aggregate(norm_adj: np.ndarray, H) -> Var:
    """Batched mean aggregation ``A @ H`` with a row-normalised adjacency."""
    return matmul(H.tape.const(norm_adj), H)


def combine(tape: Tape, layer: str, self_emb, agg) -> Var:
    """tanh(W [self; agg] + b)."""
    self_emb, agg = tape.lift(self_emb), tape.lift(agg)
    if self_emb.value.shape[:-1] != agg.value.shape[:-1]:
        raise ShapeMismatch(f"combine: {self_emb.value.shape} vs {agg.value.shape}")
    return dense_forward(tape, layer, concat([self_emb, agg], axis=-1))


def masked_log_softmax(logits: Var, mask=None) -> Var:
    """log-softmax over the last axis; entries with mask 0 get -inf."""
    x = logits.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        x = np.where(mask, x, -np.inf)
    shift = np.max(x, axis=-1, keepdims=True)
    z = np.exp(x - shift)
    lse = np.log(z.sum(axis=-1, keepdims=True)) + shift
    out = x - lse
    p = np.exp(out)

    def back(g):
        gg = np.where(np.isfinite(out), g, 0.0)
        return (gg - p * gg.sum(axis=-1, keepdims=True),)

    return logits.tape.make(out, (logits,), back)


def bilinear_logits(z_d, candidates, phi) -> Var:
    """z_d^T Phi z_v for each candidate row; batched over leading axes of z_d."""
    tape = _tape_of(z_d, candidates, phi)
    z_d, candidates, phi = tape.lift(z_d), tape.lift(candidates), tape.lift(phi)
    left = matmul(z_d, phi)
    return matmul(left, transpose(candidates))


def bilinear_softmax(z_d, candidates, phi, mask=None) -> Var:
    """p_v = exp(z_d^T Phi z_v) / sum_u exp(z_d^T Phi z_u), max-shifted."""
    if isinstance(candidates, (list, tuple)):
        if len(candidates) == 0:
            raise EmptyCandidateSet("no candidates")
        candidates = stack(candidates, axis=0)
    tape = _tape_of(z_d, candidates, phi)
    cand = tape.lift(candidates)
    if cand.value.shape[0] == 0:
        raise EmptyCandidateSet("no candidates")
    return exp(masked_log_softmax(bilinear_logits(z_d, cand, phi), mask))


# -- optimisation -----------------------------------------------------------

class Adam:
    """Adaptive-moment gradient descent over a ParamStore (minimisation).

    ``weight_decay`` is one L2 coefficient for every parameter or a dict of
    per-parameter coefficients.
    """

    def __init__(self, store: ParamStore, lr: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float | dict = 0.0):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in sorted(self.store.params):
            g = self.store.grads[name]
            wd = self.weight_decay.get(name, 0.0) if isinstance(self.weight_decay, dict) else self.weight_decay
            if wd:
                g = g + wd * self.store.params[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            self.store.params[name] = self.store.params[name] - update


# -- gradient checking ------------------------------------------------------

def grad_check(f: Callable[[Tape], Var], store: ParamStore, eps: float = 1e-5,
               names: Iterable[str] | None = None, floor: float = 1e-6) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f`` builds a scalar loss on the tape it is given. The relative error of
    one entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    names = list(names) if names is not None else store.names()
    saved = {k: v.copy() for k, v in store.grads.items()}
    store.zero_grad()
    tape = Tape(store)
    tape.backward(f(tape))
    analytic = {k: store.grads[k].copy() for k in names}
    store.grads = saved

    def value() -> float:
        return float(f(Tape(store, record=False)).value)

    worst = 0.0
    for name in names:
        arr = store.params[name]
        flat = arr.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = value()
            flat[i] = orig - eps
            down = value()
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            err = abs(a_flat[i] - num) / max(abs(a_flat[i]), abs(num), floor)
            worst = max(worst, err)
    return worst
