"""Temporal point process foundations.

Everything here is generic over an :class:`IntensityEvaluator`: an object
that returns lambda(t) given the history of events strictly before t. The
compensator integrates piece by piece, with pieces split at history events
and at the evaluator's own breakpoints (feature updates), so each piece is
smooth and Gauss-Legendre quadrature converges quickly.
"""
from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import (BoundViolation, DegenerateHorizon, EmptyWindow, InvalidInterval,
                     NonPositiveIntensityAtEvent, TimeBeforeLastEvent, ValidationError)

log = logging.getLogger(__name__)

TIE_JITTER = 1e-9


@dataclass
class EventSequence:
    """Strictly increasing event times inside ``window`` with optional marks."""

    times: np.ndarray
    window: tuple[float, float]
    types: np.ndarray | None = None
    meta: list[dict] | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        n = self.times.size
        self.types = np.zeros(n, dtype=int) if self.types is None else np.asarray(self.types, dtype=int)
        self.meta = [{} for _ in range(n)] if self.meta is None else list(self.meta)
        a, b = float(self.window[0]), float(self.window[1])
        self.window = (a, b)
        if not (np.isfinite(a) and np.isfinite(b)) or b < a:
            raise ValidationError(f"invalid window {self.window}")
        if self.types.shape != (n,) or len(self.meta) != n:
            raise ValidationError("times, types and meta must have equal length")
        if n:
            if not np.all(np.isfinite(self.times)) or np.any(self.times < 0):
                raise ValidationError("event times must be finite and non-negative")
            if np.any(np.diff(self.times) <= 0):
                raise ValidationError("event times must be strictly increasing")
            if self.times[0] < a or self.times[-1] > b:
                raise ValidationError("events must lie inside the window")

    def __len__(self):
        return self.times.size

    @classmethod
    def _trusted(cls, times, window, types, meta) -> "EventSequence":
        # skips validation; callers guarantee the invariants
        seq = object.__new__(cls)
        seq.times, seq.window, seq.types, seq.meta = times, window, types, meta
        return seq

    def prefix(self, n: int) -> "EventSequence":
        return EventSequence._trusted(self.times[:n], self.window, self.types[:n], self.meta[:n])

    def before(self, t: float, inclusive: bool = False) -> "EventSequence":
        n = int(np.searchsorted(self.times, t, side="right" if inclusive else "left"))
        return self.prefix(n)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"t": float(t), "type": int(k), "meta": m}, sort_keys=True)
                 for t, k, m in zip(self.times, self.types, self.meta)]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str, window: tuple[float, float]) -> "EventSequence":
        recs = [json.loads(line) for line in text.splitlines() if line.strip()]
        recs.sort(key=lambda r: r["t"])
        times = untie([r["t"] for r in recs])
        return cls(times, window, [r.get("type", 0) for r in recs], [r.get("meta", {}) for r in recs])


def untie(times) -> np.ndarray:
    """Sorted copy of ``times`` with exact ties pushed apart by TIE_JITTER."""
    out = np.sort(np.asarray(times, dtype=float))
    n_fixed = 0
    for i in range(1, out.size):
        if out[i] <= out[i - 1]:
            out[i] = out[i - 1] + TIE_JITTER
            n_fixed += 1
    if n_fixed:
        log.info("perturbed %d tied timestamps by %g", n_fixed, TIE_JITTER)
    return out


class IntensityEvaluator(ABC):
    """lambda(t | history). ``t`` may be an array; every entry lies after the
    last history event, so the history is the same for all of them."""

    @abstractmethod
    def __call__(self, history: EventSequence, t) -> np.ndarray:
        ...

    def breakpoints(self, history: EventSequence, a: float, b: float) -> np.ndarray:
        """Points in (a, b) where lambda may jump for reasons other than events."""
        return np.empty(0)


class ConstantIntensity(IntensityEvaluator):
    def __init__(self, rate: float):
        self.rate = float(rate)

    def __call__(self, history, t):
        return np.full(np.shape(t), self.rate)


class FunctionIntensity(IntensityEvaluator):
    """History-independent lambda(t) from a vectorised callable."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], breaks=()):
        self.fn = fn
        self.breaks = np.sort(np.asarray(breaks, dtype=float))

    def __call__(self, history, t):
        return np.asarray(self.fn(np.asarray(t, dtype=float)), dtype=float)

    def breakpoints(self, history, a, b):
        return self.breaks[(self.breaks > a) & (self.breaks < b)]


def _empty_history(window=(0.0, 0.0)) -> EventSequence:
    return EventSequence(np.empty(0), window)


@lru_cache(maxsize=32)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _piece_integral(lam: IntensityEvaluator, history, u: float, v: float, n_nodes: int) -> float:
    if v <= u:
        return 0.0
    x, w = gauss_legendre(n_nodes)
    half = 0.5 * (v - u)
    nodes = u + half * (x + 1.0)
    return float(half * np.dot(w, lam(history, nodes)))


def compensator(lam: IntensityEvaluator, a: float, b: float, n_nodes: int = 64,
                history: EventSequence | None = None) -> float:
    """Integral of lambda over [a, b].

    History events inside (a, b) split the interval; the history seen on a
    piece (u, v] is every event <= u.
    """
    if not (np.isfinite(a) and np.isfinite(b)) or b < a:
        raise InvalidInterval(f"invalid interval [{a}, {b}]")
    if n_nodes < 2:
        raise InvalidInterval("n_nodes must be at least 2")
    if history is None:
        history = _empty_history((min(a, 0.0), b))
    total = 0.0
    for u, v, hist in _pieces(lam, history, a, b):
        total += _piece_integral(lam, hist, u, v, n_nodes)
    return total


def _pieces(lam, history: EventSequence, a: float, b: float):
    """Yield (u, v, history-at-piece) over [a, b] split at events and breakpoints."""
    times = history.times
    inner = times[(times > a) & (times < b)]
    cuts = [a, *inner.tolist(), b]
    start = int(np.searchsorted(times, a, side="right"))
    for j in range(len(cuts) - 1):
        u, v = cuts[j], cuts[j + 1]
        hist = history.prefix(start + j)
        extra = lam.breakpoints(hist, u, v)
        grid = [u, *sorted(float(x) for x in extra), v]
        for p, q in zip(grid[:-1], grid[1:]):
            yield p, q, hist


def log_likelihood(seq: EventSequence, lam: IntensityEvaluator,
                   window: tuple[float, float] | None = None, n_nodes: int = 64) -> float:
    """sum_j log lambda(t_j) - integral of lambda over the window."""
    a, b = seq.window if window is None else window
    if not b > a:
        raise EmptyWindow(f"window [{a}, {b}] is empty")
    inside = seq.times[(seq.times >= a) & (seq.times <= b)]
    start = int(np.searchsorted(seq.times, a, side="left"))
    ll = 0.0
    for j, t in enumerate(inside):
        value = float(np.asarray(lam(seq.prefix(start + j), np.array([t]))).reshape(-1)[0])
        if not value > 0 or not np.isfinite(value):
            raise NonPositiveIntensityAtEvent(f"lambda({t}) = {value}")
        ll += np.log(value)
    return ll - compensator(lam, a, b, n_nodes, history=seq)


def density_from_intensity(lam: IntensityEvaluator, t_last: float, t, n_nodes: int = 64,
                           history: EventSequence | None = None):
    """f(t) = lambda(t) exp(-integral_{t_last}^t lambda); history frozen at t_last."""
    scalar = np.ndim(t) == 0
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < t_last):
        raise TimeBeforeLastEvent(f"t < t_last = {t_last}")
    hist = _frozen(history, t_last)
    out = np.empty_like(ts)
    for i, ti in enumerate(ts):
        big = compensator(lam, t_last, ti, n_nodes, history=hist)
        out[i] = float(np.asarray(lam(hist, np.array([ti]))).reshape(-1)[0]) * np.exp(-big)
    return float(out[0]) if scalar else out


def _frozen(history: EventSequence | None, t_c: float) -> EventSequence:
    if history is None:
        return _empty_history((0.0, t_c))
    return history.before(t_c, inclusive=True)


def _cumulative(lam, hist, grid: np.ndarray, n_nodes: int) -> np.ndarray:
    """Lambda(grid[0], grid[i]) for a sorted grid whose gaps are smooth pieces."""
    x, w = gauss_legendre(n_nodes)
    u, v = grid[:-1], grid[1:]
    half = 0.5 * (v - u)
    nodes = u[:, None] + half[:, None] * (x[None, :] + 1.0)
    vals = np.asarray(lam(hist, nodes.ravel()), dtype=float).reshape(nodes.shape)
    return np.concatenate([[0.0], np.cumsum(half * (vals @ w))])


def expected_next_time(lam: IntensityEvaluator, t_c: float, horizon: float, n_points: int = 1024,
                       history: EventSequence | None = None, n_nodes: int = 8) -> float:
    """E[min(T, horizon)] for the next event time T after t_c.

    Computes the integral of t f(t) over (t_c, horizon] plus horizon times
    the probability of no event before horizon. No events arrive after t_c
    in the conditioning history.
    """
    if not horizon > t_c:
        raise DegenerateHorizon(f"horizon {horizon} must exceed t_c {t_c}")
    hist = _frozen(history, t_c)
    panels = max(4, n_points // 16)
    u = np.linspace(0.0, 1.0, panels + 1)
    edges = t_c + (horizon - t_c) * u * u
    brk = lam.breakpoints(hist, t_c, horizon)
    edges = np.unique(np.concatenate([edges, np.asarray(brk, dtype=float)]))
    x, w = gauss_legendre(16)
    half = 0.5 * np.diff(edges)
    nodes = edges[:-1, None] + half[:, None] * (x[None, :] + 1.0)
    grid = np.unique(np.concatenate([edges, nodes.ravel()]))
    big = _cumulative(lam, hist, grid, n_nodes)
    idx = np.searchsorted(grid, nodes.ravel())
    big_nodes = big[idx].reshape(nodes.shape)
    lam_nodes = np.asarray(lam(hist, nodes.ravel()), dtype=float).reshape(nodes.shape)
    f_nodes = lam_nodes * np.exp(-big_nodes)
    body = float(np.sum(half * ((nodes * f_nodes) @ w)))
    return body + horizon * float(np.exp(-big[-1]))


def exceedance_probability(lam: IntensityEvaluator, t_c: float, length: float = 1.0,
                           history: EventSequence | None = None, n_nodes: int = 64) -> float:
    """P(next event within (t_c, t_c + length]) = 1 - exp(-Lambda)."""
    hist = _frozen(history, t_c)
    return float(-np.expm1(-compensator(lam, t_c, t_c + length, n_nodes, history=hist)))


BoundProvider = Callable[[EventSequence, float], float]


def simulate_thinning(lam: IntensityEvaluator, bound: BoundProvider, window: tuple[float, float],
                      seed: int | np.random.Generator | None = None,
                      marker: Callable | None = None, history: EventSequence | None = None,
                      max_events: int | None = None, check_bound: bool = True) -> EventSequence:
    """Ogata thinning on ``window``.

    ``bound(history, s)`` must dominate lambda on (s, next accepted event],
    up to the evaluator's next breakpoint. When a proposal crosses a
    breakpoint the clock restarts there with a fresh bound. ``marker``, if
    given, maps (history, t, rng) to (type, meta) for each accepted event.
    An optional ``history`` seeds the process with earlier events.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a, b = float(window[0]), float(window[1])
    if b < a:
        raise InvalidInterval(f"invalid window {window}")
    if history is not None:
        times, types, meta = list(history.times), list(history.types), list(history.meta)
        lo = min(history.window[0], a)
    else:
        times, types, meta, lo = [], [], [], a
    n_new = 0
    s = a
    current = EventSequence(np.asarray(times), (lo, b), np.asarray(types, dtype=int), meta)
    buf_t, buf_k = np.empty(len(times) + 64), np.empty(len(times) + 64, dtype=int)
    buf_t[:len(times)], buf_k[:len(times)] = times, types
    while s < b:
        if max_events is not None and n_new >= max_events:
            break
        m = float(bound(current, s))
        brk = lam.breakpoints(current, s, b)
        limit = float(brk[0]) if len(brk) else b
        if m <= 0.0:
            s = limit
            continue
        s_new = s + rng.exponential(1.0 / m)
        if s_new >= limit:
            s = limit
            continue
        s = s_new
        value = float(np.asarray(lam(current, np.array([s]))).reshape(-1)[0])
        if check_bound and value > m * (1.0 + 1e-9):
            raise BoundViolation(f"lambda({s}) = {value} exceeds bound {m}")
        if rng.uniform() * m <= value:
            kind, info = marker(current, s, rng) if marker is not None else (0, {})
            if times and s <= times[-1]:
                s = times[-1] + TIE_JITTER
            times.append(s)
            types.append(int(kind))
            meta.append(info)
            n_new += 1
            n = len(times)
            if n > buf_t.size:
                buf_t = np.concatenate([buf_t, np.empty(buf_t.size)])
                buf_k = np.concatenate([buf_k, np.empty(buf_k.size, dtype=int)])
            buf_t[n - 1], buf_k[n - 1] = s, int(kind)
            current = EventSequence._trusted(buf_t[:n], (lo, b), buf_k[:n], meta)
    return EventSequence(np.asarray(times), (lo, b), np.asarray(types, dtype=int), meta)
