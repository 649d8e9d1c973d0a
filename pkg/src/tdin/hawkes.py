"""Univariate Hawkes process with exponential kernel.

    lambda(t) = mu + a * sum_{t_i < t} exp(-beta (t - t_i))

The excitation sum is carried by the recursion
R_i = exp(-beta (t_i - t_{i-1})) (1 + R_{i-1}), which makes the intensity at
every event and the exact negative log-likelihood O(n).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import FutureEventInHistory, InfeasibleConfig, NonConvergence, ValidationError
from .neural import Adam, ParamStore, inv_softplus, sigmoid, softplus
from .ppcore import EventSequence, IntensityEvaluator, simulate_thinning

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HawkesParams:
    mu: float
    a: float
    beta: float

    def __post_init__(self):
        if not (self.mu >= 0 and self.a >= 0 and self.beta > 0):
            raise ValidationError(f"need mu >= 0, a >= 0, beta > 0; got {self}")

    @property
    def branching_ratio(self) -> float:
        return self.a / self.beta

    @property
    def stationary_rate(self) -> float:
        return self.mu / (1.0 - self.branching_ratio)

    def to_json(self) -> str:
        return json.dumps({"mu": self.mu, "a": self.a, "beta": self.beta}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "HawkesParams":
        d = json.loads(text)
        return cls(float(d["mu"]), float(d["a"]), float(d["beta"]))


@njit(cache=True)
def _recursion(times, beta):
    """R_i = sum_{j<i} exp(-beta (t_i - t_j)) and its derivative in beta."""
    n = times.shape[0]
    r = np.zeros(n)
    dr = np.zeros(n)
    for i in range(1, n):
        gap = times[i] - times[i - 1]
        decay = np.exp(-beta * gap)
        r[i] = decay * (1.0 + r[i - 1])
        dr[i] = decay * (dr[i - 1] - gap * (1.0 + r[i - 1]))
    return r, dr


def _excitation_after(times: np.ndarray, beta: float, t):
    """sum_i exp(-beta (t - t_i)) for t >= every t_i."""
    t = np.asarray(t, dtype=float)
    if times.size == 0:
        return np.zeros_like(t)
    r, _ = _recursion(np.ascontiguousarray(times, dtype=float), beta)
    return np.exp(-beta * (t - times[-1])) * (1.0 + r[-1])


def hawkes_intensity(p: HawkesParams, history, t):
    """Intensity at ``t`` given event times ``history`` (all strictly before t)."""
    times = history.times if isinstance(history, EventSequence) else np.asarray(history, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if times.size and np.any(times[-1] >= t_arr):
        raise FutureEventInHistory("history contains events at or after t")
    out = p.mu + p.a * _excitation_after(times, p.beta, t_arr)
    return float(out) if out.ndim == 0 else out


def hawkes_intensity_naive(p: HawkesParams, history, t: float) -> float:
    times = np.asarray(history, dtype=float)
    times = times[times < t]
    return float(p.mu + p.a * np.sum(np.exp(-p.beta * (t - times))))


class HawkesIntensity(IntensityEvaluator):
    def __init__(self, p: HawkesParams):
        self.p = p

    def __call__(self, history, t):
        return np.asarray(hawkes_intensity(self.p, history, t), dtype=float)

    def bound(self, history: EventSequence, s: float) -> float:
        """lambda just after s; dominates lambda until the next event since the kernel decays."""
        return float(self.p.mu + self.p.a * _excitation_after(history.times, self.p.beta, s))


def _nll_and_grad(mu, a, beta, times, t0, t1):
    r, dr = _recursion(times, beta)
    lam = mu + a * r
    if np.any(lam <= 0):
        return np.inf, np.zeros(3)
    tail = t1 - times
    e = np.exp(-beta * tail)
    integral = mu * (t1 - t0) + (a / beta) * np.sum(1.0 - e)
    nll = -np.sum(np.log(lam)) + integral
    inv = 1.0 / lam
    g_mu = -np.sum(inv) + (t1 - t0)
    g_a = -np.sum(r * inv) + np.sum(1.0 - e) / beta
    g_beta = -np.sum(a * dr * inv) - (a / beta ** 2) * np.sum(1.0 - e) + (a / beta) * np.sum(tail * e)
    return nll, np.array([g_mu, g_a, g_beta])


def _times_in(seq, window):
    times = seq.times if isinstance(seq, EventSequence) else np.asarray(seq, dtype=float)
    t0, t1 = seq.window if window is None else window
    return np.ascontiguousarray(times, dtype=float), float(t0), float(t1)


def hawkes_nll(p: HawkesParams, seq, window=None) -> float:
    """Exact NLL: -sum log lambda(t_i) + mu |W| + (a/beta) sum (1 - exp(-beta (T - t_i)))."""
    times, t0, t1 = _times_in(seq, window)
    return float(_nll_and_grad(p.mu, p.a, p.beta, times, t0, t1)[0])


def hawkes_nll_grad(p: HawkesParams, seq, window=None) -> np.ndarray:
    """Gradient of :func:`hawkes_nll` with respect to (mu, a, beta)."""
    times, t0, t1 = _times_in(seq, window)
    return _nll_and_grad(p.mu, p.a, p.beta, times, t0, t1)[1]


@dataclass
class FitOptions:
    lr: float = 0.05
    max_iter: int = 4000
    tol: float = 1e-10
    patience: int = 200
    strict: bool = False


def fit_hawkes_mle(seq: EventSequence, init: HawkesParams, opts: FitOptions | None = None) -> HawkesParams:
    """Maximum-likelihood fit with Adam on softplus-reparameterised parameters.

    Returns the best iterate seen, so the fitted NLL never exceeds the NLL at
    ``init``.
    """
    opts = opts or FitOptions()
    times, t0, t1 = _times_in(seq, None)
    if times.size < 100:
        raise ValidationError("fit_hawkes_mle needs at least 100 events")
    keys = ("mu", "a", "beta")
    start = np.array([max(init.mu, 1e-6), max(init.a, 1e-6), init.beta])
    store = ParamStore({k: inv_softplus(v) for k, v in zip(keys, start)})
    opt = Adam(store, lr=opts.lr)
    n = times.size

    def evaluate():
        raw = np.array([store[k][0] for k in keys])
        val = softplus(raw)
        nll, g = _nll_and_grad(val[0], val[1], val[2], times, t0, t1)
        return val, nll, g * sigmoid(raw)

    best_val, best_nll, _ = evaluate()
    init_nll = hawkes_nll(init, seq)
    if init_nll <= best_nll:
        best_val, best_nll = np.array([init.mu, init.a, init.beta]), init_nll
    stale = 0
    converged = False
    for it in range(opts.max_iter):
        val, nll, g = evaluate()
        if nll < best_nll - opts.tol * abs(best_nll):
            best_val, best_nll, stale = val, nll, 0
        else:
            stale += 1
            if nll < best_nll:
                best_val, best_nll = val, nll
        if stale >= opts.patience:
            converged = True
            break
        opt.lr = opts.lr / (1.0 + it / 500.0)
        for k, gk in zip(keys, g / n):
            store.grads[k][:] = gk
        opt.step()
    best = HawkesParams(float(best_val[0]), float(best_val[1]), float(best_val[2]))
    if not converged:
        msg = f"no convergence after {opts.max_iter} iterations; best NLL {best_nll:.6f}"
        if opts.strict:
            raise NonConvergence(msg, best=best)
        log.warning(msg)
    return best


def simulate_hawkes(p: HawkesParams, window, seed=None, history: EventSequence | None = None,
                    max_events: int | None = None) -> EventSequence:
    if p.branching_ratio >= 1.0:
        raise InfeasibleConfig(f"non-stationary Hawkes config: a/beta = {p.branching_ratio}")
    lam = HawkesIntensity(p)
    return simulate_thinning(lam, lam.bound, window, seed, history=history, max_events=max_events)
