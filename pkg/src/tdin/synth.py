"""Synthetic M&A world drawn from a planted TDIN model.

Firms belong to latent industry clusters. Similarity scores are high inside
a cluster, so graph neighbours are mostly cluster mates. Text embeddings
carry the cluster (one-hot block), a persistent deal-appetite coordinate
and noise. The planted model reads

* a constant offset (a saturated financial unit) as the base logit,
* the appetite coordinate for firm-level rate differences,
* optionally the first accounting column (``acc_effect``),
* the omega term for short-lived excitation after own and peer deals,
* cluster units through both message-passing layers, with
  Phi = choice_scale * I, so targets tend to come from the acquirer's cluster.

All firms are simulated as dimensions of one process by thinning the summed
intensity; the marker picks the acquirer in proportion to its intensity and
the target from the planted choice distribution.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import neural as nn
from .data import (ACCOUNTING_COLUMNS, Dataset, DealRecord, FeatureTable, build_graph,
                   date_to_t, frequent_acquirers, sort_deals, t_to_date)
from .errors import InfeasibleConfig
from .graph import SimilarityRecord
from .model import (FEATURE_UPDATE, PEER_MA, SELF_MA, ModelConfig, ModelParams, encode,
                    message_pass, normalized_adjacency)
from .neural import inv_softplus, softplus
from .ppcore import EventSequence, IntensityEvaluator, simulate_thinning

log = logging.getLogger(__name__)

# rough location / spread of each accounting column, for realistic-looking files
_ACC_LOC = np.array([7.0, 2.0, 0.3, 0.05, 0.08, 0.3, 0.1, 8.0, 0.1, 0.2, 0.9, 1.8, 0.07,
                     0.0, 0.5, 0.03, 0.1])
_ACC_SCALE = np.array([1.5, 0.8, 0.1, 0.05, 0.1, 0.15, 0.05, 1.2, 0.05, 0.1, 0.3, 0.5, 0.1,
                       1.0, 0.3, 0.02, 0.1])


@dataclass
class WorldConfig:
    n_firms: int = 20
    start_year: int = 1996
    n_years: int = 24
    n_clusters: int = 3
    text_noise_dims: int = 2
    top_k: int = 3
    threshold: float = 0.6
    min_deals: int = 4
    base_rate: float = 0.35        # yearly deal rate of a firm with neutral appetite
    rate_spread: float = 1.5       # logit change per unit of tanh(appetite)
    acc_effect: float = 0.0        # logit change per unit of tanh(first accounting column)
    peer_effect: float = 2.0       # w_o1
    peer_decay: float = 3.0        # w_o2 (per year)
    choice_scale: float = 3.0
    acc_rho: float = 0.9
    text_rho: float = 0.95
    sim_noise: float = 0.08
    missing_frac: float = 0.0
    planted_d2: int = 16

    def validate(self) -> None:
        if self.n_firms < 3 or self.n_years < 5 or self.n_clusters < 1:
            raise InfeasibleConfig("need at least 3 firms, 5 years and 1 cluster")
        if self.peer_decay <= 0:
            raise InfeasibleConfig("peer_decay must be positive for the excitation to decay")
        if not self.base_rate > 0:
            raise InfeasibleConfig("base_rate must be positive")
        if not (0 <= self.acc_rho < 1 and 0 <= self.text_rho < 1):
            raise InfeasibleConfig("drift persistence must lie in [0, 1)")
        if not 0 <= self.missing_frac < 0.5:
            raise InfeasibleConfig("missing_frac must lie in [0, 0.5)")

    @property
    def text_dim(self) -> int:
        return self.n_clusters + 1 + self.text_noise_dims


def _firm_ids(n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"F{i:0{width}d}" for i in range(n)]


def planted_params(cfg: WorldConfig) -> ModelParams:
    """Hand-built ModelParams encoding the world's rate and choice structure."""
    h = max(2, cfg.n_clusters + 1)
    mp = max(cfg.n_clusters, 1)
    mcfg = ModelConfig(d1=2 * h, d2=cfg.planted_d2, mp_dim=mp)
    p = ModelParams.zeros(mcfg, cfg.text_dim)
    s = p.store
    offset_unit = np.tanh(2.0)
    s["fin.b"][1] = 2.0
    s["w_e"][1] = float(inv_softplus(cfg.base_rate)) / offset_unit
    s["fin.W"][0, 0] = 1.0
    s["w_e"][0] = cfg.acc_effect
    s["txt.W"][0, cfg.n_clusters] = 1.0          # appetite coordinate
    s["w_e"][h] = cfg.rate_spread
    for k in range(cfg.n_clusters):
        s["txt.W"][1 + k, k] = 3.0
        s["mp1.W"][k, h + 1 + k] = 2.0            # self part, cluster unit k
        s["mp2.W"][k, k] = 2.0
    s["phi"] = cfg.choice_scale * np.eye(mp)
    s["w_o1"][0] = cfg.peer_effect
    s["w_o2_raw"][0] = float(inv_softplus(cfg.peer_decay))
    p.acc_mean, p.acc_std = _ACC_LOC.copy(), _ACC_SCALE.copy()
    return p


def _features(cfg: WorldConfig, rng, clusters: np.ndarray) -> FeatureTable:
    n, years = cfg.n_firms, cfg.n_years
    acc_z = np.empty((years, n, len(ACCOUNTING_COLUMNS)))
    acc_z[0] = rng.standard_normal((n, len(ACCOUNTING_COLUMNS)))
    shock = np.sqrt(1 - cfg.acc_rho ** 2)
    for y in range(1, years):
        acc_z[y] = cfg.acc_rho * acc_z[y - 1] + shock * rng.standard_normal(acc_z[0].shape)
    acc = _ACC_LOC + _ACC_SCALE * acc_z
    text = np.empty((years, n, cfg.text_dim))
    onehot = np.eye(cfg.n_clusters)[clusters]
    appetite = rng.standard_normal(n)
    noise = rng.standard_normal((n, cfg.text_noise_dims))
    t_shock = np.sqrt(1 - cfg.text_rho ** 2)
    for y in range(years):
        if y:
            appetite = cfg.text_rho * appetite + t_shock * rng.standard_normal(n)
            noise = cfg.text_rho * noise + t_shock * rng.standard_normal(noise.shape)
        text[y, :, :cfg.n_clusters] = onehot + 0.1 * rng.standard_normal(onehot.shape)
        text[y, :, cfg.n_clusters] = appetite
        text[y, :, cfg.n_clusters + 1:] = noise
    firms = _firm_ids(n)
    yrs = list(range(cfg.start_year, cfg.start_year + years))
    return FeatureTable(firms, yrs, acc, text, np.ones((years, n), dtype=bool))


def _similarity(cfg: WorldConfig, rng, clusters: np.ndarray, firms: list) -> list:
    n = cfg.n_firms
    iu = np.triu_indices(n, 1)
    same = clusters[iu[0]] == clusters[iu[1]]
    level = np.where(same, 0.7, 0.25) + cfg.sim_noise * rng.standard_normal(same.size)
    out = []
    for y in range(cfg.n_years):
        level = level + 0.3 * cfg.sim_noise * rng.standard_normal(same.size)
        scores = np.clip(level, 0.0, 1.0)
        for a, b, sc in zip(iu[0], iu[1], scores):
            out.append(SimilarityRecord(firms[a], firms[b], cfg.start_year + y, round(float(sc), 6)))
    return out


class WorldIntensity(IntensityEvaluator):
    """Summed intensity of every firm in a planted world.

    State (RNN hidden states, last record and last M&A times) is advanced
    incrementally as the simulation history grows; a shorter history or an
    earlier query time resets it.
    """

    def __init__(self, params: ModelParams, ds_features: FeatureTable, graph, start_year: int):
        self.params = params
        self.features = ds_features
        self.graph = graph
        self.start_year = start_year
        self.firms = list(ds_features.firms)
        self.index = {f: i for i, f in enumerate(self.firms)}
        n_periods = len(ds_features.years)
        tape = nn.Tape(params.store, record=False)
        self.base_e = np.empty((n_periods, len(self.firms)))
        self.Z = []
        self.active = ds_features.present.copy()
        for p, year in enumerate(ds_features.years):
            E = encode(tape, params, ds_features.accounting[p], ds_features.text[p])
            self.base_e[p] = E.value @ params.store["w_e"]
            snap = graph.snapshot_at(year)
            self.Z.append(message_pass(tape, E, normalized_adjacency(snap, self.firms, self.active[p])).value)
        s = params.store
        self.w_c = s["w_c"]
        self.w1, self.w2 = float(s["w_o1"][0]), params.w_o2
        self.rnn = (s["rnn.W_hh"], s["rnn.W_xh"], s["rnn.b"])
        self.phi = s["phi"]
        self._reset()

    def _reset(self):
        n = len(self.firms)
        self.c = np.zeros((n, self.params.config.d2))
        self.last_rec = np.zeros(n)
        self.last_ma = np.zeros(n)
        self.n_done = 0
        self.next_boundary = 1
        self.clock = 0.0

    def _step(self, i: int, t: float, kind: int, sim: float):
        Whh, Wxh, b = self.rnn
        x = np.array([t - self.last_rec[i], float(kind), sim])
        self.c[i] = np.tanh(Whh @ self.c[i] + Wxh @ x + b)
        self.last_rec[i] = t
        if kind != FEATURE_UPDATE:
            self.last_ma[i] = t

    def _boundary(self, k: int):
        p_new, p_old = k, k - 1
        for i in range(len(self.firms)):
            changed = not (np.array_equal(self.features.accounting[p_new, i], self.features.accounting[p_old, i])
                           and np.array_equal(self.features.text[p_new, i], self.features.text[p_old, i]))
            if changed:
                self._step(i, float(k), FEATURE_UPDATE, 0.0)

    def _deal(self, t: float, acq: int, tgt: int):
        snap = self.graph.snapshot_at(self.start_year + t)
        a, v = self.firms[acq], self.firms[tgt]
        self._step(acq, t, SELF_MA, snap.similarity(a, v))
        for peer in sorted(snap.neighbors(a)):
            self._step(self.index[peer], t, PEER_MA, snap.edge_score(a, peer))

    def _advance(self, history: EventSequence, t: float, inclusive: bool):
        if len(history) < self.n_done or t < self.clock:
            self._reset()
        n_periods = len(self.features.years)
        while True:
            t_evt = history.times[self.n_done] if self.n_done < len(history) else np.inf
            k = self.next_boundary
            k_ok = k < n_periods and (k <= t if inclusive else k < t)
            if k_ok and k <= t_evt:
                self._boundary(k)
                self.next_boundary += 1
            elif t_evt < np.inf:
                meta = history.meta[self.n_done]
                self._deal(float(t_evt), int(history.types[self.n_done]), int(meta["target"]))
                self.n_done += 1
            else:
                break
        self.clock = t

    def _period(self, t: float) -> int:
        return min(int(np.floor(t)), len(self.features.years) - 1)

    def per_firm(self, history: EventSequence, t: float) -> np.ndarray:
        self._advance(history, t, inclusive=False)
        p = self._period(t - 1e-12) if t == np.floor(t) else self._period(t)
        base = self.base_e[p] + self.c @ self.w_c
        lam = softplus(base + self.w1 * np.exp(-self.w2 * (t - self.last_ma)))
        return np.where(self.active[p], lam, 0.0)

    def __call__(self, history, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([self.per_firm(history, float(ti)).sum() for ti in t])

    def breakpoints(self, history, a, b):
        ks = np.arange(np.floor(a) + 1, np.ceil(b))
        return ks[(ks > a) & (ks < b) & (ks < len(self.features.years))]

    def bound(self, history: EventSequence, s: float) -> float:
        self._advance(history, s, inclusive=True)
        p = self._period(s)
        base = self.base_e[p] + self.c @ self.w_c
        boost = np.maximum(self.w1 * np.exp(-self.w2 * (s - self.last_ma)), 0.0)
        return float(np.sum(np.where(self.active[p], softplus(base + boost), 0.0)))

    def choice_probs(self, t: float, acq: int) -> np.ndarray:
        p = self._period(t)
        Z = self.Z[p]
        logits = Z @ (self.phi.T @ Z[acq])
        mask = self.active[p].copy()
        mask[acq] = False
        logits = np.where(mask, logits, -np.inf)
        w = np.exp(logits - logits.max())
        return w / w.sum()

    def marker(self, history, t, rng):
        lam = self.per_firm(history, t)
        acq = int(rng.choice(len(lam), p=lam / lam.sum()))
        tgt = int(rng.choice(len(lam), p=self.choice_probs(t, acq)))
        return acq, {"target": tgt}


def synth_generate(cfg: WorldConfig | None = None, seed: int = 0) -> Dataset:
    """Draw a complete world (features, similarity, deals) from a planted model."""
    cfg = cfg or WorldConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    clusters = np.sort(rng.integers(0, cfg.n_clusters, cfg.n_firms))
    features = _features(cfg, rng, clusters)
    similarity = _similarity(cfg, rng, clusters, features.firms)
    graph = build_graph(similarity, features, cfg.top_k, cfg.threshold)
    params = planted_params(cfg)
    lam = WorldIntensity(params, features, graph, cfg.start_year)
    seq = simulate_thinning(lam, lam.bound, (0.0, float(cfg.n_years)), rng, marker=lam.marker)
    deals = []
    for t, acq, meta in zip(seq.times, seq.types, seq.meta):
        t = date_to_t(t_to_date(float(t), cfg.start_year), cfg.start_year)
        if t >= cfg.n_years:
            continue
        value = float(np.round(np.exp(rng.normal(4.0, 1.2)) + 1.5, 3))
        deals.append(DealRecord(features.firms[acq], features.firms[meta["target"]], t,
                                100.0, 100.0, value, "standard"))
    deals = sort_deals(deals)
    if cfg.missing_frac > 0:
        features = _punch_holes(features, cfg.missing_frac, rng)
    acquirers = sorted(frequent_acquirers(deals, cfg.min_deals))
    truth = {"world": asdict(cfg), "seed": seed, "clusters": clusters.tolist(),
             "planted": {"config": asdict(params.config), "params": params.store.to_dict(),
                         "acc_mean": params.acc_mean.tolist(), "acc_std": params.acc_std.tolist()}}
    log.info("synthetic world seed %d: %d deals, %d frequent acquirers", seed, len(deals), len(acquirers))
    return Dataset(deals, features, graph, similarity, acquirers, cfg.start_year, cfg.n_years,
                   cfg.top_k, cfg.threshold, cfg.min_deals, truth)


def _punch_holes(table: FeatureTable, frac: float, rng) -> FeatureTable:
    """Blank a fraction of accounting cells, keeping year 0 of every firm observed."""
    acc = table.accounting.copy()
    holes = rng.uniform(size=acc.shape) < frac
    holes[0] = False
    acc[holes] = np.nan
    return FeatureTable(list(table.firms), list(table.years), acc, table.text.copy(), table.present.copy())


def planted_from_truth(truth: dict) -> ModelParams:
    from .neural import ParamStore
    pl = truth["planted"]
    return ModelParams(ModelConfig(**pl["config"]), ParamStore.from_dict(pl["params"]),
                       np.asarray(pl["acc_mean"], float), np.asarray(pl["acc_std"], float))
