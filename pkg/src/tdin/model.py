"""TDIN: per-acquirer timing intensity and graph-conditioned target choice.

Timing: lambda_d(t) = softplus(w_e . e_d(t) + w_c . c_d(t) + w_o1 exp(-w_o2 gap))
where e_d is the intrinsic embedding (encoded accounting + text features of
the current period), c_d the hidden state of a tanh RNN folded over the
acquirer's timeline records before t, and gap the time since the last M&A
record (own or peer) on that timeline, or since the window start.

Choice: two mean-aggregate / combine passes over the period's graph turn
intrinsic embeddings into z_u; the target distribution is a softmax of
z_d^T Phi z_v over the candidate pool (period's listed firms minus d).

Between two consecutive timeline records only the gap moves, so each
acquirer's intensity is smooth on the pieces between records and the
compensator is Gauss-Legendre quadrature per piece.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import neural as nn
from .data import ACCOUNTING_COLUMNS, Dataset, FeatureTable, frequent_acquirers
from .errors import (CandidateNotAvailable, DimensionMismatch, DivergenceDetected,
                     EmptyCandidatePool, NegativeGap, UnknownAcquirer, UnknownFirmInDeal,
                     ValidationError)
from .graph import DynamicGraph, GraphSnapshot
from .neural import ParamStore, Tape, inv_softplus, softplus
from .ppcore import TIE_JITTER, IntensityEvaluator, expected_next_time, gauss_legendre

log = logging.getLogger(__name__)

SELF_MA, PEER_MA, FEATURE_UPDATE = 0, 1, 2


@dataclass(frozen=True)
class EventRecord:
    t: float
    kind: int
    similarity: float = 0.0
    target: str | None = None
    source: str | None = None    # acquirer of the deal behind a PeerMA record

    @property
    def is_ma(self) -> bool:
        return self.kind in (SELF_MA, PEER_MA)


@dataclass
class AcquirerTimeline:
    acquirer: str
    records: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def before(self, t: float, inclusive: bool = False) -> list:
        if inclusive:
            return [r for r in self.records if r.t <= t]
        return [r for r in self.records if r.t < t]

    def self_events(self) -> list:
        return [r for r in self.records if r.kind == SELF_MA]


def event_embedding(prev_t: float, rec: EventRecord) -> np.ndarray:
    """(time since previous record, kind, similarity)."""
    gap = rec.t - prev_t
    if gap < 0:
        raise NegativeGap(f"record at {rec.t} precedes previous record at {prev_t}")
    return np.array([gap, float(rec.kind), float(rec.similarity)])


# -- timelines ----------------------------------------------------------------

def _features_changed(features: FeatureTable, firm: str, year_a: int, year_b: int) -> bool:
    if year_a not in features.year_index or year_b not in features.year_index:
        return False
    f = features.firm_index[firm]
    ya, yb = features.year_index[year_a], features.year_index[year_b]
    if not (features.present[ya, f] and features.present[yb, f]):
        return bool(features.present[ya, f] != features.present[yb, f])
    same_acc = np.array_equal(features.accounting[ya, f], features.accounting[yb, f], equal_nan=True)
    same_txt = np.array_equal(features.text[ya, f], features.text[yb, f], equal_nan=True)
    return not (same_acc and same_txt)


def build_timelines(deals: list, g: DynamicGraph, features: FeatureTable,
                    acquirers=None, start_year: int | None = None,
                    t_end: float | None = None) -> dict:
    """Per-acquirer record streams of SelfMA, PeerMA and FeatureUpdate records.

    ``acquirers`` defaults to the frequent acquirers of ``deals``; deals by
    any firm (frequent or not) produce PeerMA records for the acquirer's
    neighbours in the snapshot at the deal time. Records after ``t_end`` are
    dropped; a FeatureUpdate exactly at ``t_end`` is kept.
    """
    start_year = features.years[0] if start_year is None else start_year
    acquirers = sorted(frequent_acquirers(deals) if acquirers is None else acquirers)
    known = set(features.firm_index)
    for d in deals:
        if d.acquirer not in known or d.target not in known:
            raise UnknownFirmInDeal(f"deal {d.acquirer} -> {d.target} references an unknown firm")
    wanted = set(acquirers)
    recs = {a: [] for a in acquirers}
    for d in deals:
        if t_end is not None and d.t > t_end:
            break
        snap = g.snapshot_at(start_year + d.t)
        if d.acquirer in wanted:
            recs[d.acquirer].append(EventRecord(d.t, SELF_MA, snap.similarity(d.acquirer, d.target),
                                                target=d.target))
        if d.acquirer in snap.nodes:
            for peer in snap.neighbors(d.acquirer):
                if peer in wanted:
                    recs[peer].append(EventRecord(d.t, PEER_MA, snap.edge_score(peer, d.acquirer),
                                                  source=d.acquirer))
    last_year = features.years[-1]
    for a in acquirers:
        for year in range(start_year + 1, last_year + 1):
            k = float(year - start_year)
            if t_end is not None and k > t_end:
                break
            if _features_changed(features, a, year - 1, year):
                recs[a].append(EventRecord(k, FEATURE_UPDATE, 0.0))
    out = {}
    for a in acquirers:
        rows = sorted(recs[a], key=lambda r: (r.t, r.kind))
        for i in range(1, len(rows)):
            if rows[i].t <= rows[i - 1].t:
                r = rows[i]
                rows[i] = EventRecord(rows[i - 1].t + TIE_JITTER, r.kind, r.similarity, r.target, r.source)
        out[a] = AcquirerTimeline(a, rows)
    return out


def dataset_timelines(ds: Dataset, t_end: float | None = None) -> dict:
    return build_timelines(ds.deals, ds.graph, ds.features, ds.acquirers, ds.start_year, t_end)


# -- parameters ---------------------------------------------------------------

@dataclass
class ModelConfig:
    d1: int = 8
    d2: int = 16
    mp_dim: int = 8
    n_quad: int = 64
    choice_loss: str = "bce"             # "bce" (mean BCE over candidates) or "ce"
    integrate_to: str = "last_event"     # or "window_end"
    lr: float = 0.05
    epochs: int = 200
    weight_decay: float = 6.0            # L2 on every weight (the loss is a sum, not a mean)
    encoder_decay: float = 60.0          # extra L2 on the accounting-encoder weights
    choice_decay: float = 0.1            # L2 on message-passing weights and Phi (replaces weight_decay)
    lr_halflife: float = 100.0           # epochs until lr halves (0 keeps it constant)
    init_scale: float = 0.5

    def __post_init__(self):
        if self.d1 < 2 or self.d1 % 2:
            raise ValidationError("d1 must be an even integer >= 2")
        if min(self.d2, self.mp_dim, self.n_quad, self.epochs) < 1:
            raise ValidationError("dimensions, n_quad and epochs must be positive")
        if self.choice_loss not in ("bce", "ce"):
            raise ValidationError(f"unknown choice_loss {self.choice_loss!r}")
        if self.integrate_to not in ("last_event", "window_end"):
            raise ValidationError(f"unknown integrate_to {self.integrate_to!r}")


def param_shapes(cfg: ModelConfig, n_acc: int, text_dim: int) -> dict:
    h = cfg.d1 // 2
    return {
        "fin.W": (h, n_acc), "fin.b": (h,),
        "txt.W": (h, text_dim), "txt.b": (h,),
        "w_e": (cfg.d1,), "w_c": (cfg.d2,), "w_o1": (1,), "w_o2_raw": (1,),
        "rnn.W_hh": (cfg.d2, cfg.d2), "rnn.W_xh": (cfg.d2, 3), "rnn.b": (cfg.d2,),
        "mp1.W": (cfg.mp_dim, 2 * cfg.d1), "mp1.b": (cfg.mp_dim,),
        "mp2.W": (cfg.mp_dim, 2 * cfg.mp_dim), "mp2.b": (cfg.mp_dim,),
        "phi": (cfg.mp_dim, cfg.mp_dim),
    }


@dataclass
class ModelParams:
    """Learnable weights plus the fixed accounting standardisation."""

    config: ModelConfig
    store: ParamStore
    acc_mean: np.ndarray
    acc_std: np.ndarray
    loss_log: list = field(default_factory=list)

    @property
    def text_dim(self) -> int:
        return self.store["txt.W"].shape[1]

    @property
    def w_o2(self) -> float:
        return float(softplus(self.store["w_o2_raw"][0]))

    @classmethod
    def zeros(cls, cfg: ModelConfig, text_dim: int, n_acc: int = len(ACCOUNTING_COLUMNS)) -> "ModelParams":
        store = ParamStore({k: np.zeros(s) for k, s in param_shapes(cfg, n_acc, text_dim).items()})
        store["w_o2_raw"] = np.array([inv_softplus(1.0)])
        return cls(cfg, store, np.zeros(n_acc), np.ones(n_acc))

    @classmethod
    def init(cls, cfg: ModelConfig, text_dim: int, seed: int = 0, acc_mean=None, acc_std=None,
             n_acc: int = len(ACCOUNTING_COLUMNS)) -> "ModelParams":
        rng = np.random.default_rng(seed)
        p = cls.zeros(cfg, text_dim, n_acc)
        for name, shape in param_shapes(cfg, n_acc, text_dim).items():
            if name.endswith(".W") or name.startswith("rnn.W"):
                p.store[name] = cfg.init_scale * rng.standard_normal(shape) / np.sqrt(shape[1])
        p.store["phi"] = np.eye(cfg.mp_dim) * 0.1
        if acc_mean is not None:
            p.acc_mean, p.acc_std = np.asarray(acc_mean, float), np.asarray(acc_std, float)
        return p

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.store.copy(), self.acc_mean.copy(), self.acc_std.copy())

    def scale_accounting(self, acc: np.ndarray) -> np.ndarray:
        return (acc - self.acc_mean) / self.acc_std

    def to_json(self) -> str:
        payload = {"config": asdict(self.config), "params": self.store.to_dict(),
                   "acc_mean": self.acc_mean.tolist(), "acc_std": self.acc_std.tolist()}
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        d = json.loads(text)
        return cls(ModelConfig(**d["config"]), ParamStore.from_dict(d["params"]),
                   np.asarray(d["acc_mean"], float), np.asarray(d["acc_std"], float))


def accounting_scaler(features: FeatureTable) -> tuple[np.ndarray, np.ndarray]:
    rows = features.accounting[features.present]
    mean = np.nanmean(rows, axis=0)
    std = np.nanstd(rows, axis=0)
    return mean, np.where(std > 1e-12, std, 1.0)


# -- differentiable building blocks ---------------------------------------------

def encode(tape: Tape, params: ModelParams, acc, text) -> nn.Var:
    """Intrinsic embeddings for feature arrays of shape [..., 17] and [..., T]."""
    acc, text = np.asarray(acc, float), np.asarray(text, float)
    if acc.shape[-1] != params.store["fin.W"].shape[1]:
        raise DimensionMismatch(f"accounting vector has {acc.shape[-1]} entries")
    if text.shape[-1] != params.text_dim:
        raise DimensionMismatch(f"text embedding has {text.shape[-1]} entries, expected {params.text_dim}")
    fin = nn.dense_forward(tape, "fin", params.scale_accounting(acc))
    txt = nn.dense_forward(tape, "txt", text)
    return nn.concat([fin, txt], axis=-1)


def message_pass(tape: Tape, E: nn.Var, norm_adj: np.ndarray) -> nn.Var:
    """Two aggregate/combine passes; ``norm_adj`` is row-normalised [..., N, N]."""
    h1 = nn.combine(tape, "mp1", E, nn.graph_aggregate(norm_adj, E))
    return nn.combine(tape, "mp2", h1, nn.graph_aggregate(norm_adj, h1))


def omega(tape: Tape, gap) -> nn.Var:
    decay = nn.vsoftplus(tape.param("w_o2_raw"))
    return tape.param("w_o1") * nn.exp(nn.neg(decay) * tape.const(gap))


def normalized_adjacency(snap: GraphSnapshot, order: list, active=None) -> np.ndarray:
    """Row-normalised neighbour matrix over ``order``; nodes without an active
    neighbour aggregate over themselves."""
    _, adj = snap.adjacency(order)
    if active is not None:
        act = np.asarray(active, dtype=bool)
        adj = adj * act[None, :] * act[:, None]
    deg = adj.sum(axis=1)
    lonely = deg == 0
    adj[lonely, lonely] = 1.0
    return adj / adj.sum(axis=1, keepdims=True)


# -- numpy-level operations --------------------------------------------------------

def _eval_tape(params: ModelParams) -> Tape:
    return Tape(params.store, record=False)


def intrinsic_embedding(params: ModelParams, f) -> np.ndarray:
    """e = concat(tanh-dense(accounting), tanh-dense(text)) for one FirmFeatures."""
    return encode(_eval_tape(params), params, f.accounting, f.text_embedding).value


def fold_records(params: ModelParams, records: list, start: float = 0.0) -> np.ndarray:
    """Hidden state after folding the RNN over ``records`` from the zero state."""
    tape = _eval_tape(params)
    h = np.zeros(params.config.d2)
    prev = start
    for r in records:
        h = nn.rnn_step(tape, h, event_embedding(prev, r)).value
        prev = r.t
    return h


def extrinsic_embedding(params: ModelParams, timeline: AcquirerTimeline, t: float,
                        start: float = 0.0) -> np.ndarray:
    """RNN summary of every record strictly before t."""
    return fold_records(params, timeline.before(t), start)


def timing_intensity(params: ModelParams, e, c, gap) -> np.ndarray | float:
    """softplus(w_e . e + w_c . c + w_o1 exp(-w_o2 gap))."""
    gap_arr = np.asarray(gap, dtype=float)
    if np.any(gap_arr < 0):
        raise NegativeGap(f"gap {gap} is negative")
    s = params.store
    x = float(np.dot(s["w_e"], e) + np.dot(s["w_c"], c))
    out = softplus(x + s["w_o1"][0] * np.exp(-params.w_o2 * gap_arr))
    return float(out) if out.ndim == 0 else out


def last_ma_time(records: list, start: float = 0.0) -> float:
    t = start
    for r in records:
        if r.is_ma:
            t = r.t
    return t


@dataclass
class ChoiceResult:
    candidates: list
    probs: np.ndarray

    def ranked(self) -> list:
        order = sorted(range(len(self.candidates)), key=lambda i: (-self.probs[i], self.candidates[i]))
        return [(self.candidates[i], float(self.probs[i])) for i in order]

    def prob(self, firm: str) -> float:
        try:
            return float(self.probs[self.candidates.index(firm)])
        except ValueError:
            raise CandidateNotAvailable(f"{firm} is not in the candidate pool") from None


def _period_arrays(features: FeatureTable, period: int):
    if period not in features.year_index:
        raise ValidationError(f"no features for period {period}")
    y = features.year_index[period]
    acc = np.nan_to_num(features.accounting[y])
    text = np.nan_to_num(features.text[y])
    return acc, text, features.present[y].copy()


def embeddings_for_period(params: ModelParams, snap: GraphSnapshot, features: FeatureTable):
    """(firm order, active mask, E, Z) for one snapshot."""
    order = list(features.firms)
    acc, text, present = _period_arrays(features, snap.period)
    active = present & np.array([f in snap.nodes for f in order])
    tape = _eval_tape(params)
    E = encode(tape, params, acc, text)
    Z = message_pass(tape, E, normalized_adjacency(snap, order, active))
    return order, active, E.value, Z.value


def choice_distribution(params: ModelParams, snap: GraphSnapshot, features: FeatureTable,
                        d: str, t: float | None = None) -> ChoiceResult:
    """P_d(v | t) over the period's candidate pool (features are those of ``snap.period``)."""
    order, active, _, Z = embeddings_for_period(params, snap, features)
    if d not in snap.nodes or d not in features.firm_index or not active[order.index(d)]:
        raise UnknownAcquirer(f"{d} is not an active node of the {snap.period} snapshot")
    i = order.index(d)
    mask = active.copy()
    mask[i] = False
    if not mask.any():
        raise EmptyCandidatePool(f"no candidates for {d} in {snap.period}")
    tape = _eval_tape(params)
    p = nn.bilinear_softmax(Z[i], Z, tape.param("phi"), mask).value
    cands = [f for f, m in zip(order, mask) if m]
    return ChoiceResult(cands, p[mask])


def acquirer_state(params: ModelParams, ds: Dataset, d: str, t: float, inclusive: bool = False,
                   timelines: dict | None = None):
    """(e, c, t_last_ma) for acquirer d with the history before t (or up to t)."""
    if d not in ds.acquirers:
        raise UnknownAcquirer(f"{d} is not a modeled acquirer")
    tl = (timelines or dataset_timelines(ds, t_end=t))[d]
    recs = tl.before(t, inclusive=inclusive)
    e = intrinsic_embedding(params, ds.features.get(d, ds.period_of(t)))
    return e, fold_records(params, recs), last_ma_time(recs)


def acquirer_intensity(params: ModelParams, ds: Dataset, d: str, t: float) -> float:
    """lambda_d(t) given all records strictly before t."""
    e, c, t_ma = acquirer_state(params, ds, d, t)
    return timing_intensity(params, e, c, t - t_ma)


def joint_intensity(params: ModelParams, ds: Dataset, d: str, v: str, t: float) -> float:
    """lambda_d(t, v) = lambda_d(t) P_d(v | t)."""
    choice = choice_distribution(params, ds.snapshot(t), ds.features, d, t)
    return acquirer_intensity(params, ds, d, t) * choice.prob(v)


class FrozenIntensity(IntensityEvaluator):
    """lambda_d(t) after t_c with history and features frozen at t_c."""

    def __init__(self, params: ModelParams, e, c, t_ma: float):
        s = params.store
        self.base = float(np.dot(s["w_e"], e) + np.dot(s["w_c"], c))
        self.w1, self.w2 = float(s["w_o1"][0]), params.w_o2
        self.t_ma = t_ma

    def __call__(self, history, t):
        t = np.asarray(t, dtype=float)
        return softplus(self.base + self.w1 * np.exp(-self.w2 * (t - self.t_ma)))

    def integral(self, a: float, b: float, n_nodes: int = 64) -> float:
        x, w = gauss_legendre(n_nodes)
        half = 0.5 * (b - a)
        return float(half * np.dot(w, self(None, a + half * (x + 1.0))))


def frozen_intensity(params: ModelParams, ds: Dataset, d: str, t_c: float,
                     timelines: dict | None = None) -> FrozenIntensity:
    """Intensity for t > t_c from records up to and including t_c."""
    e, c, t_ma = acquirer_state(params, ds, d, t_c, inclusive=True, timelines=timelines)
    return FrozenIntensity(params, e, c, t_ma)


def predict_next(params: ModelParams, ds: Dataset, d: str, t_c: float, horizon: float,
                 timelines: dict | None = None) -> tuple[float, list]:
    """(expected next deal time, targets ranked by choice probability at that time)."""
    if not 0.0 <= t_c <= ds.n_years:
        raise ValidationError(f"t_c = {t_c} outside the window")
    lam = frozen_intensity(params, ds, d, t_c, timelines)
    t_hat = expected_next_time(lam, t_c, horizon)
    snap = ds.snapshot(min(t_hat, ds.n_years - 1e-9))
    ranked = choice_distribution(params, snap, ds.features, d, t_hat).ranked()
    return t_hat, ranked


# -- batched loss --------------------------------------------------------------------

@dataclass
class Batch:
    """Everything the loss needs, as dense arrays over (period, firm)."""

    acc: np.ndarray          # [P, N, 17] raw accounting (scaled inside encode)
    text: np.ndarray         # [P, N, T]
    norm_adj: np.ndarray     # [P, N, N]
    active: np.ndarray       # [P, N]
    X: np.ndarray            # [K, B, 3] event embeddings, time-major
    mask: np.ndarray         # [K, B]
    piece_period: np.ndarray
    piece_firm: np.ndarray
    piece_state: np.ndarray  # hidden-state index j (state after j records)
    piece_batch: np.ndarray
    piece_gap0: np.ndarray
    piece_len: np.ndarray
    event_piece: np.ndarray  # pieces whose right end is a SelfMA record
    choice_period: np.ndarray
    choice_firm: np.ndarray
    choice_target: np.ndarray
    n_skipped_choice: int = 0


def build_batch(ds: Dataset, t_end: float | None = None, integrate_to: str = "last_event") -> Batch:
    t_end = float(ds.n_years) if t_end is None else float(t_end)
    feats = ds.features
    order = list(feats.firms)
    fidx = feats.firm_index
    periods = [y for y in feats.years if y - ds.start_year < t_end]
    P = len(periods)
    acc = np.zeros((P, len(order), feats.accounting.shape[2]))
    text = np.zeros((P, len(order), feats.text_dim))
    adj = np.zeros((P, len(order), len(order)))
    active = np.zeros((P, len(order)), dtype=bool)
    for p, year in enumerate(periods):
        snap = ds.graph.snapshot_at(year)
        a, tx, present = _period_arrays(feats, year)
        acc[p], text[p] = a, tx
        active[p] = present & np.array([f in snap.nodes for f in order])
        adj[p] = normalized_adjacency(snap, order, active[p])

    def period_index(t):
        return min(int(np.floor(t + 1e-12)), P - 1)

    timelines = dataset_timelines(ds, t_end=t_end)
    acqs = list(ds.acquirers)
    B = len(acqs)
    K = max((len(timelines[a].records) for a in acqs), default=0)
    X = np.zeros((K, B, 3))
    mask = np.zeros((K, B))
    pp, pf, ps, pb, pg, pl, ev = [], [], [], [], [], [], []
    cp, cf, ct = [], [], []
    skipped = 0
    for b, a in enumerate(acqs):
        recs = timelines[a].records
        prev, t_ma = 0.0, 0.0
        for k, r in enumerate(recs):
            X[k, b] = event_embedding(prev, r)
            mask[k, b] = 1.0
            prev = r.t
        own = [r.t for r in recs if r.kind == SELF_MA]
        stop = t_end if integrate_to == "window_end" else (own[-1] if own else 0.0)
        cuts = [0.0] + [r.t for r in recs]
        for j in range(len(cuts)):
            left = cuts[j]
            if j > 0 and recs[j - 1].is_ma:
                t_ma = recs[j - 1].t
            right = cuts[j + 1] if j + 1 < len(cuts) else stop
            right = min(right, stop)
            if left >= stop:
                break
            pp.append(period_index(0.5 * (left + right)))
            pf.append(fidx[a])
            ps.append(j)
            pb.append(b)
            pg.append(left - t_ma)
            pl.append(right - left)
            if j + 1 < len(cuts) and recs[j].kind == SELF_MA and recs[j].t <= stop:
                ev.append(len(pp) - 1)
        for r in recs:
            if r.kind != SELF_MA:
                continue
            p = period_index(r.t)
            ti = fidx[r.target]
            if ti == fidx[a] or not active[p, ti] or not active[p, fidx[a]]:
                skipped += 1
                continue
            cp.append(p)
            cf.append(fidx[a])
            ct.append(ti)
    if skipped:
        log.info("skipped %d deals whose target is outside the candidate pool", skipped)
    ints = lambda v: np.asarray(v, dtype=int)
    return Batch(acc, text, adj, active, X, mask, ints(pp), ints(pf), ints(ps), ints(pb),
                 np.asarray(pg, float), np.asarray(pl, float), ints(ev), ints(cp), ints(cf),
                 ints(ct), skipped)


def loss_terms(tape: Tape, params: ModelParams, batch: Batch) -> tuple[nn.Var, nn.Var]:
    """(timing NLL, choice loss) as tape variables."""
    cfg = params.config
    E = encode(tape, params, batch.acc, batch.text)              # [P, N, d1]

    # timing
    B = batch.X.shape[1]
    h = tape.const(np.zeros((B, cfg.d2)))
    states = [h]
    for k in range(batch.X.shape[0]):
        h = nn.rnn_step(tape, h, batch.X[k], mask=batch.mask[k])
        states.append(h)
    C = nn.stack(states, axis=0)                                 # [K+1, B, d2]
    timing = tape.const(0.0)
    if batch.piece_len.size:
        e_rows = E[(batch.piece_period, batch.piece_firm)]
        c_rows = C[(batch.piece_state, batch.piece_batch)]
        base = e_rows @ tape.param("w_e") + c_rows @ tape.param("w_c")   # [Np]
        x, w = gauss_legendre(cfg.n_quad)
        tau = 0.5 * batch.piece_len[:, None] * (x[None, :] + 1.0)
        gaps = batch.piece_gap0[:, None] + tau
        lam = nn.vsoftplus(nn.reshape(base, (-1, 1)) + omega(tape, gaps))
        weights = 0.5 * batch.piece_len[:, None] * w[None, :]
        integral = (lam * weights).sum()
        timing = integral
        if batch.event_piece.size:
            ev = batch.event_piece
            ev_gap = batch.piece_gap0[ev] + batch.piece_len[ev]
            lam_ev = nn.vsoftplus(base[ev] + omega(tape, ev_gap))
            timing = integral - nn.log(lam_ev).sum()

    # choice
    choice = tape.const(0.0)
    if batch.choice_period.size:
        Z = message_pass(tape, E, batch.norm_adj)                # [P, N, m]
        M = batch.choice_period.size
        z_d = Z[(batch.choice_period, batch.choice_firm)]        # [M, m]
        cand = Z[batch.choice_period]                            # [M, N, m]
        left = nn.reshape(z_d @ tape.param("phi"), (M, 1, cfg.mp_dim))
        logits = nn.reshape(left @ cand.T, (M, -1))              # [M, N]
        cmask = batch.active[batch.choice_period].copy()
        cmask[np.arange(M), batch.choice_firm] = False
        logp = nn.masked_log_softmax(logits, cmask)
        rows = np.arange(M)
        hit = logp[(rows, batch.choice_target)]
        if cfg.choice_loss == "ce":
            choice = -hit.sum()
        else:
            others = cmask.copy()
            others[rows, batch.choice_target] = False
            miss = nn.where(others, nn.log1mexp(nn.where(others, logp, -1.0)), 0.0)
            per_event = (hit + miss.sum(axis=1)) * tape.const(1.0 / cmask.sum(axis=1))
            choice = -per_event.sum()
    return timing, choice


def total_loss(params: ModelParams, ds: Dataset, t_end: float | None = None) -> tuple[float, float]:
    """(timing NLL, choice loss) summed over acquirers and their deals."""
    batch = build_batch(ds, t_end, params.config.integrate_to)
    timing, choice = loss_terms(_eval_tape(params), params, batch)
    return float(timing.value), float(choice.value)


def train(ds: Dataset, cfg: ModelConfig | None = None, seed: int = 0, t_end: float | None = None,
          init: ModelParams | None = None) -> ModelParams:
    """Full-batch Adam on timing NLL + choice loss; deterministic given seed.

    The per-epoch losses are kept in ``params.loss_log``.
    """
    cfg = cfg or ModelConfig()
    if not ds.acquirers:
        raise ValidationError("dataset has no modeled acquirers")
    batch = build_batch(ds, t_end, cfg.integrate_to)
    if init is None:
        mean, std = accounting_scaler(ds.features)
        params = ModelParams.init(cfg, ds.features.text_dim, seed, mean, std)
    else:
        params = init.copy()
    decay = {k: cfg.weight_decay for k in params.store.names()}
    decay["fin.W"] += cfg.encoder_decay
    for k in decay:
        if k.startswith(("mp1.", "mp2.")) or k == "phi":
            decay[k] = cfg.choice_decay
    opt = nn.Adam(params.store, lr=cfg.lr, weight_decay=decay)
    loss_log = []
    for epoch in range(cfg.epochs):
        params.store.zero_grad()
        tape = Tape(params.store)
        timing, choice = loss_terms(tape, params, batch)
        total = timing + choice
        value = float(total.value)
        if not np.isfinite(value):
            last = loss_log[-1]["total"] if loss_log else None
            raise DivergenceDetected(f"loss became {value} at epoch {epoch}; last finite loss {last}")
        loss_log.append({"epoch": epoch, "timing": float(timing.value),
                         "choice": float(choice.value), "total": value})
        if epoch % 50 == 0:
            log.info("epoch %d timing %.4f choice %.4f", epoch, timing.value, choice.value)
        tape.backward(total)
        if cfg.lr_halflife > 0:
            opt.lr = cfg.lr / (1.0 + epoch / cfg.lr_halflife)
        if not all(np.all(np.isfinite(g)) for g in params.store.grads.values()):
            raise DivergenceDetected(f"non-finite gradient at epoch {epoch}")
        opt.step()
    params.loss_log = loss_log
    return params


def prediction_record(d: str, t_hat: float, ranked: list, top: int | None = None) -> str:
    targets = [{"firm": f, "p": p} for f, p in (ranked if top is None else ranked[:top])]
    return json.dumps({"acquirer": d, "t_hat": t_hat, "targets": targets})


def interval_loss(params: ModelParams, ds: Dataset, t0: float, t1: float) -> tuple[float, float]:
    """(timing NLL, choice loss) of the deals in (t0, t1], conditioning on everything before t0."""
    p = params.copy()
    p.config = ModelConfig(**{**asdict(params.config), "integrate_to": "window_end"})
    hi = total_loss(p, ds, t1)
    lo = total_loss(p, ds, t0) if t0 > 0 else (0.0, 0.0)
    return hi[0] - lo[0], hi[1] - lo[1]
