"""Deal, feature and similarity ingestion plus preprocessing.

File layout of a dataset directory::

    deals.csv         acquirer,target,date,pct_acquired,pct_after,value_musd,deal_type
    features.csv      firm,year,<17 accounting columns>
    embeddings.jsonl  {"firm": ..., "year": ..., "vector": [...]}
    similarity.csv    firm_a,firm_b,year,score
    dataset.json      window, graph rule and (after preprocessing) acquirer list
    world_truth.json  planted parameters (synthetic worlds only)

Times are years since 1 January of ``start_year``: t = days / 365.25.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np
import pandas as pd

from .errors import ColumnGloballyMissing, IoFailure, UnknownFirm, ValidationError
from .graph import DynamicGraph, SimilarityRecord, read_similarity_csv, write_similarity_csv
from .ppcore import TIE_JITTER

log = logging.getLogger(__name__)

ACCOUNTING_COLUMNS = [
    "Size", "Market-to-book ratio", "Leverage", "ROA", "Sales growth", "PPE", "Cash",
    "Sale", "Cash-to-asset", "Cash-to-sales", "Sales-to-asset", "Current ratio",
    "Asset growth", "GSI", "DE", "R&D", "ROE",
]
EXCLUDED_DEAL_TYPES = {"block purchase", "creeping acquisition", "privatization"}
DAYS_PER_YEAR = 365.25
DEAL_COLUMNS = ["acquirer", "target", "date", "pct_acquired", "pct_after", "value_musd", "deal_type"]


def date_to_t(date: str, start_year: int) -> float:
    ts = pd.Timestamp(date)
    return (ts - pd.Timestamp(year=start_year, month=1, day=1)).total_seconds() / 86400.0 / DAYS_PER_YEAR


def t_to_date(t: float, start_year: int) -> str:
    moment = datetime(start_year, 1, 1) + timedelta(seconds=round(t * DAYS_PER_YEAR * 86400.0))
    return moment.strftime("%Y-%m-%dT%H:%M:%S")


@dataclass
class DealRecord:
    acquirer: str
    target: str
    t: float
    pct_acquired: float = 100.0
    pct_after: float = 100.0
    value_musd: float = 10.0
    deal_type: str = "standard"


def filter_deals(raw: list[DealRecord]) -> list[DealRecord]:
    """Keep complete majority takeovers above one million dollars."""
    return [d for d in raw
            if d.acquirer != d.target
            and d.pct_acquired > 20.0
            and d.pct_after > 50.0
            and d.value_musd > 1.0
            and d.deal_type.strip().lower() not in EXCLUDED_DEAL_TYPES]


def frequent_acquirers(deals: list[DealRecord], min_count: int = 4) -> set[str]:
    counts = Counter(d.acquirer for d in deals)
    return {firm for firm, n in counts.items() if n >= min_count}


def sort_deals(deals: list[DealRecord]) -> list[DealRecord]:
    """Order by (t, acquirer, target) and push exact time ties apart."""
    out = sorted(deals, key=lambda d: (d.t, d.acquirer, d.target))
    for i in range(1, len(out)):
        if out[i].t <= out[i - 1].t:
            out[i] = DealRecord(**{**out[i].__dict__, "t": out[i - 1].t + TIE_JITTER})
    return out


@dataclass
class FirmFeatures:
    firm: str
    period: int
    accounting: np.ndarray
    text_embedding: np.ndarray


@dataclass
class FeatureTable:
    """Dense (year, firm) arrays; NaN marks a missing value, ``present`` marks listed firms."""

    firms: list
    years: list
    accounting: np.ndarray   # [Y, F, 17]
    text: np.ndarray         # [Y, F, T]
    present: np.ndarray      # [Y, F] bool

    def __post_init__(self):
        order = sorted(range(len(self.firms)), key=lambda i: self.firms[i])
        if order != list(range(len(self.firms))):
            self.firms = [self.firms[i] for i in order]
            self.accounting = self.accounting[:, order]
            self.text = self.text[:, order]
            self.present = self.present[:, order]
        self.firm_index = {f: i for i, f in enumerate(self.firms)}
        self.year_index = {y: i for i, y in enumerate(self.years)}

    @property
    def text_dim(self) -> int:
        return self.text.shape[2]

    def get(self, firm: str, year: int) -> FirmFeatures:
        if firm not in self.firm_index:
            raise UnknownFirm(firm)
        y = self.year_index[year]
        f = self.firm_index[firm]
        return FirmFeatures(firm, year, self.accounting[y, f].copy(), self.text[y, f].copy())

    def n_missing(self) -> int:
        mask = self.present[..., None]
        return int(np.sum(np.isnan(self.accounting) & mask) + np.sum(np.isnan(self.text) & mask))

    @classmethod
    def from_frames(cls, features: pd.DataFrame, embeddings: list[dict]) -> "FeatureTable":
        firms = sorted(set(features["firm"].astype(str)))
        years = list(range(int(features["year"].min()), int(features["year"].max()) + 1))
        fi = {f: i for i, f in enumerate(firms)}
        yi = {y: i for i, y in enumerate(years)}
        acc = np.full((len(years), len(firms), len(ACCOUNTING_COLUMNS)), np.nan)
        present = np.zeros((len(years), len(firms)), dtype=bool)
        for row in features.itertuples(index=False):
            y, f = yi[int(row[1])], fi[str(row[0])]
            acc[y, f] = np.asarray(row[2:], dtype=float)
            present[y, f] = True
        dim = max((len(e["vector"]) for e in embeddings), default=0)
        text = np.full((len(years), len(firms), dim), np.nan)
        for e in embeddings:
            f, y = str(e["firm"]), int(e["year"])
            if f in fi and y in yi:
                vec = np.asarray([np.nan if v is None else v for v in e["vector"]], dtype=float)
                text[yi[y], fi[f]] = vec
        return cls(firms, years, acc, text, present)

    def to_frames(self) -> tuple[pd.DataFrame, list[dict]]:
        rows, embeds = [], []
        for yi, year in enumerate(self.years):
            for fi, firm in enumerate(self.firms):
                if not self.present[yi, fi]:
                    continue
                rows.append([firm, year, *self.accounting[yi, fi].tolist()])
                vec = [None if np.isnan(v) else float(v) for v in self.text[yi, fi]]
                embeds.append({"firm": firm, "year": year, "vector": vec})
        return pd.DataFrame(rows, columns=["firm", "year", *ACCOUNTING_COLUMNS]), embeds


def _fill(values: np.ndarray, present: np.ndarray) -> np.ndarray:
    """Fill one [Y, F] column: forward fill per firm, else the cross-firm period mean."""
    out = values.copy()
    observed = ~np.isnan(values) & present
    if not observed.any():
        raise ColumnGloballyMissing("column has no observed value for any firm")
    global_mean = values[observed].mean()
    with np.errstate(invalid="ignore"):
        counts = observed.sum(axis=1)
        sums = np.where(observed, values, 0.0).sum(axis=1)
        period_mean = np.where(counts > 0, sums / np.maximum(counts, 1), global_mean)
    n_years, n_firms = values.shape
    for f in range(n_firms):
        last = np.nan
        for y in range(n_years):
            if not present[y, f]:
                continue
            if observed[y, f]:
                last = values[y, f]
            elif not np.isnan(last):
                out[y, f] = last
            else:
                out[y, f] = period_mean[y]
    return out


def interpolate_missing(table: FeatureTable) -> FeatureTable:
    """Forward-fill gaps from the previous year; firms with nothing earlier
    (including firms missing a column entirely) take the cross-firm mean of
    that year."""
    acc = table.accounting.copy()
    text = table.text.copy()
    for arr, label in ((acc, "accounting"), (text, "text")):
        for c in range(arr.shape[2]):
            try:
                arr[:, :, c] = _fill(arr[:, :, c], table.present)
            except ColumnGloballyMissing as exc:
                name = ACCOUNTING_COLUMNS[c] if label == "accounting" else f"text[{c}]"
                raise ColumnGloballyMissing(f"{label} column {name!r}: {exc}") from None
    return FeatureTable(list(table.firms), list(table.years), acc, text, table.present.copy())


@dataclass
class Dataset:
    deals: list
    features: FeatureTable
    graph: DynamicGraph
    similarity: list
    acquirers: list
    start_year: int
    n_years: int
    top_k: int = 10
    threshold: float = 0.2
    min_deals: int = 4
    truth: dict | None = None

    def __post_init__(self):
        known = set(self.features.firms)
        for d in self.deals:
            for firm in (d.acquirer, d.target):
                if firm not in known:
                    raise UnknownFirm(f"deal references unknown firm {firm}")

    @property
    def window(self) -> tuple[float, float]:
        return (0.0, float(self.n_years))

    @property
    def end_year(self) -> int:
        return self.start_year + self.n_years - 1

    @property
    def firms(self) -> list:
        return self.features.firms

    def period_of(self, t: float) -> int:
        """Calendar year whose features and graph apply at time t."""
        return min(self.start_year + int(np.floor(t + 1e-12)), self.features.years[-1])

    def snapshot(self, t: float):
        return self.graph.snapshot_at(self.period_of(t))

    def deals_until(self, t_end: float) -> list:
        return [d for d in self.deals if d.t <= t_end]


# -- file I/O ---------------------------------------------------------------

def _require(path):
    if not os.path.exists(path):
        raise IoFailure(f"missing file {path}")


def read_deals_csv(path, start_year: int) -> list[DealRecord]:
    _require(path)
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(DealRecord(row["acquirer"], row["target"], date_to_t(row["date"], start_year),
                                  float(row["pct_acquired"]), float(row["pct_after"]),
                                  float(row["value_musd"]), row["deal_type"]))
    return out


def write_deals_csv(deals: list[DealRecord], path, start_year: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DEAL_COLUMNS)
        for d in deals:
            w.writerow([d.acquirer, d.target, t_to_date(d.t, start_year), repr(float(d.pct_acquired)),
                        repr(float(d.pct_after)), repr(float(d.value_musd)), d.deal_type])


def read_feature_files(directory) -> FeatureTable:
    fpath, epath = os.path.join(directory, "features.csv"), os.path.join(directory, "embeddings.jsonl")
    _require(fpath)
    frame = pd.read_csv(fpath, dtype={"firm": str}, float_precision="round_trip")
    missing = [c for c in ACCOUNTING_COLUMNS if c not in frame.columns]
    if missing:
        raise ValidationError(f"features.csv lacks columns {missing}")
    frame = frame[["firm", "year", *ACCOUNTING_COLUMNS]]
    embeds = []
    if os.path.exists(epath):
        with open(epath) as fh:
            embeds = [json.loads(line) for line in fh if line.strip()]
    return FeatureTable.from_frames(frame, embeds)


def write_feature_files(table: FeatureTable, directory) -> None:
    frame, embeds = table.to_frames()
    frame.to_csv(os.path.join(directory, "features.csv"), index=False, float_format="%.17g")
    with open(os.path.join(directory, "embeddings.jsonl"), "w") as fh:
        for e in embeds:
            fh.write(json.dumps(e) + "\n")


def _read_json(path) -> dict:
    _require(path)
    with open(path) as fh:
        return json.load(fh)


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_graph(similarity: list[SimilarityRecord], table: FeatureTable, top_k: int,
                threshold: float) -> DynamicGraph:
    nodes = {y: [f for f, p in zip(table.firms, table.present[i]) if p]
             for i, y in enumerate(table.years)}
    periods = sorted(set(table.years) | {r.period for r in similarity})
    return DynamicGraph.from_records(similarity, top_k, threshold, periods, nodes)


def preprocess(raw_dir, out_dir=None) -> Dataset:
    """filter deals -> frequent acquirers -> interpolate features -> graph snapshots."""
    meta = _read_json(os.path.join(raw_dir, "dataset.json"))
    start_year, n_years = int(meta["start_year"]), int(meta["n_years"])
    top_k, threshold = int(meta.get("top_k", 10)), float(meta.get("threshold", 0.2))
    min_deals = int(meta.get("min_deals", 4))
    raw = read_deals_csv(os.path.join(raw_dir, "deals.csv"), start_year)
    deals = sort_deals([d for d in filter_deals(raw) if 0.0 <= d.t <= n_years])
    log.info("kept %d of %d deals after filtering", len(deals), len(raw))
    acquirers = sorted(frequent_acquirers(deals, min_deals))
    table = interpolate_missing(read_feature_files(raw_dir))
    similarity = read_similarity_csv(os.path.join(raw_dir, "similarity.csv"))
    truth_path = os.path.join(raw_dir, "world_truth.json")
    truth = _read_json(truth_path) if os.path.exists(truth_path) else None
    ds = Dataset(deals, table, build_graph(similarity, table, top_k, threshold), similarity,
                 acquirers, start_year, n_years, top_k, threshold, min_deals, truth)
    if out_dir is not None:
        save_dataset(ds, out_dir)
    return ds


def save_dataset(ds: Dataset, directory, processed: bool = True) -> None:
    os.makedirs(directory, exist_ok=True)
    write_deals_csv(ds.deals, os.path.join(directory, "deals.csv"), ds.start_year)
    write_feature_files(ds.features, directory)
    write_similarity_csv(ds.similarity, os.path.join(directory, "similarity.csv"))
    meta = {"start_year": ds.start_year, "n_years": ds.n_years, "top_k": ds.top_k,
            "threshold": ds.threshold, "min_deals": ds.min_deals}
    if processed:
        meta["acquirers"] = list(ds.acquirers)
    write_json(meta, os.path.join(directory, "dataset.json"))
    if ds.truth is not None:
        write_json(ds.truth, os.path.join(directory, "world_truth.json"))


def load_dataset(directory) -> Dataset:
    """Load a preprocessed dataset directory."""
    meta = _read_json(os.path.join(directory, "dataset.json"))
    if "acquirers" not in meta:
        raise ValidationError(f"{directory} is not preprocessed (no acquirer list)")
    start_year, n_years = int(meta["start_year"]), int(meta["n_years"])
    top_k, threshold = int(meta["top_k"]), float(meta["threshold"])
    deals = sort_deals(read_deals_csv(os.path.join(directory, "deals.csv"), start_year))
    table = read_feature_files(directory)
    if table.n_missing():
        raise ValidationError(f"{directory} has missing feature values; run preprocessing")
    similarity = read_similarity_csv(os.path.join(directory, "similarity.csv"))
    truth_path = os.path.join(directory, "world_truth.json")
    truth = _read_json(truth_path) if os.path.exists(truth_path) else None
    return Dataset(deals, table, build_graph(similarity, table, top_k, threshold), similarity,
                   list(meta["acquirers"]), start_year, n_years, top_k, threshold,
                   int(meta.get("min_deals", 4)), truth)
