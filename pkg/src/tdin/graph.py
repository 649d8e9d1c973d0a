"""Dynamic industry network built from pairwise similarity scores.

Each period's edge set is the union of two rules: every firm keeps its k
most similar partners (ties at rank k all kept), and every pair whose score
reaches the absolute threshold is linked regardless of rank. Edges are
undirected.
"""
from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import IoFailure, OutOfWindow, UnknownFirm, ValidationError


@dataclass(frozen=True)
class SimilarityRecord:
    firm_a: str
    firm_b: str
    period: int
    score: float

    def __post_init__(self):
        if self.firm_a == self.firm_b:
            raise ValidationError(f"self-similarity record for {self.firm_a}")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


@dataclass
class GraphSnapshot:
    period: int
    nodes: frozenset
    edges: dict = field(default_factory=dict)   # (a, b) with a < b -> score
    scores: dict = field(default_factory=dict)  # every recorded pair -> score

    def __post_init__(self):
        adj = defaultdict(set)
        for a, b in self.edges:
            if a == b:
                raise ValidationError("self-loop in snapshot")
            if a not in self.nodes or b not in self.nodes:
                raise ValidationError(f"edge {a}-{b} has an endpoint outside the node set")
            adj[a].add(b)
            adj[b].add(a)
        self._adj = {n: frozenset(adj.get(n, ())) for n in self.nodes}

    def neighbors(self, firm: str) -> frozenset:
        try:
            return self._adj[firm]
        except KeyError:
            raise UnknownFirm(f"{firm} is not a node of the {self.period} snapshot") from None

    def edge_score(self, a: str, b: str) -> float:
        return self.edges.get(_pair(a, b), 0.0)

    def similarity(self, a: str, b: str) -> float:
        """Recorded similarity of a pair whether or not it is an edge (0 if unrecorded)."""
        return self.scores.get(_pair(a, b), 0.0)

    def top_scores(self, firm: str, k: int = 10) -> list[float]:
        vals = sorted((s for (a, b), s in self.scores.items() if firm in (a, b)), reverse=True)
        return vals[:k]

    def adjacency(self, order: list[str] | None = None) -> tuple[list[str], np.ndarray]:
        order = sorted(self.nodes) if order is None else list(order)
        index = {f: i for i, f in enumerate(order)}
        mat = np.zeros((len(order), len(order)))
        for a, b in self.edges:
            if a in index and b in index:
                mat[index[a], index[b]] = mat[index[b], index[a]] = 1.0
        return order, mat


def _pair_scores(records: Iterable[SimilarityRecord], period: int) -> dict:
    sums, counts = defaultdict(float), defaultdict(int)
    for r in records:
        if r.period != period:
            continue
        key = _pair(r.firm_a, r.firm_b)
        sums[key] += r.score
        counts[key] += 1
    return {k: sums[k] / counts[k] for k in sums}


def build_snapshot(records: Iterable[SimilarityRecord], period: int, k: int = 10,
                   threshold: float = 0.2, nodes: Iterable[str] | None = None) -> GraphSnapshot:
    """Top-k plus threshold graph for one period.

    Duplicate records for a pair are averaged. ``nodes`` adds firms that have
    no similarity record (they stay isolated).
    """
    if k < 1:
        raise ValidationError("k must be at least 1")
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError("threshold must lie in [0, 1]")
    scores = _pair_scores(records, period)
    node_set = set(nodes or ())
    partners = defaultdict(list)
    for (a, b), s in scores.items():
        node_set.update((a, b))
        partners[a].append((s, b))
        partners[b].append((s, a))
    edges = {}
    for firm, lst in partners.items():
        lst.sort(key=lambda x: (-x[0], x[1]))
        cutoff = lst[min(k, len(lst)) - 1][0]
        for s, other in lst:
            if s >= cutoff:
                edges[_pair(firm, other)] = s
    for pair, s in scores.items():
        if s >= threshold:
            edges[pair] = s
    return GraphSnapshot(period, frozenset(node_set), edges, scores)


def neighbors(snap: GraphSnapshot, firm: str) -> frozenset:
    return snap.neighbors(firm)


@dataclass
class DynamicGraph:
    """Snapshots keyed by integer period (calendar year)."""

    snapshots: dict
    end: float | None = None   # exclusive upper bound on t, if any

    def __post_init__(self):
        if self.snapshots:
            periods = sorted(self.snapshots)
            if periods != list(range(periods[0], periods[-1] + 1)):
                raise ValidationError("snapshot periods must be contiguous")

    @property
    def periods(self) -> list[int]:
        return sorted(self.snapshots)

    def snapshot_at(self, t: float) -> GraphSnapshot:
        """Most recent snapshot whose period is <= t (t in calendar years)."""
        if not self.snapshots:
            raise OutOfWindow("empty dynamic graph")
        periods = self.periods
        if t < periods[0] or (self.end is not None and t >= self.end):
            raise OutOfWindow(f"t = {t} outside [{periods[0]}, {self.end})")
        return self.snapshots[min(int(math.floor(t)), periods[-1])]

    @classmethod
    def from_records(cls, records: list[SimilarityRecord], k: int = 10, threshold: float = 0.2,
                     periods: Iterable[int] | None = None, nodes: dict | None = None,
                     end: float | None = None) -> "DynamicGraph":
        by_period = defaultdict(list)
        for r in records:
            by_period[r.period].append(r)
        periods = sorted(by_period) if periods is None else sorted(periods)
        nodes = nodes or {}
        snaps = {p: build_snapshot(by_period.get(p, []), p, k, threshold, nodes.get(p))
                 for p in periods}
        return cls(snaps, end)


def snapshot_at(g: DynamicGraph, t: float) -> GraphSnapshot:
    return g.snapshot_at(t)


def export_adjacency(snap: GraphSnapshot, path) -> None:
    """Dense 0/1 CSV with a header of firm ids in lexicographic order."""
    order, mat = snap.adjacency()
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(order)
            for row in mat.astype(int):
                w.writerow(row.tolist())
    except OSError as exc:
        raise IoFailure(f"cannot write adjacency to {path}: {exc}") from exc


def read_adjacency(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        return [], np.zeros((0, 0))
    header = rows[0]
    mat = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(len(rows) - 1, len(header))
    return header, mat


def read_similarity_csv(path) -> list[SimilarityRecord]:
    if not os.path.exists(path):
        raise IoFailure(f"missing similarity file {path}")
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(SimilarityRecord(row["firm_a"], row["firm_b"], int(row["year"]), float(row["score"])))
    return out


def write_similarity_csv(records: list[SimilarityRecord], path) -> None:
    rows = sorted(records, key=lambda r: (r.period, r.firm_a, r.firm_b))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["firm_a", "firm_b", "year", "score"])
        for r in rows:
            w.writerow([r.firm_a, r.firm_b, r.period, repr(float(r.score))])
