import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdin.errors import IoFailure, OutOfWindow, UnknownFirm, ValidationError
from tdin.graph import (DynamicGraph, SimilarityRecord, build_snapshot, export_adjacency,
                        neighbors, read_adjacency, read_similarity_csv, snapshot_at,
                        write_similarity_csv)


def records(scores, period=2000):
    return [SimilarityRecord(a, b, period, s) for (a, b), s in scores.items()]


@pytest.fixture
def abc():
    scores = {("A", "B"): 0.5, ("A", "C"): 0.95, ("B", "C"): 0.1}
    return build_snapshot(records(scores), 2000, k=1, threshold=0.4)


def brute_force_edges(scores, k, threshold):
    """Edge set by direct rule evaluation over all firm pairs."""
    firms = sorted({f for pair in scores for f in pair})
    s = {}
    for (a, b), v in scores.items():
        s[(a, b)] = s[(b, a)] = v
    edges = set()
    for a, b in itertools.combinations(firms, 2):
        if (a, b) not in s:
            continue
        justified = s[(a, b)] >= threshold
        for x, y in ((a, b), (b, a)):
            mine = sorted((v for (p, q), v in s.items() if p == x), reverse=True)
            kth = mine[min(k, len(mine)) - 1]
            justified |= s[(x, y)] >= kth
        if justified:
            edges.add((a, b))
    return edges


score_maps = st.dictionaries(
    st.tuples(st.integers(0, 7), st.integers(0, 7)).filter(lambda p: p[0] < p[1])
    .map(lambda p: (f"F{p[0]}", f"F{p[1]}")),
    st.sampled_from([0.1, 0.2, 0.35, 0.5, 0.5, 0.7, 0.9]),
    min_size=1, max_size=28)


class TestSimilarityRecord:
    def test_self_pair(self):
        with pytest.raises(ValidationError):
            SimilarityRecord("A", "A", 2000, 0.5)

    @pytest.mark.parametrize("score", [-0.1, 1.1])
    def test_score_range(self, score):
        with pytest.raises(ValidationError):
            SimilarityRecord("A", "B", 2000, score)


class TestBuildSnapshot:
    def test_worked_example(self, abc):
        assert set(abc.edges) == {("A", "B"), ("A", "C")}

    def test_complete_when_k_large(self):
        scores = {("A", "B"): 0.1, ("A", "C"): 0.05, ("B", "C"): 0.02, ("C", "D"): 0.01,
                  ("A", "D"): 0.03, ("B", "D"): 0.04}
        snap = build_snapshot(records(scores), 2000, k=3, threshold=1.0)
        assert len(snap.edges) == 6

    def test_pure_top1(self):
        scores = {("A", "B"): 0.9, ("B", "C"): 0.3, ("C", "D"): 0.8}
        snap = build_snapshot(records(scores), 2000, k=1, threshold=1.0)
        assert set(snap.edges) == {("A", "B"), ("C", "D")}

    def test_ties_at_rank_k_kept(self):
        scores = {("A", "B"): 0.3, ("A", "C"): 0.3, ("A", "D"): 0.1, ("B", "D"): 0.9, ("C", "D"): 0.9}
        snap = build_snapshot(records(scores), 2000, k=1, threshold=1.0)
        assert {"B", "C"} <= neighbors(snap, "A")

    def test_empty(self):
        snap = build_snapshot([], 2000)
        assert not snap.nodes and not snap.edges

    def test_other_periods_ignored(self):
        snap = build_snapshot(records({("A", "B"): 0.9}, period=1999), 2000)
        assert not snap.edges

    @pytest.mark.parametrize("k,threshold", [(0, 0.2), (1, -0.1), (1, 1.5)])
    def test_bad_arguments(self, k, threshold):
        with pytest.raises(ValidationError):
            build_snapshot([], 2000, k=k, threshold=threshold)

    @settings(max_examples=80, deadline=None)
    @given(scores=score_maps, k=st.integers(1, 4), threshold=st.sampled_from([0.3, 0.5, 0.8, 1.0]))
    def test_matches_brute_force(self, scores, k, threshold):
        snap = build_snapshot(records(scores), 2000, k=k, threshold=threshold)
        assert set(snap.edges) == brute_force_edges(scores, k, threshold)

    @settings(max_examples=50, deadline=None)
    @given(scores=score_maps, k=st.integers(1, 4), threshold=st.sampled_from([0.3, 0.5, 1.0]))
    def test_rank_and_threshold_invariants(self, scores, k, threshold):
        snap = build_snapshot(records(scores), 2000, k=k, threshold=threshold)
        for (a, b), s in scores.items():
            if s >= threshold:
                assert (a, b) in snap.edges
        for v in snap.nodes:
            partners = sorted(((s, b if a == v else a) for (a, b), s in scores.items() if v in (a, b)),
                              reverse=True)
            for _, other in partners[:k]:
                assert other in snap.neighbors(v)


class TestNeighbors:
    def test_example(self, abc):
        assert neighbors(abc, "A") == {"B", "C"}

    def test_isolated(self):
        snap = build_snapshot([], 2000, nodes=["Z"])
        assert neighbors(snap, "Z") == frozenset()

    def test_unknown(self, abc):
        with pytest.raises(UnknownFirm):
            neighbors(abc, "Q")

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        firms = [f"F{i}" for i in range(15)]
        scores = {(a, b): float(rng.uniform()) for a, b in itertools.combinations(firms, 2)}
        snap = build_snapshot(records(scores), 2000, k=2, threshold=0.9)
        for _ in range(100):
            u, v = rng.choice(firms, 2, replace=False)
            assert (u in snap.neighbors(v)) == (v in snap.neighbors(u))

    def test_similarity_of_non_edge(self, abc):
        assert abc.similarity("B", "C") == pytest.approx(0.1)
        assert abc.edge_score("B", "C") == 0.0
        assert abc.edge_score("C", "A") == pytest.approx(0.95)


class TestDynamicGraph:
    @pytest.fixture
    def g(self):
        recs = records({("A", "B"): 0.5}, 1996) + records({("A", "B"): 0.1, ("B", "C"): 0.6}, 1997)
        return DynamicGraph.from_records(recs, k=1, threshold=0.4, end=1998.0)

    def test_mid_year(self, g):
        assert snapshot_at(g, 1997.5).period == 1997

    def test_left_endpoint(self, g):
        assert snapshot_at(g, 1997.0).period == 1997

    @pytest.mark.parametrize("t", [1995.9, 1998.0])
    def test_out_of_window(self, g, t):
        with pytest.raises(OutOfWindow):
            snapshot_at(g, t)

    def test_gap_rejected(self):
        a = build_snapshot([], 1996)
        c = build_snapshot([], 1998)
        with pytest.raises(ValidationError):
            DynamicGraph({1996: a, 1998: c})


class TestExport:
    def test_example_matrix(self, abc, tmp_path):
        path = tmp_path / "adj.csv"
        export_adjacency(abc, path)
        header, mat = read_adjacency(path)
        assert header == ["A", "B", "C"]
        np.testing.assert_array_equal(mat, [[0, 1, 1], [1, 0, 0], [1, 0, 0]])
        assert path.read_text().splitlines()[1] == "0,1,1"

    def test_empty_graph(self, tmp_path):
        path = tmp_path / "adj.csv"
        export_adjacency(build_snapshot([], 2000), path)
        assert path.read_text().strip() == ""
        assert read_adjacency(path)[0] == []

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        firms = [f"F{i:02d}" for i in range(12)]
        scores = {(a, b): float(rng.uniform()) for a, b in itertools.combinations(firms, 2)}
        snap = build_snapshot(records(scores), 2000, k=2, threshold=0.85)
        path = tmp_path / "adj.csv"
        export_adjacency(snap, path)
        header, mat = read_adjacency(path)
        assert np.array_equal(mat, mat.T) and not np.any(np.diag(mat))
        parsed = {(header[i], header[j]) for i, j in zip(*np.nonzero(np.triu(mat)))}
        assert parsed == set(snap.edges)

    def test_unwritable(self, abc, tmp_path):
        with pytest.raises(IoFailure):
            export_adjacency(abc, tmp_path / "missing" / "adj.csv")

    def test_similarity_csv_round_trip(self, tmp_path):
        recs = records({("A", "B"): 0.123456, ("B", "C"): 0.5}, 2001)
        path = tmp_path / "sim.csv"
        write_similarity_csv(recs, path)
        assert sorted(read_similarity_csv(path), key=lambda r: r.firm_a) == recs

    def test_missing_similarity_file(self, tmp_path):
        with pytest.raises(IoFailure):
            read_similarity_csv(tmp_path / "nope.csv")
