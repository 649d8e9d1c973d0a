import numpy as np
import pytest

from tdin.data import ACCOUNTING_COLUMNS, Dataset, DealRecord, FeatureTable, build_graph
from tdin.graph import SimilarityRecord
from tdin.model import ModelConfig, ModelParams
from tdin.synth import WorldConfig, synth_generate


def make_dataset(firms, deals, scores, n_years=6, start_year=2000, text_dim=2, acquirers=None,
                 seed=0, k=10, threshold=0.2, constant_features=False):
    """Small hand-built Dataset.

    ``scores`` maps (a, b) -> similarity, repeated for every year.
    ``deals`` is a list of (acquirer, target, t).
    """
    rng = np.random.default_rng(seed)
    years = list(range(start_year, start_year + n_years))
    shape = (n_years, len(firms))
    if constant_features:
        acc = np.ones(shape + (len(ACCOUNTING_COLUMNS),))
        text = np.ones(shape + (text_dim,))
    else:
        acc = rng.standard_normal(shape + (len(ACCOUNTING_COLUMNS),))
        text = rng.standard_normal(shape + (text_dim,))
    table = FeatureTable(list(firms), years, acc, text, np.ones(shape, dtype=bool))
    sims = [SimilarityRecord(a, b, y, s) for y in years for (a, b), s in scores.items()]
    graph = build_graph(sims, table, k, threshold)
    records = [DealRecord(a, v, t) for a, v, t in sorted(deals, key=lambda d: d[2])]
    acq = sorted({a for a, _, _ in deals}) if acquirers is None else list(acquirers)
    return Dataset(records, table, graph, sims, acq, start_year, n_years, k, threshold)


@pytest.fixture
def three_firm_ds():
    deals = [("A", "C", 0.7), ("B", "C", 1.3), ("A", "B", 2.4), ("C", "A", 3.1), ("A", "C", 4.6)]
    scores = {("A", "B"): 0.8, ("A", "C"): 0.3, ("B", "C"): 0.5}
    return make_dataset(["A", "B", "C"], deals, scores, n_years=6, acquirers=["A", "B"], k=1,
                        threshold=0.4)


@pytest.fixture
def random_params():
    def build(ds, seed=0, **cfg):
        cfg = ModelConfig(**{"d1": 4, "d2": 3, "mp_dim": 3, "n_quad": 16, **cfg})
        p = ModelParams.init(cfg, ds.features.text_dim, seed)
        rng = np.random.default_rng(seed + 100)
        for name in p.store.names():
            p.store[name] = p.store[name] + 0.3 * rng.standard_normal(p.store[name].shape)
        return p
    return build


@pytest.fixture(scope="session")
def small_world():
    return synth_generate(WorldConfig(n_firms=8, n_years=10, n_clusters=2), seed=3)


@pytest.fixture(scope="session")
def demo_world():
    return synth_generate(WorldConfig(), seed=0)



LONG_SPLIT = 2043


@pytest.fixture(scope="session")
def long_world():
    """60-year demo-style world; enough deals for the choice module to generalise."""
    return synth_generate(WorldConfig(n_years=60), seed=0)


@pytest.fixture(scope="session")
def trained_long(long_world):
    """Default-config model trained on long_world up to the end of LONG_SPLIT."""
    from tdin.model import train
    return train(long_world, ModelConfig(), seed=0,
                 t_end=float(LONG_SPLIT - long_world.start_year + 1))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
