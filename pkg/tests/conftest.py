import numpy as np
import pytest

from bayesgcn import graph as G

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    ds = G.synthetic_dataset(n_per_class=40, n_classes=3, feature_dim=60, p_in=0.12,
                             p_out=0.01, seed=7)
    labels = G.make_split(ds.labels, 5, "fixed")
    return ds, G.row_normalize(ds.features), labels


def random_graph(n, p, rng):
    a, b = np.triu_indices(n, k=1)
    keep = rng.random(len(a)) < p
    return G.Graph.from_edges(n, np.column_stack([a[keep], b[keep]]))
