import numpy as np
import pytest

from grapherase import EmbeddingTable, GraphParams, SemanticGraph, build_graph


def pair_table(s, dim=2):
    """Two unit vectors with cosine ``s``."""
    x = np.zeros((2, dim))
    x[0, 0] = 1.0
    x[1, 0] = s
    x[1, 1] = np.sqrt(1 - s * s)
    return EmbeddingTable.from_arrays(["a", "b"], x)


def random_table(rng, m, d, prefix="w"):
    return EmbeddingTable.from_arrays([f"{prefix}{i}" for i in range(m)], rng.standard_normal((m, d)))


def random_graph(rng, m=None, d=None, tau0=None, lam=None):
    """A graph with a fair number of edges: low dimension keeps cosines spread."""
    m = m or int(rng.integers(20, 200))
    d = d or int(rng.integers(3, 10))
    params = GraphParams(tau0 if tau0 is not None else float(rng.uniform(0.2, 0.5)), 0.1,
                         lam if lam is not None else 0.5)
    return build_graph(random_table(rng, m, d), params)


def graph_from_edges(n, edges, sim=0.8, params=None):
    rows = [a for a, _ in edges]
    cols = [b for _, b in edges]
    return SemanticGraph.from_edges(n, rows, cols, np.full(len(edges), sim), params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
