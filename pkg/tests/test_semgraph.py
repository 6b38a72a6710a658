import math

import numpy as np
import pytest

from grapherase import EmbeddingTable, GraphParams, build_graph, degree_stats, insert_node, load_graph, save_graph
from grapherase.errors import FormatError, IntegrityError, ValidationError
from grapherase.semgraph import SemanticGraph
from grapherase.synthlab import PlantedSpec, generate_table

from conftest import graph_from_edges, pair_table, random_graph, random_table


def dense_edges(g):
    n = g.node_count
    w = np.zeros((n, n))
    rows = np.repeat(np.arange(n), g.degrees())
    w[rows, g.indices] = g.weights
    return w


def test_single_edge_weight():
    g = build_graph(pair_table(0.5), GraphParams(0.3, 0.1, 0.0))
    assert g.edge_count == 1
    # exp((0.5 - 0.3) / 0.1) = e^2, to float32 precision
    assert g.weights[0] == pytest.approx(math.exp(2.0), rel=1e-6)
    assert g.weights[0] == pytest.approx(7.389056, abs=1e-5)


def test_threshold_is_strict():
    g = build_graph(pair_table(0.3), GraphParams(0.3, 0.1, 0.0))
    assert g.edge_count == 0


def test_orthogonal_vectors_are_isolated():
    g = build_graph(EmbeddingTable.from_arrays(list("abc"), np.eye(3)), GraphParams(0.3))
    assert degree_stats(g)["isolated_count"] == 3
    assert g.edge_count == 0


def test_single_node_graph():
    g = build_graph(EmbeddingTable.from_arrays(["x"], [[1.0, 2.0]]))
    assert g.node_count == 1 and g.edge_count == 0


def test_identical_embeddings_give_complete_graph():
    t = EmbeddingTable.from_arrays([f"w{i}" for i in range(6)], np.tile([1.0, 2.0, 3.0], (6, 1)))
    g = build_graph(t, GraphParams(0.3, 0.1, 0.5))
    assert g.edge_count == 15


@pytest.mark.parametrize("seed", range(20))
def test_structural_invariants(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    w = dense_edges(g)
    assert np.array_equal(w, w.T)
    assert not np.any(np.diag(w))
    assert np.all(g.weights > 1.0)
    # stored weight reproduces the formula from the cached similarity
    expected = np.exp((g.sims.astype(np.float64) - g.params.tau0) / g.params.sigma)
    assert np.max(np.abs(g.weights - expected) / expected) <= 1e-6
    # weights increase with similarity
    order = np.argsort(g.sims, kind="stable")
    s, ws = g.sims[order], g.weights[order]
    strict = np.diff(s) > 0
    assert np.all(np.diff(ws)[strict] >= 0)
    # cached similarity is the float32 cosine
    rows = np.repeat(np.arange(g.node_count), g.degrees())
    cos = np.einsum("ij,ij->i", g.table.vectors[rows].astype(np.float64), g.table.vectors[g.indices].astype(np.float64))
    np.testing.assert_allclose(g.sims, cos, atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_two_pass_rule_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    table = random_table(rng, 60, 5)
    params = GraphParams(0.3, 0.1, 0.7)
    g = build_graph(table, params, block_size=7)

    x = table.vectors.astype(np.float64)
    s = (x @ x.T).astype(np.float32)
    np.fill_diagonal(s, -1)
    cand = s > np.float32(params.tau0)
    sd = np.array([np.std(s[i][cand[i]].astype(np.float64)) if cand[i].any() else 0.0 for i in range(60)])
    bar = params.tau0 + params.lam * np.maximum.outer(sd, sd)
    keep = cand & (s.astype(np.float64) > bar)
    assert np.array_equal(dense_edges(g) > 0, keep)
    np.testing.assert_allclose(g.sigma_hat, sd, atol=1e-12)


def test_blocking_and_threads_do_not_change_result(rng):
    table = random_table(rng, 300, 6)
    a = build_graph(table, block_size=1024)
    b = build_graph(table, block_size=17, threads=4)
    for name in ("indptr", "indices", "weights", "sims", "mu", "sigma_hat"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


def test_threshold_subset_without_adaptation(rng):
    table = random_table(rng, 150, 5)
    sets = []
    for tau in (0.2, 0.3, 0.4, 0.5, 0.6):
        g = build_graph(table, GraphParams(tau, 0.1, 0.0))
        r, c, _ = g.upper_edges()
        sets.append(set(zip(r.tolist(), c.tolist())))
    for lo, hi in zip(sets, sets[1:]):
        assert hi <= lo


def test_mean_degree_non_increasing_in_tau(rng):
    table = random_table(rng, 400, 8)
    degs = [degree_stats(build_graph(table, GraphParams(tau))) ["mean_degree"] for tau in (0.2, 0.3, 0.4, 0.5)]
    assert all(b <= a for a, b in zip(degs, degs[1:]))


def test_adaptive_threshold_higher_in_dense_regions():
    planted = generate_table(PlantedSpec.uniform(3, 12, 300, 64, seed=3, spread=0.3))
    g = build_graph(planted.table)
    members = [planted.table.index_of(l) for labels in planted.membership.values() for l in labels]
    sparse = np.setdiff1d(np.flatnonzero(g.degrees() <= 1), members)
    assert sparse.size > 0
    assert g.thresholds[members].mean() >= g.thresholds[sparse].mean()


def test_degree_stats_trivial_graphs():
    empty = graph_from_edges(5, [])
    assert degree_stats(empty) == {"node_count": 5, "edge_count": 0, "mean_degree": 0.0,
                                   "max_degree": 0, "isolated_count": 5}
    k4 = graph_from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    st = degree_stats(k4)
    assert st["mean_degree"] == 3 and st["edge_count"] == 6


def test_params_validation():
    with pytest.raises(ValidationError):
        GraphParams(tau0=1.5)
    with pytest.raises(ValidationError):
        GraphParams(sigma=0)
    with pytest.raises(ValidationError):
        GraphParams(lam=-1)


def test_insert_copy_gets_max_weight_edge(rng):
    table = random_table(rng, 40, 6)
    g = build_graph(table)
    new = insert_node(g, "copy", table.vectors[17])
    assert new == 40
    assert 17 in g.neighbors(new)
    w = g.weights[g.indptr[new]:g.indptr[new + 1]][list(g.neighbors(new)).index(17)]
    assert w == pytest.approx(math.exp((1 - 0.3) / 0.1), rel=1e-5)


def test_insert_orthogonal_vector_is_isolated():
    g = build_graph(EmbeddingTable.from_arrays(list("abc"), np.eye(4)[:3]))
    new = insert_node(g, "d", np.eye(4)[3])
    assert g.neighbors(new).size == 0
    assert g.node_count == 4


def test_insert_validation(rng):
    g = build_graph(random_table(rng, 10, 4))
    with pytest.raises(ValidationError, match="duplicate"):
        insert_node(g, "w3", np.ones(4))
    with pytest.raises(ValidationError, match="dimension"):
        insert_node(g, "new", np.ones(5))


@pytest.mark.parametrize("seed", range(25))
def test_insert_agrees_with_rebuild(seed):
    rng = np.random.default_rng(1000 + seed)
    m, d = int(rng.integers(20, 150)), int(rng.integers(4, 16))
    x = rng.standard_normal((m + 1, d))
    labels = [f"n{i}" for i in range(m + 1)]
    params = GraphParams(float(rng.uniform(0.2, 0.5)), 0.1, 0.5)
    g = build_graph(EmbeddingTable.from_arrays(labels[:m], x[:m]), params)
    new = insert_node(g, labels[m], x[m])
    full = build_graph(EmbeddingTable.from_arrays(labels, x), params)
    inc = dict(zip(g.neighbors(new).tolist(), g.weights[g.indptr[new]:g.indptr[new + 1]]))
    reb = dict(zip(full.neighbors(m).tolist(), full.weights[full.indptr[m]:full.indptr[m + 1]]))
    assert set(inc) <= set(reb)
    for j in inc:
        assert inc[j] == pytest.approx(reb[j], rel=1e-6)
    # symmetry survives insertion
    w = dense_edges(g)
    assert np.array_equal(w, w.T)


def test_graph_round_trip(tmp_path, rng):
    table = random_table(rng, 1000, 12)
    g = build_graph(table, GraphParams(0.4))
    save_graph(g, tmp_path / "g.bin")
    back = load_graph(tmp_path / "g.bin", table)
    assert back.params == g.params
    for name in ("indptr", "indices", "weights", "sims", "mu", "sigma_hat"):
        assert getattr(back, name).tobytes() == getattr(g, name).astype(getattr(back, name).dtype).tobytes(), name


def test_empty_graph_round_trip(tmp_path):
    table = EmbeddingTable.from_arrays(list("abc"), np.eye(3))
    g = build_graph(table)
    save_graph(g, tmp_path / "g.bin")
    back = load_graph(tmp_path / "g.bin", table)
    assert back.edge_count == 0 and back.node_count == 3


def test_graph_wrong_magic(tmp_path, rng):
    g = build_graph(random_table(rng, 10, 4))
    save_graph(g, tmp_path / "g.bin")
    raw = bytearray((tmp_path / "g.bin").read_bytes())
    raw[:8] = b"XXXXXXXX"
    (tmp_path / "bad.bin").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        load_graph(tmp_path / "bad.bin")


def test_graph_version_mismatch(tmp_path, rng):
    g = build_graph(random_table(rng, 10, 4))
    save_graph(g, tmp_path / "g.bin")
    raw = bytearray((tmp_path / "g.bin").read_bytes())
    raw[8:12] = (2).to_bytes(4, "little")
    (tmp_path / "bad.bin").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        load_graph(tmp_path / "bad.bin")


def test_graph_rejects_foreign_table(tmp_path, rng):
    g = build_graph(random_table(rng, 10, 4))
    save_graph(g, tmp_path / "g.bin")
    with pytest.raises(IntegrityError):
        load_graph(tmp_path / "g.bin", random_table(rng, 10, 4))


def test_from_edges_rejects_self_loops():
    with pytest.raises(ValidationError):
        SemanticGraph.from_edges(3, [0], [0], [0.9])
