"""Density-adaptive semantic graph over a vocabulary embedding table.

Edges connect concepts whose cosine similarity clears a base threshold and
carry weight ``exp((s - tau0) / sigma)``. A second pass raises the bar in
dense regions: an edge survives only if ``s > tau0 + lambda * sd`` for the
larger of the two endpoints' neighbourhood similarity spreads.

Storage is CSR with float32 weights and cached float32 similarities. Edge
membership is decided on the float32 similarity against ``float32(tau0)`` so
that the stored value, not an intermediate float64, is what clears the bar.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .embedstore import EmbeddingTable
from .errors import FormatError, IntegrityError, ValidationError

GRAPH_MAGIC = b"GROCEGRF"
GRAPH_VERSION = 1

DEFAULT_BLOCK = 256


@dataclass(frozen=True)
class GraphParams:
    tau0: float = 0.3
    sigma: float = 0.1
    lam: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.tau0 < 1.0):
            raise ValidationError(f"tau0 must lie in (0, 1), got {self.tau0}")
        if not (self.sigma > 0.0) or not np.isfinite(self.sigma):
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        if not (self.lam >= 0.0) or not np.isfinite(self.lam):
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")


def edge_weight(sims, params: GraphParams) -> np.ndarray:
    s = np.asarray(sims, dtype=np.float32).astype(np.float64)
    return np.exp((s - params.tau0) / params.sigma).astype(np.float32)


def _neighbourhood_stats(n, rows, cols, sims):
    """Mean and population std of similarity over each node's neighbours."""
    s = sims.astype(np.float64)
    counts = np.bincount(rows, minlength=n) + np.bincount(cols, minlength=n)
    sums = np.bincount(rows, weights=s, minlength=n) + np.bincount(cols, weights=s, minlength=n)
    mu = np.zeros(n)
    has = counts > 0
    mu[has] = sums[has] / counts[has]
    sq = np.bincount(rows, weights=(s - mu[rows]) ** 2, minlength=n)
    sq += np.bincount(cols, weights=(s - mu[cols]) ** 2, minlength=n)
    sd = np.zeros(n)
    sd[has] = np.sqrt(sq[has] / counts[has])
    return mu, sd


def _assemble_csr(n, rows, cols, sims, params):
    """Mirror upper-triangle edges into sorted CSR arrays."""
    r = np.concatenate([rows, cols]).astype(np.int64)
    c = np.concatenate([cols, rows]).astype(np.int64)
    s = np.concatenate([sims, sims]).astype(np.float32)
    order = np.lexsort((c, r))
    r, c, s = r[order], c[order], s[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
    return indptr, c.astype(np.int32), edge_weight(s, params), s


class SemanticGraph:
    """Weighted undirected concept graph in CSR form.

    ``mu`` and ``sigma_hat`` are the first-pass neighbourhood statistics that
    set each node's adaptive threshold ``tau0 + lam * sigma_hat``. The graph
    is mutable only through :func:`insert_node` (single writer).
    """

    def __init__(self, params, indptr, indices, weights, sims, mu, sigma_hat,
                 table: Optional[EmbeddingTable] = None, source_hash: Optional[bytes] = None):
        self.params = params
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int32)
        self.weights = np.asarray(weights, dtype=np.float32)
        self.sims = np.asarray(sims, dtype=np.float32)
        self.mu = np.asarray(mu, dtype=np.float64)
        self.sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
        self.table = table
        if source_hash is None and table is not None:
            source_hash = table.content_hash()
        self.source_hash = source_hash if source_hash is not None else bytes(32)
        self._cache = {}

    @classmethod
    def from_edges(cls, node_count, rows, cols, sims, params=None, table=None):
        """Build directly from an undirected edge list, bypassing thresholds.

        Each unordered pair must appear once. Neighbourhood statistics are
        computed over the given edges.
        """
        params = params or GraphParams()
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        sims = np.asarray(sims, dtype=np.float32)
        if np.any(rows == cols):
            raise ValidationError("self-loops are not allowed")
        lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
        mu, sd = _neighbourhood_stats(node_count, lo, hi, sims)
        indptr, indices, weights, s = _assemble_csr(node_count, lo, hi, sims, params)
        return cls(params, indptr, indices, weights, s, mu, sd, table=table)

    @property
    def node_count(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def edge_count(self) -> int:
        return self.indices.shape[0] // 2

    @property
    def thresholds(self) -> np.ndarray:
        return self.params.tau0 + self.params.lam * self.sigma_hat

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def upper_edges(self):
        """(rows, cols, sims) with rows < cols, each undirected edge once."""
        rows = np.repeat(np.arange(self.node_count, dtype=np.int64), self.degrees())
        keep = rows < self.indices
        return rows[keep], self.indices[keep].astype(np.int64), self.sims[keep]

    def _csr(self, data):
        n = self.node_count
        # explicit zeros must stay edges (zero-length paths between identical vectors)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n), copy=False)

    def weight_matrix(self) -> sp.csr_matrix:
        if "W" not in self._cache:
            self._cache["W"] = self._csr(self.weights.astype(np.float64))
        return self._cache["W"]

    def length_matrix(self) -> sp.csr_matrix:
        """Edge lengths 1 - s for shortest paths."""
        if "len" not in self._cache:
            self._cache["len"] = self._csr(np.maximum(1.0 - self.sims.astype(np.float64), 0.0))
        return self._cache["len"]

    def require_table(self) -> EmbeddingTable:
        if self.table is None:
            raise ValidationError("graph has no embedding table attached")
        return self.table

    def attach(self, table: EmbeddingTable) -> None:
        if table.count != self.node_count:
            raise IntegrityError(f"table has {table.count} rows, graph has {self.node_count} nodes")
        if table.content_hash() != self.source_hash:
            raise IntegrityError("embedding table content hash does not match the graph file")
        self.table = table

    def __repr__(self):
        return f"SemanticGraph(nodes={self.node_count}, edges={self.edge_count}, params={self.params})"


def _candidate_block(x64, tau32, start, stop, buf=None):
    # only columns >= start: the strict upper triangle of this row block
    rows, cols = stop - start, x64.shape[0] - start
    out = None if buf is None else buf[: rows * cols].reshape(rows, cols)
    s64 = np.matmul(x64[start:stop], x64[start:].T, out=out)
    # s32 > tau32 implies s64 > tau32, so the float64 test is a cheap superset
    r, c = np.nonzero(s64 > np.float64(tau32))
    keep = c > r
    r, c = r[keep], c[keep]
    s32 = s64[r, c].astype(np.float32)
    keep = s32 > tau32
    return r[keep] + start, c[keep] + start, s32[keep]


def build_graph(table: EmbeddingTable, params: Optional[GraphParams] = None,
                block_size: int = DEFAULT_BLOCK, threads: int = 1) -> SemanticGraph:
    params = params or GraphParams()
    n = table.count
    x64 = table.vectors.astype(np.float64)
    tau32 = np.float32(params.tau0)
    starts = list(range(0, n, block_size))
    if threads and threads > 1 and len(starts) > 1:
        job = lambda a: _candidate_block(x64, tau32, a, min(a + block_size, n))  # noqa: E731
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, starts))
    else:
        buf = np.empty(min(block_size, n) * n)
        parts = [_candidate_block(x64, tau32, a, min(a + block_size, n), buf) for a in starts]
    rows = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, np.int64)
    cols = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, np.int64)
    sims = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0, np.float32)

    mu, sd = _neighbourhood_stats(n, rows, cols, sims)
    if params.lam > 0 and rows.size:
        bar = params.tau0 + params.lam * np.maximum(sd[rows], sd[cols])
        keep = sims.astype(np.float64) > bar
        rows, cols, sims = rows[keep], cols[keep], sims[keep]
    indptr, indices, weights, s = _assemble_csr(n, rows, cols, sims, params)
    return SemanticGraph(params, indptr, indices, weights, s, mu, sd, table=table)


def _row_stats(sims):
    if sims.size == 0:
        return 0.0, 0.0
    s = sims.astype(np.float64)
    mu = s.mean()
    return float(mu), float(np.sqrt(np.mean((s - mu) ** 2)))


def insert_node(graph: SemanticGraph, label: str, vector) -> int:
    """Append a concept and connect it to the existing graph.

    The new node joins the first-pass neighbourhood of every node it clears
    ``tau0`` with, so those nodes' statistics are recomputed before its edges
    are filtered; the new node's edges then match a full rebuild. Edges
    between pre-existing nodes are left as they were.
    """
    table = graph.require_table()
    vector = np.asarray(vector, dtype=np.float64).ravel()
    if vector.shape[0] != table.dim:
        raise ValidationError(f"vector has dimension {vector.shape[0]}, table has {table.dim}")
    if label in table:
        raise ValidationError(f"duplicate label {label!r}")
    grown = table.appended(label, vector)
    new = table.count
    params = graph.params
    tau32 = np.float32(params.tau0)

    x64 = table.vectors.astype(np.float64)
    s32 = (x64 @ grown.vectors[new].astype(np.float64)).astype(np.float32)
    nbrs = np.flatnonzero(s32 > tau32)
    mu_new, sd_new = _row_stats(s32[nbrs])
    mu = np.append(graph.mu, mu_new)
    sigma_hat = np.append(graph.sigma_hat, sd_new)
    if nbrs.size:
        rows = (x64[nbrs] @ x64.T).astype(np.float32)
        for r, j in enumerate(nbrs):
            row = rows[r]
            keep = row > tau32
            keep[j] = False
            mu[j], sigma_hat[j] = _row_stats(np.append(row[keep], s32[j]))
    if params.lam > 0 and nbrs.size:
        bar = params.tau0 + params.lam * np.maximum(sd_new, sigma_hat[nbrs])
        nbrs = nbrs[s32[nbrs].astype(np.float64) > bar]
    new_sims = s32[nbrs]

    # nbrs is ascending and the new id is the largest, so appending keeps rows sorted
    at = graph.indptr[nbrs + 1]
    indices = np.insert(graph.indices, at, np.int32(new))
    sims = np.insert(graph.sims, at, new_sims)
    bump = np.zeros(new + 1, dtype=np.int64)
    bump[nbrs + 1] = 1
    indptr = graph.indptr + np.cumsum(bump)

    graph.indptr = np.append(indptr, indptr[-1] + nbrs.size)
    graph.indices = np.concatenate([indices, nbrs.astype(np.int32)])
    graph.sims = np.concatenate([sims, new_sims]).astype(np.float32)
    graph.weights = edge_weight(graph.sims, params)
    graph.mu = mu
    graph.sigma_hat = sigma_hat
    graph.table = grown
    graph.source_hash = grown.content_hash()
    graph._cache.clear()
    return new


def degree_stats(graph: SemanticGraph) -> dict:
    deg = graph.degrees()
    n = graph.node_count
    return {
        "node_count": int(n),
        "edge_count": int(graph.edge_count),
        "mean_degree": float(deg.mean()) if n else 0.0,
        "max_degree": int(deg.max()) if n else 0,
        "isolated_count": int(np.count_nonzero(deg == 0)),
    }


_GRAPH_HEADER = struct.Struct("<8sIddd32sI")


def save_graph(graph: SemanticGraph, path) -> None:
    """Layout: magic, u32 version, 3 f64 params, 32-byte table hash, u32 n,
    n f64 means, n f64 spreads, (n+1) u64 offsets, u32 columns, f32 weights,
    f32 similarities. All little-endian."""
    p = graph.params
    with open(Path(path), "wb") as fh:
        fh.write(_GRAPH_HEADER.pack(GRAPH_MAGIC, GRAPH_VERSION, p.tau0, p.sigma, p.lam,
                                    graph.source_hash, graph.node_count))
        fh.write(graph.mu.astype("<f8").tobytes())
        fh.write(graph.sigma_hat.astype("<f8").tobytes())
        fh.write(graph.indptr.astype("<u8").tobytes())
        fh.write(graph.indices.astype("<u4").tobytes())
        fh.write(graph.weights.astype("<f4").tobytes())
        fh.write(graph.sims.astype("<f4").tobytes())


def load_graph(path, table: Optional[EmbeddingTable] = None) -> SemanticGraph:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    buf = path.read_bytes()
    if len(buf) < _GRAPH_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, tau0, sigma, lam, digest, n = _GRAPH_HEADER.unpack_from(buf, 0)
    if magic != GRAPH_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != GRAPH_VERSION:
        raise FormatError(f"{path}: unsupported graph version {version}")
    offset = _GRAPH_HEADER.size

    def take(dtype, count):
        nonlocal offset
        size = np.dtype(dtype).itemsize * count
        if offset + size > len(buf):
            raise FormatError(f"{path}: truncated payload")
        out = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).copy()
        offset += size
        return out

    mu = take("<f8", n)
    sd = take("<f8", n)
    indptr = take("<u8", n + 1).astype(np.int64)
    nnz = int(indptr[-1])
    indices = take("<u4", nnz).astype(np.int32)
    weights = take("<f4", nnz)
    sims = take("<f4", nnz)
    if offset != len(buf):
        raise FormatError(f"{path}: {len(buf) - offset} trailing bytes")
    graph = SemanticGraph(GraphParams(tau0, sigma, lam), indptr, indices, weights, sims, mu, sd,
                          source_hash=digest)
    if table is not None:
        graph.attach(table)
    return graph
