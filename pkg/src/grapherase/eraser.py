"""Graph-guided soft projection of prompt tokens away from concept clusters.

A token reaches the graph through virtual edges to every vocabulary node it
resembles (cosine above ``attach_threshold``), of length ``1 - cos``. Graph
edges have length ``1 - s``. Distances from a token to cluster members feed a
softmax, and the token loses ``alpha_v * <p, e_v>`` along each member
direction ``e_v``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import dijkstra

from .clusterid import ConceptCluster
from .embedstore import EmbeddingTable, PromptEmbedding
from .errors import ValidationError
from .semgraph import SemanticGraph


@dataclass(frozen=True)
class ErasureParams:
    sigma_p: float = 1.0
    attach_threshold: Optional[float] = None  # None: use the graph's tau0
    passes: int = 1

    def __post_init__(self):
        if not (self.sigma_p > 0) or not np.isfinite(self.sigma_p):
            raise ValidationError(f"sigma_p must be > 0, got {self.sigma_p}")
        if self.passes < 1:
            raise ValidationError(f"passes must be >= 1, got {self.passes}")
        if self.attach_threshold is not None and not (0.0 <= self.attach_threshold < 1.0):
            raise ValidationError(f"attach_threshold must lie in [0, 1), got {self.attach_threshold}")

    def resolved_threshold(self, graph: SemanticGraph) -> float:
        return graph.params.tau0 if self.attach_threshold is None else self.attach_threshold


@dataclass
class ErasureResult:
    edited: PromptEmbedding
    per_token_alpha: list  # one (L, |cluster|) array per concept, plan order
    clusters: list
    max_residual: np.ndarray
    skipped: np.ndarray

    def report(self) -> list:
        return [
            {"token_index": i, "max_residual": float(r), "skipped": bool(s)}
            for i, (r, s) in enumerate(zip(self.max_residual, self.skipped))
        ]

    def report_json(self) -> str:
        return json.dumps(self.report(), sort_keys=True, indent=2)


def attach_token(table: EmbeddingTable, token, attach_threshold: float):
    """Vocabulary nodes a token attaches to, and the virtual edge lengths."""
    p = np.asarray(token, dtype=np.float64).ravel()
    if p.shape[0] != table.dim:
        raise ValidationError(f"token has dimension {p.shape[0]}, table has {table.dim}")
    norm = np.sqrt(p @ p)
    if not norm > 0:
        raise ValidationError("token has zero norm; cannot attach it to the graph")
    cos = table.vectors.astype(np.float64) @ (p / norm)
    nodes = np.flatnonzero(cos > attach_threshold)
    return nodes, np.maximum(1.0 - cos[nodes], 0.0)


def member_distances(graph: SemanticGraph, members: Sequence[int]) -> np.ndarray:
    """Shortest-path lengths from each member to every node, shape (|members|, n)."""
    if len(members) == 0:
        return np.zeros((0, graph.node_count))
    # the length matrix is symmetric, so directed search avoids a symmetrizing copy
    return np.atleast_2d(dijkstra(graph.length_matrix(), directed=True, indices=list(members)))


def _token_to_members(dist_rows, nodes, lengths):
    if nodes.size == 0:
        return np.full(dist_rows.shape[0], np.inf)
    return (dist_rows[:, nodes] + lengths[None, :]).min(axis=1)


def token_distance(graph: SemanticGraph, token, target: int, attach_threshold: Optional[float] = None) -> float:
    """Shortest path from a virtually attached token to node ``target``.

    The graph is undirected, so one search from ``target`` followed by a min
    over the token's virtual edges equals a search from the token.
    """
    table = graph.require_table()
    thr = graph.params.tau0 if attach_threshold is None else attach_threshold
    nodes, lengths = attach_token(table, token, thr)
    return float(_token_to_members(member_distances(graph, [target]), nodes, lengths)[0])


def attention_weights(distances, sigma_p: float) -> np.ndarray:
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValidationError("cluster must be non-empty")
    alpha = np.zeros_like(d)
    finite = np.isfinite(d)
    if not finite.any():
        return alpha
    z = np.exp(-(d[finite] - d[finite].min()) / sigma_p)
    alpha[finite] = z / z.sum()
    return alpha


def project_token(token, member_vectors, alpha) -> np.ndarray:
    p = np.asarray(token, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if not alpha.any():
        return p.copy()
    e = np.asarray(member_vectors, dtype=np.float64)
    return p - (alpha * (e @ p)) @ e


def erase(prompt: PromptEmbedding, plan: Sequence[ConceptCluster], graph: SemanticGraph,
          params: Optional[ErasureParams] = None) -> ErasureResult:
    """Apply each cluster's projection to every token, in plan order.

    With ``passes > 1`` a concept's projection is reapplied with the weights
    from its first pass. A token emptied by an earlier concept is skipped by
    later ones.
    """
    params = params or ErasureParams()
    table = graph.require_table()
    if not plan:
        raise ValidationError("erasure plan is empty")
    if prompt.dim != table.dim:
        raise ValidationError(f"prompt dimension {prompt.dim} does not match table dimension {table.dim}")
    raw = prompt.tokens
    norms = np.sqrt(np.einsum("ij,ij->i", raw.astype(np.float64), raw.astype(np.float64)))
    zero = np.flatnonzero(~(norms > 0))
    if zero.size:
        raise ValidationError(f"token at position {int(zero[0])} has zero norm")

    thr = params.resolved_threshold(graph)
    vocab = table.vectors.astype(np.float64)
    tokens = raw.astype(np.float64)
    touched = np.zeros(prompt.length, dtype=bool)
    skipped_all = np.ones(prompt.length, dtype=bool)
    alphas = []

    for cluster in plan:
        members = np.asarray(cluster.members, dtype=np.int64)
        e = vocab[members]
        dist = member_distances(graph, members)
        rows = np.zeros((prompt.length, members.size))
        norms = np.sqrt(np.einsum("ij,ij->i", tokens, tokens))
        live = np.flatnonzero(norms > 0)
        cos_all = (tokens[live] / norms[live, None]) @ vocab.T
        for i, cos in zip(live, cos_all):
            nodes = np.flatnonzero(cos > thr)
            d = _token_to_members(dist, nodes, np.maximum(1.0 - cos[nodes], 0.0))
            alpha = attention_weights(d, params.sigma_p)
            if not alpha.any():
                continue
            rows[i] = alpha
            p = tokens[i]
            for _ in range(params.passes):
                p = project_token(p, e, alpha)
            tokens[i] = p
            touched[i] = True
            skipped_all[i] = False
        alphas.append(rows)

    edited = raw.copy()
    edited[touched] = tokens[touched].astype(np.float32)
    union = sorted({m for c in plan for m in c.members})
    residual = np.abs(edited.astype(np.float64) @ vocab[union].T).max(axis=1) if union else np.zeros(prompt.length)
    return ErasureResult(
        edited=PromptEmbedding(edited, prompt.source_labels),
        per_token_alpha=alphas,
        clusters=list(plan),
        max_residual=residual,
        skipped=skipped_all,
    )
