"""Anchor resolution and top-K cluster selection inside a hop radius."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ResolutionError, ValidationError
from .heatkernel import DiffusionField, diffuse
from .semgraph import SemanticGraph, insert_node

# scores below this are Taylor round-off, not reached nodes
SUPPORT_FLOOR = 1e-12


@dataclass(frozen=True)
class ClusterParams:
    n: int = 2
    K: int = 8
    t: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"hop radius n must be >= 1, got {self.n}")
        if self.K < 1:
            raise ValidationError(f"K must be >= 1, got {self.K}")
        if not (self.t >= 0) or not np.isfinite(self.t):
            raise ValidationError(f"t must be finite and >= 0, got {self.t}")


@dataclass
class ConceptCluster:
    anchor: int
    members: list
    member_scores: list
    params: ClusterParams
    hops: list = field(default_factory=list)

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class ConceptSpec:
    """A target given by vocabulary label, optionally with its own embedding."""

    label: str
    vector: object = None


ConceptLike = Union[str, ConceptSpec, np.ndarray]


def _as_spec(concept: ConceptLike) -> ConceptSpec:
    if isinstance(concept, str):
        return ConceptSpec(concept)
    if isinstance(concept, ConceptSpec):
        return concept
    return ConceptSpec("", concept)


def _check_resolvable(graph: SemanticGraph, spec: ConceptSpec) -> None:
    table = graph.require_table()
    if spec.label and spec.label in table:
        return
    if spec.vector is None:
        if not spec.label:
            raise ValidationError("concept label must be non-empty")
        raise ResolutionError(
            f"concept {spec.label!r} is not in the vocabulary; supply its embedding vector to insert it"
        )
    dim = np.asarray(spec.vector).size
    if dim != table.dim:
        raise ValidationError(f"concept vector has dimension {dim}, table has {table.dim}")


def resolve_anchor(graph: SemanticGraph, concept: ConceptLike) -> int:
    """Return the node id for ``concept``, inserting a new node for unseen vectors."""
    spec = _as_spec(concept)
    _check_resolvable(graph, spec)
    table = graph.table
    if spec.label and spec.label in table:
        return table.index_of(spec.label)
    label, k = spec.label, 0
    while not label or label in table:
        k += 1
        label = f"__concept_{k}"
    return insert_node(graph, label, np.asarray(spec.vector, dtype=np.float64).ravel())


def hop_distances(graph: SemanticGraph, anchor: int, n: int) -> dict:
    """Unweighted BFS from ``anchor`` out to ``n`` hops: {node: hops}."""
    if n < 0:
        raise ValidationError(f"hop count must be >= 0, got {n}")
    seen = np.full(graph.node_count, -1, dtype=np.int64)
    seen[anchor] = 0
    frontier = np.array([anchor], dtype=np.int64)
    indptr, indices = graph.indptr, graph.indices
    for depth in range(1, n + 1):
        if frontier.size == 0:
            break
        nxt = np.concatenate([indices[indptr[i]:indptr[i + 1]] for i in frontier])
        nxt = np.unique(nxt)
        nxt = nxt[seen[nxt] < 0]
        seen[nxt] = depth
        frontier = nxt
    reached = np.flatnonzero(seen >= 0)
    return {int(i): int(seen[i]) for i in reached}


def hop_neighborhood(graph: SemanticGraph, anchor: int, n: int) -> set:
    return set(hop_distances(graph, anchor, n))


def select_top_k(field: DiffusionField, hops: dict, params: ClusterParams) -> ConceptCluster:
    cand = np.fromiter(sorted(hops), dtype=np.int64)
    scores = field.scores[cand]
    live = scores > SUPPORT_FLOOR
    cand, scores = cand[live], scores[live]
    order = np.lexsort((cand, -scores))[: params.K]
    members = cand[order]
    return ConceptCluster(
        anchor=field.anchor,
        members=[int(m) for m in members],
        member_scores=[float(field.scores[m]) for m in members],
        params=params,
        hops=[hops[int(m)] for m in members],
    )


def identify_cluster(graph: SemanticGraph, anchor: int, n: int = 2, K: int = 8, t: float = 1.0,
                     tol: float = 1e-6) -> ConceptCluster:
    params = ClusterParams(n, K, t)
    field = diffuse(graph, anchor, t, tol)
    return select_top_k(field, hop_distances(graph, anchor, n), params)


def erase_plan(graph: SemanticGraph, concepts: Sequence[ConceptLike], n: int = 2, K: int = 8,
               t: float = 1.0) -> list:
    """One cluster per concept, in the given order.

    All concepts are resolved before any cluster is computed, so an unknown
    concept fails the whole plan. Unseen vectors are inserted into ``graph``.
    """
    ClusterParams(n, K, t)
    specs = [_as_spec(c) for c in concepts]
    for spec in specs:
        _check_resolvable(graph, spec)
    anchors = [resolve_anchor(graph, spec) for spec in specs]
    return [identify_cluster(graph, a, n, K, t) for a in anchors]
