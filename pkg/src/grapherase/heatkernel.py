"""Heat diffusion ``h = exp(-t L) e_anchor`` over the normalized Laplacian.

``L = I - S`` with ``S = D^-1/2 W D^-1/2``. Isolated nodes get ``S_ii = 1`` so
``L`` is zero there and heat placed on them stays put.

The fast path never forms ``exp``: it splits ``t`` into steps of at most 1 and
sums the Taylor series of ``exp(dt S) x`` per step, scaled by ``exp(-dt)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ConvergenceError, ValidationError
from .semgraph import SemanticGraph

MAX_TERMS = 10_000
ORACLE_MAX_NODES = 2000
_SAFETY = 10.0


@dataclass
class DiffusionField:
    anchor: int
    t: float
    scores: np.ndarray
    method: str

    def ranked(self):
        order = np.lexsort((np.arange(self.scores.size), -self.scores))
        return [{"node_id": int(i), "score": float(self.scores[i])} for i in order]

    def to_json(self) -> str:
        return json.dumps(self.ranked(), sort_keys=True)


class NormalizedLaplacian:
    """Operator handle for ``L = I - S``; ``matvec`` costs O(|E| + n)."""

    def __init__(self, graph: SemanticGraph):
        w = graph.weight_matrix()
        deg = np.asarray(w.sum(axis=1)).ravel()
        isolated = deg <= 0
        inv_sqrt = np.zeros_like(deg)
        inv_sqrt[~isolated] = 1.0 / np.sqrt(deg[~isolated])
        d = sp.diags(inv_sqrt)
        s = (d @ w @ d).tocsr()
        if isolated.any():
            s = (s + sp.diags(isolated.astype(np.float64))).tocsr()
        self.S = s
        self.degrees = deg
        self.isolated = isolated
        self.shape = s.shape

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x - self.S @ x

    __matmul__ = matvec

    def todense(self) -> np.ndarray:
        return np.eye(self.shape[0]) - self.S.toarray()


def normalized_laplacian(graph: SemanticGraph) -> NormalizedLaplacian:
    cached = graph._cache.get("laplacian")
    if cached is None:
        cached = graph._cache["laplacian"] = NormalizedLaplacian(graph)
    return cached


def _check(graph, anchor, t):
    if not math.isfinite(t) or t < 0:
        raise ValidationError(f"diffusion time must be finite and >= 0, got {t}")
    if not (0 <= anchor < graph.node_count):
        raise ValidationError(f"anchor {anchor} out of range for {graph.node_count} nodes")


def _expm_step(S, x, dt, tol):
    """exp(-dt) * exp(dt S) x with max-norm error below ``tol``.

    S is symmetric with spectrum in [-1, 1], so S is an l2 contraction. Once
    k >= 2 dt the l2 norms of later terms shrink by at least half each, and
    the tail (an upper bound on the max-norm error) is below the last term.
    """
    acc = x.copy()
    term = x
    bound = tol * math.exp(dt) / _SAFETY
    for k in range(1, MAX_TERMS + 1):
        term = (dt / k) * (S @ term)
        acc += term
        if k >= 2 * dt and np.sqrt(term @ term) <= bound:
            return math.exp(-dt) * acc
    raise ConvergenceError(f"Taylor series did not converge within {MAX_TERMS} terms (dt={dt})")


def diffuse(graph: SemanticGraph, anchor: int, t: float = 1.0, tol: float = 1e-6) -> DiffusionField:
    _check(graph, anchor, t)
    if not (tol > 0):
        raise ValidationError(f"tol must be > 0, got {tol}")
    h = np.zeros(graph.node_count)
    h[anchor] = 1.0
    if t == 0:
        return DiffusionField(anchor, 0.0, h, "iterative")
    op = normalized_laplacian(graph)
    if op.isolated[anchor]:
        # L vanishes on an isolated node: the heat never moves
        return DiffusionField(anchor, float(t), h, "iterative")
    steps = max(1, math.ceil(t))
    dt = t / steps
    for _ in range(steps):
        h = _expm_step(op.S, h, dt, tol / steps)
    return DiffusionField(anchor, float(t), h, "iterative")


def _dense_laplacian(graph: SemanticGraph) -> np.ndarray:
    n = graph.node_count
    w = np.zeros((n, n))
    rows = np.repeat(np.arange(n), graph.degrees())
    w[rows, graph.indices] = graph.weights.astype(np.float64)
    deg = w.sum(axis=1)
    lap = np.zeros((n, n))
    live = deg > 0
    scale = np.zeros(n)
    scale[live] = deg[live] ** -0.5
    lap[np.ix_(live, live)] = np.eye(live.sum()) - (scale[live, None] * w[np.ix_(live, live)] * scale[None, live])
    return lap


def diffuse_oracle(graph: SemanticGraph, anchor: int, t: float = 1.0) -> DiffusionField:
    """Dense eigendecomposition reference; only for small graphs."""
    if graph.node_count > ORACLE_MAX_NODES:
        raise CapacityError(f"oracle limited to {ORACLE_MAX_NODES} nodes, graph has {graph.node_count}")
    _check(graph, anchor, t)
    evals, evecs = np.linalg.eigh(_dense_laplacian(graph))
    h = evecs @ (np.exp(-t * evals) * evecs[anchor])
    return DiffusionField(anchor, float(t), h, "spectral_oracle")
