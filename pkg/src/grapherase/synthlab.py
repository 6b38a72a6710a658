"""Synthetic tables with planted clusters, proxy erasure metrics and timing.

Every random draw goes through a Philox generator keyed by the spec seed, so
tables are reproducible across platforms and numpy versions that keep the
bit-generator stream stable.
"""

from __future__ import annotations

import gc
import hashlib
import math
import os
import platform
import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .clusterid import ClusterParams, erase_plan
from .embedstore import EmbeddingTable, PromptEmbedding, prompt_bytes
from .errors import CapacityError, ValidationError
from .eraser import ErasureParams, ErasureResult, erase
from .semgraph import GraphParams, build_graph, degree_stats


@dataclass(frozen=True)
class PlantedCluster:
    label_prefix: str
    size: int
    spread: float = 0.1
    center: Optional[tuple] = None

    def __post_init__(self):
        if self.size < 0:
            raise ValidationError(f"cluster size must be >= 0, got {self.size}")
        if not (0.0 <= self.spread < math.pi / 4):
            raise ValidationError(f"spread must lie in [0, pi/4), got {self.spread}")


@dataclass(frozen=True)
class PlantedSpec:
    clusters: tuple
    background: int = 0
    dim: int = 64
    seed: int = 0
    orthogonal_centers: bool = True
    background_prefix: str = "bg"

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        if self.dim < 2:
            raise ValidationError(f"dim must be >= 2, got {self.dim}")
        if self.background < 0:
            raise ValidationError("background count must be >= 0")
        if self.background + sum(c.size for c in self.clusters) < 1:
            raise ValidationError("spec generates no vectors")
        prefixes = [c.label_prefix for c in self.clusters]
        if len(set(prefixes)) != len(prefixes):
            raise ValidationError("cluster label prefixes must be unique")

    @classmethod
    def uniform(cls, n_clusters, size, background, dim, seed=0, spread=0.1, **kw):
        clusters = tuple(PlantedCluster(f"c{k}_", size, spread) for k in range(n_clusters))
        return cls(clusters, background, dim, seed, **kw)

    def cluster_index(self, cluster_id: Union[int, str]) -> int:
        if isinstance(cluster_id, (int, np.integer)) and 0 <= cluster_id < len(self.clusters):
            return int(cluster_id)
        for k, c in enumerate(self.clusters):
            if c.label_prefix == cluster_id:
                return k
        raise ValidationError(f"unknown cluster id {cluster_id!r}")


@dataclass
class PlantedTable:
    table: EmbeddingTable
    membership: dict  # prefix -> member labels, generation order
    centers: np.ndarray  # (n_clusters, dim), float64 unit rows
    spec: PlantedSpec

    def anchor_label(self, cluster_id) -> str:
        k = self.spec.cluster_index(cluster_id)
        return self.membership[self.spec.clusters[k].label_prefix][0]

    def ground_truth(self) -> dict:
        return {prefix: list(labels) for prefix, labels in self.membership.items()}


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _resolve_centers(spec: PlantedSpec, rng) -> np.ndarray:
    c = len(spec.clusters)
    if c == 0:
        return np.zeros((0, spec.dim))
    raw = np.empty((c, spec.dim))
    for k, cl in enumerate(spec.clusters):
        if cl.center is not None:
            vec = np.asarray(cl.center, dtype=np.float64)
            if vec.shape != (spec.dim,):
                raise ValidationError(f"center of {cl.label_prefix!r} has shape {vec.shape}, expected ({spec.dim},)")
            raw[k] = vec
        else:
            raw[k] = rng.standard_normal(spec.dim)
    if not spec.orthogonal_centers:
        return _unit(raw)
    needs_room = any(cl.spread > 0 and cl.size > 0 for cl in spec.clusters)
    if c > spec.dim or (needs_room and c >= spec.dim):
        raise CapacityError(f"{c} orthogonal centers with spread need dim > {c}, got {spec.dim}")
    q, r = np.linalg.qr(raw.T)
    # fix QR's sign ambiguity so supplied centers keep their orientation
    return (q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))).T


def generate_table(spec: PlantedSpec) -> PlantedTable:
    rng = _rng(spec.seed)
    centers = _resolve_centers(spec, rng)
    labels, rows, membership = [], [], {}
    for k, cl in enumerate(spec.clusters):
        ck = centers[k]
        block = centers if spec.orthogonal_centers else ck[None, :]
        names = []
        for j in range(cl.size):
            theta = cl.spread * rng.uniform()
            u = rng.standard_normal(spec.dim)
            u -= block.T @ (block @ u)
            u = _unit(u)
            rows.append(math.cos(theta) * ck + math.sin(theta) * u)
            names.append(f"{cl.label_prefix}{j}")
        labels.extend(names)
        membership[cl.label_prefix] = names
    if spec.background:
        rows.extend(_unit(rng.standard_normal((spec.background, spec.dim))))
        labels.extend(f"{spec.background_prefix}{j}" for j in range(spec.background))
    resolved = replace(spec, clusters=tuple(
        replace(cl, center=tuple(centers[k].tolist())) for k, cl in enumerate(spec.clusters)
    ))
    table = EmbeddingTable.from_arrays(labels, np.asarray(rows))
    return PlantedTable(table, membership, centers, resolved)


def sample_prompt(planted: PlantedTable, mix: Sequence, length: int, seed: int = 0,
                  noise: float = 0.05) -> PromptEmbedding:
    """Tokens ``sum_c a_c * center_c + noise`` for the clusters in ``mix``.

    Coefficients are drawn from [0.5, 1.5]; the noise is orthogonal to every
    planted center so it never leaks into a center's component.
    """
    if length < 1:
        raise ValidationError("prompt length must be >= 1")
    rng = _rng(seed)
    idx = [planted.spec.cluster_index(m) for m in mix]
    centers = planted.centers
    d = planted.table.dim
    out = np.zeros((length, d))
    for i in range(length):
        for k in idx:
            out[i] += rng.uniform(0.5, 1.5) * centers[k]
        z = rng.standard_normal(d)
        if centers.size:
            z -= centers.T @ (centers @ z)
        out[i] += noise * z / math.sqrt(d)
    return PromptEmbedding(out.astype(np.float32))


@dataclass
class ProxyMetrics:
    target_similarity_drop: float
    offtarget_drift: float
    skipped_tokens: int


def proxy_metrics(before: PromptEmbedding, after: Union[ErasureResult, PromptEmbedding],
                  planted: Union[PlantedTable, PlantedSpec], target) -> ProxyMetrics:
    """Embedding-space stand-ins for erasure strength and preservation.

    ``target_similarity_drop`` is ``1 - mean|<after, c_t>| / mean|<before, c_t>|``,
    floored at 0. ``offtarget_drift`` is the largest change of ``|<., c_u>|``
    over tokens and non-target centers ``u``.
    """
    spec = planted.spec if isinstance(planted, PlantedTable) else planted
    k = spec.cluster_index(target)
    if any(c.center is None for c in spec.clusters):
        raise ValidationError("spec has unresolved centers; pass the PlantedTable or its resolved spec")
    centers = np.asarray([c.center for c in spec.clusters], dtype=np.float64)
    if isinstance(after, ErasureResult):
        skipped = int(np.count_nonzero(after.skipped))
        edited = after.edited.tokens
    else:
        skipped = 0
        edited = after.tokens
    b = np.abs(before.tokens.astype(np.float64) @ centers.T)
    a = np.abs(edited.astype(np.float64) @ centers.T)
    if b.shape != a.shape:
        raise ValidationError("before and after prompts differ in shape")
    base = b[:, k].mean()
    drop = 0.0 if base == 0 else max(0.0, 1.0 - a[:, k].mean() / base)
    others = [u for u in range(len(centers)) if u != k]
    drift = float(np.abs(a[:, others] - b[:, others]).max()) if others else 0.0
    return ProxyMetrics(float(drop), drift, skipped)


def machine_info() -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def bench_spec(count=10_000, dim=256, clusters=10, cluster_size=8, seed=0, spread=0.1) -> PlantedSpec:
    return PlantedSpec.uniform(clusters, cluster_size, max(count - clusters * cluster_size, 0), dim,
                               seed=seed, spread=spread)


def bench_pipeline(spec: PlantedSpec, concepts: int = 10, repeats: int = 5, prompt_len: int = 77,
                   graph_params: Optional[GraphParams] = None,
                   cluster_params: Optional[ClusterParams] = None,
                   erasure_params: Optional[ErasureParams] = None,
                   threads: int = 1) -> dict:
    """Time build, cluster and erase stages; medians over ``repeats`` runs.

    Concept k targets the k-th planted cluster (cycling through members when
    there are more concepts than clusters). The prompt mixes the targeted
    centers with one untouched center when one exists.
    """
    if repeats < 3:
        raise ValidationError(f"repeats must be >= 3, got {repeats}")
    if concepts < 0:
        raise ValidationError("concepts must be >= 0")
    graph_params = graph_params or GraphParams()
    cluster_params = cluster_params or ClusterParams()
    erasure_params = erasure_params or ErasureParams()
    planted = generate_table(spec)
    n_cl = len(spec.clusters)
    if concepts and n_cl == 0:
        raise ValidationError("concept benchmark needs at least one planted cluster")
    targets = []
    for k in range(concepts):
        prefix = spec.clusters[k % n_cl].label_prefix
        members = planted.membership[prefix]
        targets.append(members[(k // n_cl) % len(members)])
    mix = sorted({k % n_cl for k in range(concepts)})
    prompt = sample_prompt(planted, mix[:2] + ([n_cl - 1] if n_cl > len(mix) else []), prompt_len,
                           seed=spec.seed + 1) if concepts else None

    timings = {"build": [], "cluster": [], "erase": []}
    outputs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        graph = build_graph(planted.table, graph_params, threads=threads)
        t1 = time.perf_counter()
        record = {"degree_stats": degree_stats(graph)}
        if concepts:
            plan = erase_plan(graph, targets, cluster_params.n, cluster_params.K, cluster_params.t)
            t2 = time.perf_counter()
            result = erase(prompt, plan, graph, erasure_params)
            t3 = time.perf_counter()
            record["clusters"] = [[graph.table.labels[m] for m in c.members] for c in plan]
            record["edited_sha256"] = hashlib.sha256(prompt_bytes(result.edited)).hexdigest()
            record["max_residual"] = float(result.max_residual.max())
        else:
            t2 = t3 = t1
        timings["build"].append(t1 - t0)
        timings["cluster"].append(t2 - t1)
        timings["erase"].append(t3 - t2)
        outputs.append(record)

    med = {k: float(np.median(v)) * 1e3 for k, v in timings.items()}
    totals = [b + c + e for b, c, e in zip(timings["build"], timings["cluster"], timings["erase"])]
    online = [c + e for c, e in zip(timings["cluster"], timings["erase"])]
    return {
        "config": {
            "count": planted.table.count,
            "dim": planted.table.dim,
            "concepts": concepts,
            "prompt_len": prompt_len if concepts else 0,
            "repeats": repeats,
            "seed": spec.seed,
            "tau0": graph_params.tau0,
            "sigma": graph_params.sigma,
            "lambda": graph_params.lam,
            "n": cluster_params.n,
            "K": cluster_params.K,
            "t": cluster_params.t,
            "threads": threads,
        },
        "timing_ms": {
            "build_ms": med["build"],
            "cluster_ms": med["cluster"],
            "per_concept_cluster_ms": med["cluster"] / concepts if concepts else 0.0,
            "per_prompt_erase_ms": med["erase"],
            "cluster_erase_ms": float(np.median(online)) * 1e3,
            "total_ms": float(np.median(totals)) * 1e3,
            "raw_s": {k: [float(x) for x in v] for k, v in timings.items()},
        },
        "outputs": outputs[0],
        "outputs_identical_across_repeats": all(o == outputs[0] for o in outputs),
        "machine": machine_info(),
    }


def threshold_sweep(table: EmbeddingTable, taus: Sequence[float], repeats: int = 5,
                    sigma: float = 0.1, lam: float = 0.5, threads: int = 1) -> list:
    """Mean degree and median build time per base threshold.

    Repeats are interleaved across thresholds after one warm-up build, so
    slow drift in machine load hits every threshold alike.
    """
    params = [GraphParams(tau, sigma, lam) for tau in taus]
    if not params:
        return []
    build_graph(table, params[0], threads=threads)
    times = [[] for _ in params]
    stats = [None] * len(params)
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            for k, p in enumerate(params):
                t0 = time.perf_counter()
                graph = build_graph(table, p, threads=threads)
                times[k].append(time.perf_counter() - t0)
                stats[k] = degree_stats(graph)
                del graph
    finally:
        if was_enabled:
            gc.enable()
    return [{"tau0": float(p.tau0), "mean_degree": st["mean_degree"], "edge_count": st["edge_count"],
             "build_ms": float(np.median(ts)) * 1e3} for p, st, ts in zip(params, stats, times)]
