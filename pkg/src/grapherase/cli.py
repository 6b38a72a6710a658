"""Command-line entry point.

Exit codes: 0 success, 2 usage or validation, 3 graph/table mismatch,
4 convergence or capacity failure.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .clusterid import ConceptSpec, erase_plan, identify_cluster, resolve_anchor
from .config import RunConfig, load_config
from .embedstore import load_prompt, load_table, save_prompt, save_table
from .errors import GraphEraseError
from .eraser import erase
from .heatkernel import diffuse
from .semgraph import build_graph, degree_stats, load_graph, save_graph
from .synthlab import PlantedCluster, PlantedSpec, bench_pipeline, generate_table, sample_prompt, threshold_sweep


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def guarded(fn):
    """Map library exceptions onto the exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except GraphEraseError as exc:
            _fail(str(exc), exc.exit_code)
        except FileNotFoundError as exc:
            _fail(str(exc) if "file not found" in str(exc) else f"file not found: {exc.filename}", 2)
        except OSError as exc:
            _fail(f"I/O error: {exc}", 2)

    return wrapper


def _read_vector(path) -> np.ndarray:
    try:
        return np.asarray(Path(path).read_text(encoding="utf-8").split(), dtype=np.float64)
    except ValueError:
        raise click.BadParameter(f"{path}: expected whitespace-separated floats") from None


def _effective(ctx, **flags) -> RunConfig:
    cfg = ctx.obj["config"].merged(**flags).validate()
    if ctx.obj["verbose"]:
        click.echo("\n".join(cfg.as_lines()), err=True)
    return cfg


def _threads(cfg: RunConfig) -> int:
    import os

    return cfg.thread_count or (os.cpu_count() or 1)


def _load_pair(cfg: RunConfig, table_path, graph_path):
    table_path = table_path or cfg.table
    graph_path = graph_path or cfg.graph
    if not table_path or not graph_path:
        raise click.UsageError("both --table and --graph are required (flag or config file)")
    table = load_table(table_path, cfg.table_format)
    return table, load_graph(graph_path, table)


@click.group()
@click.version_option(__version__, prog_name="grapherase")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="key=value defaults file.")
@click.option("--threads", type=int, default=None, help="Worker threads; 0 picks the CPU count.")
@click.option("--verbose", is_flag=True, help="Echo the effective configuration to stderr.")
@click.pass_context
def cli(ctx, config_path, threads, verbose):
    """Graph-guided concept erasure over precomputed embeddings."""
    try:
        cfg = load_config(config_path)
    except FileNotFoundError as exc:
        _fail(str(exc), 2)
    except GraphEraseError as exc:
        _fail(str(exc), exc.exit_code)
    ctx.obj = {"config": cfg.merged(thread_count=threads), "verbose": verbose}


_format_opt = click.option("--format", "table_format", type=click.Choice(["text", "binary"]), default=None,
                           help="Embedding table format.")


@cli.command("build-graph")
@click.argument("table_path", required=False)
@_format_opt
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False), help="Graph file to write.")
@click.option("--tau0", type=float, default=None)
@click.option("--sigma", type=float, default=None)
@click.option("--lambda", "lam", type=float, default=None)
@click.pass_context
@guarded
def build_graph_cmd(ctx, table_path, table_format, output, tau0, sigma, lam):
    """Build the semantic graph of an embedding table and print degree statistics."""
    cfg = _effective(ctx, tau0=tau0, sigma=sigma, lam=lam, table_format=table_format, table=table_path)
    if not cfg.table:
        raise click.UsageError("missing embedding table path")
    table = load_table(cfg.table, cfg.table_format)
    graph = build_graph(table, cfg.graph_params(), threads=_threads(cfg))
    save_graph(graph, output)
    click.echo(_dumps(degree_stats(graph)))


_cluster_opts = [
    click.option("--radius", "n", type=int, default=None, help="Hop radius (default 2)."),
    click.option("--topk", "K", type=int, default=None, help="Maximum cluster size (default 8)."),
    click.option("--t", "t", type=float, default=None, help="Diffusion time (default 1.0)."),
]


def _with(opts):
    def deco(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn

    return deco


def _cluster_report(concept, graph, cluster):
    labels = graph.table.labels
    return {
        "concept": concept,
        "anchor_label": labels[cluster.anchor],
        "members": [
            {"label": labels[m], "score": s, "hops": h}
            for m, s, h in zip(cluster.members, cluster.member_scores, cluster.hops)
        ],
        "params": {"n": cluster.params.n, "K": cluster.params.K, "t": cluster.params.t},
    }


@cli.command("cluster")
@click.argument("concept")
@click.option("--table", "table_path", default=None)
@_format_opt
@click.option("--graph", "graph_path", default=None)
@click.option("--concept-vector", type=click.Path(exists=True, dir_okay=False), default=None,
              help="File of D floats for a concept missing from the vocabulary.")
@_with(_cluster_opts)
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None, help="Write the JSON report here.")
@click.option("--field-json", type=click.Path(dir_okay=False), default=None,
              help="Debug: dump the diffusion field sorted by score.")
@click.pass_context
@guarded
def cluster_cmd(ctx, concept, table_path, table_format, graph_path, concept_vector, n, K, t, output, field_json):
    """Identify the cluster of concepts entangled with CONCEPT."""
    cfg = _effective(ctx, n=n, K=K, t=t, table_format=table_format)
    _, graph = _load_pair(cfg, table_path, graph_path)
    vec = _read_vector(concept_vector) if concept_vector else None
    anchor = resolve_anchor(graph, ConceptSpec(concept, vec))
    cp = cfg.cluster_params()
    cluster = identify_cluster(graph, anchor, cp.n, cp.K, cp.t)
    text = _dumps(_cluster_report(concept, graph, cluster))
    if output:
        Path(output).write_text(text + "\n", encoding="utf-8")
    else:
        click.echo(text)
    if field_json:
        Path(field_json).write_text(diffuse(graph, anchor, cp.t).to_json() + "\n", encoding="utf-8")


@cli.command("erase")
@click.option("--prompt", "prompt_path", required=True, type=click.Path(dir_okay=False))
@click.option("--concept", "concepts", multiple=True, required=True, help="Target concept; repeat, applied in order.")
@click.option("--concept-vector", "vectors", multiple=True, metavar="LABEL=PATH",
              help="Embedding file for an out-of-vocabulary concept.")
@click.option("--table", "table_path", default=None)
@_format_opt
@click.option("--graph", "graph_path", default=None)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False), default=None, help="Write the residual JSON report.")
@click.option("--sigma-p", type=float, default=None)
@click.option("--attach-threshold", type=float, default=None)
@click.option("--passes", type=int, default=None)
@_with(_cluster_opts)
@click.pass_context
@guarded
def erase_cmd(ctx, prompt_path, concepts, vectors, table_path, table_format, graph_path, output, report,
              sigma_p, attach_threshold, passes, n, K, t):
    """Project target concepts out of a prompt embedding file."""
    cfg = _effective(ctx, sigma_p=sigma_p, attach_threshold=attach_threshold, passes=passes, n=n, K=K, t=t,
                     table_format=table_format)
    extra = {}
    for item in vectors:
        label, sep, path = item.partition("=")
        if not sep:
            raise click.BadParameter(f"expected LABEL=PATH, got {item!r}", param_hint="--concept-vector")
        extra[label] = _read_vector(path)
    _, graph = _load_pair(cfg, table_path, graph_path)
    prompt = load_prompt(prompt_path)
    specs = [ConceptSpec(c, extra.get(c)) for c in concepts]
    cp = cfg.cluster_params()
    plan = erase_plan(graph, specs, cp.n, cp.K, cp.t)
    result = erase(prompt, plan, graph, cfg.erasure_params())
    save_prompt(result.edited, output)
    if report:
        Path(report).write_text(result.report_json() + "\n", encoding="utf-8")
    click.echo(f"erased {len(plan)} concept(s) from {prompt.length} token(s); "
               f"{int(result.skipped.sum())} token(s) untouched", err=True)


@cli.command("gen-synth")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False), help="Embedding table to write.")
@_format_opt
@click.option("--truth", type=click.Path(dir_okay=False), required=True, help="Ground-truth membership JSON.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--clusters", type=int, default=4, show_default=True)
@click.option("--cluster-size", type=int, default=8, show_default=True)
@click.option("--spread", type=float, default=0.1, show_default=True)
@click.option("--background", type=int, default=200, show_default=True)
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--prompt", "prompt_path", type=click.Path(dir_okay=False), default=None,
              help="Also write a prompt mixing the first two cluster centers.")
@click.option("--prompt-len", type=int, default=8, show_default=True)
@click.pass_context
@guarded
def gen_synth_cmd(ctx, output, table_format, truth, seed, clusters, cluster_size, spread, background, dim,
                  prompt_path, prompt_len):
    """Write a synthetic table with planted clusters plus its ground truth."""
    cfg = _effective(ctx, table_format=table_format)
    spec = PlantedSpec(tuple(PlantedCluster(f"c{k}_", cluster_size, spread) for k in range(clusters)),
                       background, dim, seed)
    planted = generate_table(spec)
    save_table(planted.table, output, cfg.table_format)
    Path(truth).write_text(_dumps(planted.ground_truth()) + "\n", encoding="utf-8")
    if prompt_path:
        save_prompt(sample_prompt(planted, list(range(min(clusters, 2))), prompt_len, seed=seed + 1), prompt_path)


@cli.command("bench")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False), help="JSON timing report.")
@click.option("--count", type=int, default=10_000, show_default=True)
@click.option("--dim", type=int, default=256, show_default=True)
@click.option("--clusters", type=int, default=10, show_default=True)
@click.option("--cluster-size", type=int, default=8, show_default=True)
@click.option("--concepts", type=int, default=10, show_default=True)
@click.option("--repeats", type=int, default=5, show_default=True)
@click.option("--prompt-len", type=int, default=77, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sweep", default=None, help="Comma-separated base thresholds to sweep, e.g. 0.2,0.3,0.4,0.5.")
@click.option("--figures", type=click.Path(file_okay=False), default=None,
              help="Directory for PNG figures and the sweep CSV.")
@click.pass_context
@guarded
def bench_cmd(ctx, output, count, dim, clusters, cluster_size, concepts, repeats, prompt_len, seed, sweep, figures):
    """Time graph build, cluster identification and erasure on a synthetic table."""
    cfg = _effective(ctx)
    spec = PlantedSpec.uniform(clusters, cluster_size, max(count - clusters * cluster_size, 0), dim, seed=seed)
    report = bench_pipeline(spec, concepts, repeats, prompt_len, cfg.graph_params(), cfg.cluster_params(),
                            cfg.erasure_params(), threads=_threads(cfg))
    rows = None
    if sweep:
        try:
            taus = [float(x) for x in sweep.split(",") if x.strip()]
        except ValueError:
            raise click.BadParameter(f"bad threshold list {sweep!r}", param_hint="--sweep") from None
        rows = threshold_sweep(generate_table(spec).table, taus, repeats, cfg.sigma, cfg.lam, _threads(cfg))
        report["threshold_sweep"] = rows
    Path(output).write_text(_dumps(report) + "\n", encoding="utf-8")
    if figures:
        from .plots import plot_stage_timings, plot_threshold_sweep

        out = Path(figures)
        out.mkdir(parents=True, exist_ok=True)
        plot_stage_timings(report, out / "stage_timings.png")
        if rows:
            with open(out / "threshold_sweep.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=["tau0", "mean_degree", "edge_count", "build_ms"])
                writer.writeheader()
                writer.writerows(rows)
            plot_threshold_sweep(rows, out / "threshold_sweep.png")
    t = report["timing_ms"]
    click.echo(f"build {t['build_ms']:.1f} ms | cluster+erase {t['cluster_erase_ms']:.1f} ms | "
               f"total {t['total_ms']:.1f} ms")


def main():
    cli(prog_name="grapherase")


if __name__ == "__main__":
    main()
