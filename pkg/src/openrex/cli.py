"""Operator surface.

Subcommands: ``ingest`` (dataset files to the normalized corpus format plus
a sealed gold sidecar), ``run`` (the full pipeline or a prefix of it),
``probe`` (the demonstration-composition study), and ``evaluate`` (metrics
over a prediction file). A config file may supply anything a flag can;
explicit flags win.

Exit codes: 0 success, 2 user or data error, 3 backend failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import yaml

from . import data as data_mod
from . import report as report_mod
from . import runio
from .backend import HttpBackend, SimulatedOracle, SimulatedOracleConfig, TextBackend
from .domain import PipelineConfig, RelationName
from .errors import (
    AlignmentError,
    BackendError,
    ConfigError,
    DiscoveryAborted,
    InsufficientInstances,
    InvalidRelationName,
    OpenRexError,
    ParseError,
    SamplingError,
    SplitError,
)
from .infer import run_pipeline
from .metrics import evaluate as evaluate_metrics
from .probe import run_probe

USER_ERRORS = (
    ParseError,
    SplitError,
    AlignmentError,
    SamplingError,
    ConfigError,
    InsufficientInstances,
    InvalidRelationName,
    FileNotFoundError,
    IsADirectoryError,
)
BACKEND_ERRORS = (BackendError, DiscoveryAborted)


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    loaded = yaml.safe_load(text) or {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return loaded


class _Options:
    """Flag values with config-file fallback."""

    def __init__(self, flags: dict, config: dict):
        self.flags = flags
        self.config = config

    def get(self, name: str, default=None):
        value = self.flags.get(name)
        if value is not None:
            return value
        return self.config.get(name, default)


def _pipeline_config(opts: _Options) -> PipelineConfig:
    return PipelineConfig(
        n=int(opts.get("n", 4)),
        k=int(opts.get("k", 3)),
        t=int(opts.get("t", 3)),
        d=(lambda v: int(v) if v is not None else None)(opts.get("d")),
        seed=int(opts.get("seed", 0)),
        max_in_flight=int(opts.get("max_in_flight", 1)),
        max_new_tokens=int(opts.get("max_new_tokens", 16)),
        consistency=str(opts.get("consistency", "unanimous")),
    )


def _make_backend(opts: _Options, gold: dict[str, RelationName] | None) -> TextBackend:
    kind = str(opts.get("backend", "simulator"))
    if kind == "simulator":
        if not gold:
            raise ConfigError("the simulator backend needs a gold sidecar (--gold)")
        return SimulatedOracle(
            SimulatedOracleConfig(
                gold=gold,
                p_hit_target_in_demos=float(opts.get("sim_p_hit_target", 0.9)),
                p_hit_otherwise=float(opts.get("sim_p_hit_otherwise", 0.5)),
                confusion=str(opts.get("sim_confusion", "novel")),
                seed=int(opts.get("seed", 0)),
            )
        )
    if kind == "http":
        endpoint = opts.get("endpoint")
        model = opts.get("model")
        if not endpoint or not model:
            raise ConfigError("the http backend needs --endpoint and --model")
        return HttpBackend(
            str(endpoint), str(model), max_in_flight=int(opts.get("max_in_flight", 1))
        )
    raise ConfigError(f"unknown backend {kind!r}")


@click.group()
def main() -> None:
    """Open relation extraction: discover, denoise, predict, evaluate."""


@main.command()
@click.option("--format", "fmt", type=click.Choice(["fewrel", "tacred", "normalized"]), required=True)
@click.option("--input", "input_path", type=click.Path(), required=True)
@click.option("--known-first", type=int, default=None, help="First N relations become the known set.")
@click.option("--long-tail", is_flag=True, help="Downsample new relations to long-tail counts.")
@click.option("--mixed-test", is_flag=True, help="Also hold out known-relation instances into the test pool.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
def ingest(fmt, input_path, known_first, long_tail, mixed_test, seed, out, config_path) -> None:
    """Load a dataset, build a known/new split, write normalized files."""
    try:
        config = _load_config_file(config_path)
        opts = _Options(
            {"known_first": known_first, "seed": seed, "mixed_test": mixed_test or None},
            config,
        )
        loader = {
            "fewrel": data_mod.load_fewrel,
            "tacred": data_mod.load_tacred,
            "normalized": data_mod.read_normalized,
        }[fmt]
        corpus = loader(input_path)
        n_known = opts.get("known_first")
        if n_known is None:
            n_known = len(corpus.relations()) // 2
        spec = data_mod._first_n_spec(corpus, int(n_known), bool(opts.get("mixed_test", False)))
        if long_tail:
            lt_seed = int(opts.get("seed", 0))
            test_pool = data_mod.build_fewrel_lt(corpus, spec, lt_seed)
            keep = {i.id for i in test_pool.instances}
            from .domain import Corpus, LabeledInstance

            merged = Corpus(
                role="train",
                instances=tuple(
                    item
                    for item in corpus.instances
                    if isinstance(item, LabeledInstance)
                    and (item.relation in set(spec.known_relations) or item.id in keep)
                ),
            )
            split = data_mod.split_known_new(merged, spec)
        else:
            split = data_mod.split_known_new(corpus, spec)

        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        data_mod.write_normalized(split.train, out_dir / "train.jsonl")
        data_mod.write_normalized(split.test, out_dir / "test.jsonl")
        data_mod.write_gold(split.gold, out_dir / "gold.json")
        click.echo(
            f"train: {len(split.train)} instances over {len(split.train.relations())} relations"
        )
        click.echo(f"test:  {len(split.test)} instances, gold classes: {len(set(split.gold.values()))}")
    except USER_ERRORS as exc:
        _fail(str(exc), 2)


@main.command()
@click.option("--train", "train_path", type=click.Path(), required=True)
@click.option("--test", "test_path", type=click.Path(), required=True)
@click.option("--gold", "gold_path", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--n", type=int, default=None, help="Demonstrations per prompt (default 4).")
@click.option("--k", type=int, default=None, help="Discovery attempts per instance (default 3).")
@click.option("--t", type=int, default=None, help="Denoising rounds (default 3; 0 skips the stage).")
@click.option("--d", type=int, default=None, help="Verification batches per candidate (default auto).")
@click.option("--seed", type=int, default=None)
@click.option("--backend", type=click.Choice(["simulator", "http"]), default=None)
@click.option("--endpoint", type=str, default=None)
@click.option("--model", type=str, default=None)
@click.option("--max-in-flight", type=int, default=None)
@click.option("--max-new-tokens", type=int, default=None)
@click.option("--consistency", type=click.Choice(["unanimous", "majority"]), default=None)
@click.option("--stop-after", type=click.Choice(["discovery", "denoising"]), default=None)
@click.option("--sim-p-hit-target", type=float, default=None)
@click.option("--sim-p-hit-otherwise", type=float, default=None)
@click.option("--sim-confusion", type=click.Choice(["uniform", "novel"]), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
def run(
    train_path, test_path, gold_path, out, n, k, t, d, seed, backend, endpoint, model,
    max_in_flight, max_new_tokens, consistency, stop_after, sim_p_hit_target,
    sim_p_hit_otherwise, sim_confusion, config_path,
) -> None:
    """Run the pipeline and, when a gold sidecar is given, evaluate it."""
    out_dir = Path(out)
    try:
        config = _load_config_file(config_path)
        opts = _Options(
            {
                "n": n, "k": k, "t": t, "d": d, "seed": seed, "backend": backend,
                "endpoint": endpoint, "model": model, "max_in_flight": max_in_flight,
                "max_new_tokens": max_new_tokens, "consistency": consistency,
                "stop_after": stop_after, "sim_p_hit_target": sim_p_hit_target,
                "sim_p_hit_otherwise": sim_p_hit_otherwise, "sim_confusion": sim_confusion,
                "gold": gold_path,
            },
            config,
        )
        train = data_mod.read_normalized(train_path, role="train")
        if not train.labeled:
            raise ConfigError(f"train corpus {train_path} must be fully labeled")
        test = data_mod.read_normalized(test_path, role="test")
        gold_file = opts.get("gold")
        gold = data_mod.read_gold(gold_file) if gold_file else None
        cfg = _pipeline_config(opts)
        backend_impl = _make_backend(opts, gold)
    except USER_ERRORS as exc:
        _fail(str(exc), 2)
        return

    try:
        result = run_pipeline(test, train, cfg, backend_impl, stop_after=opts.get("stop_after"))
    except BACKEND_ERRORS as exc:
        out_dir.mkdir(parents=True, exist_ok=True)
        runio.write_manifest(
            {"format": "openrex-run-manifest", "version": 1, "status": "FAILED", "error": str(exc)},
            out_dir / runio.MANIFEST_FILE,
        )
        _fail(str(exc), 3)
        return
    except USER_ERRORS as exc:
        _fail(str(exc), 2)
        return

    runio.write_run_artifacts(result, out_dir)
    click.echo(f"wrote {runio.PREDICTIONS_FILE} and traces to {out_dir}")
    if gold is not None:
        predictions = runio.read_predictions(out_dir / runio.PREDICTIONS_FILE)
        attempts = result.discovery.relations_by_instance()
        try:
            rep = evaluate_metrics(predictions, gold, attempts)
        except AlignmentError as exc:
            _fail(str(exc), 2)
            return
        report_mod.write_report_json(rep, out_dir / runio.REPORT_JSON_FILE)
        report_mod.write_report_tsv(rep, out_dir / runio.REPORT_TSV_FILE)
        report_mod.render_report_figure(rep, out_dir / runio.REPORT_FIGURE_FILE)
        click.echo(
            f"B3 F1 {rep.b3_f1:.3f} | V F1 {rep.v_f1:.3f} | ARI {rep.ari:.3f} | "
            f"Cls F1 {rep.cls_f1:.3f} | accuracy {rep.accuracy:.3f}"
        )


@main.command()
@click.option("--pool", "pool_path", type=click.Path(), required=True, help="Labeled normalized corpus.")
@click.option("--demo-counts", type=str, default=None, help="Comma-separated grid, default 4,8,16.")
@click.option("--limit", type=int, default=None)
@click.option("--gold", "gold_path", type=click.Path(), default=None, help="Gold map for the simulator; defaults to the pool's own labels.")
@click.option("--seed", type=int, default=None)
@click.option("--backend", type=click.Choice(["simulator", "http"]), default=None)
@click.option("--endpoint", type=str, default=None)
@click.option("--model", type=str, default=None)
@click.option("--max-in-flight", type=int, default=None)
@click.option("--sim-p-hit-target", type=float, default=None)
@click.option("--sim-p-hit-otherwise", type=float, default=None)
@click.option("--sim-confusion", type=click.Choice(["uniform", "novel"]), default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
def probe(
    pool_path, demo_counts, limit, gold_path, seed, backend, endpoint, model,
    max_in_flight, sim_p_hit_target, sim_p_hit_otherwise, sim_confusion, out, config_path,
) -> None:
    """Accuracy per demonstration setting over a demo-count grid."""
    try:
        config = _load_config_file(config_path)
        opts = _Options(
            {
                "demo_counts": demo_counts, "limit": limit, "seed": seed,
                "backend": backend, "endpoint": endpoint, "model": model,
                "max_in_flight": max_in_flight, "sim_p_hit_target": sim_p_hit_target,
                "sim_p_hit_otherwise": sim_p_hit_otherwise, "sim_confusion": sim_confusion,
            },
            config,
        )
        pool = data_mod.read_normalized(pool_path, role="train")
        counts = [int(x) for x in str(opts.get("demo_counts", "4,8,16")).split(",") if x.strip()]
        gold = data_mod.read_gold(gold_path) if gold_path else pool.gold_map()
        cfg = PipelineConfig(
            seed=int(opts.get("seed", 0)),
            max_in_flight=int(opts.get("max_in_flight", 1)),
        )
        backend_impl = _make_backend(opts, gold)
        rows = run_probe(pool, counts, cfg, backend_impl, limit=opts.get("limit"))
    except USER_ERRORS as exc:
        _fail(str(exc), 2)
        return
    except BACKEND_ERRORS as exc:
        _fail(str(exc), 3)
        return
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_mod.write_probe_json(rows, out_dir / runio.PROBE_JSON_FILE)
    report_mod.write_probe_tsv(rows, out_dir / runio.PROBE_TSV_FILE)
    report_mod.render_probe_figure(rows, out_dir / runio.PROBE_FIGURE_FILE)
    for row in rows:
        click.echo(f"{row.setting:24s} demos={row.demo_count:<3d} accuracy={row.accuracy:.3f}")


@main.command()
@click.option("--predictions", "predictions_path", type=click.Path(), required=True)
@click.option("--gold", "gold_path", type=click.Path(), required=True)
@click.option("--discovery-trace", "trace_path", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), required=True)
def evaluate(predictions_path, gold_path, trace_path, out) -> None:
    """Full metric bundle for a prediction file against the gold sidecar."""
    try:
        predictions = runio.read_predictions(predictions_path)
        gold = data_mod.read_gold(gold_path)
        attempts = runio.read_discovery_attempts(trace_path) if trace_path else None
        rep = evaluate_metrics(predictions, gold, attempts)
    except USER_ERRORS as exc:
        _fail(str(exc), 2)
        return
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_mod.write_report_json(rep, out_dir / runio.REPORT_JSON_FILE)
    report_mod.write_report_tsv(rep, out_dir / runio.REPORT_TSV_FILE)
    report_mod.render_report_figure(rep, out_dir / runio.REPORT_FIGURE_FILE)
    click.echo(json.dumps(rep.to_dict(), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
