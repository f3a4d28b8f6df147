"""Command-line orchestration of the benchmark.

Subcommands mirror the pipeline stages (ingest, synth, embed, train, eval,
prompt-eval, profile, report), each usable standalone. Exit codes: 0
success, 1 validation error, 2 runtime error, 3 partial success (some
categories failed). No subcommand mutates its input files; everything new
goes under the chosen output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import (
    CONFIG_VERSION,
    RunConfig,
    STRATEGY_ALIASES,
    load_config,
    validate_config,
)
from .data import (
    Dataset,
    GROUP_AXES,
    LABEL_RULES,
    assign_labels,
    group_by_category,
    load_dataset,
    load_response_table,
    synthesize_studies,
    write_dataset,
)
from .encoder import ToyEncoder, ToyEncoderConfig, embed_dataset, init_encoder, parameter_count
from .embeddings import pooled_dim, read_embeddings, write_embeddings
from .errors import (
    CellrxError,
    ConfigValidationError,
    ConsistencyError,
    DataError,
    FormatError,
    ParameterError,
    ShapeError,
    UnknownModelError,
)
from .evaluation import cross_evaluate, pooled_evaluate
from .lora import LoraConfig, attach, fine_tune, load_adapters, save_adapters
from .mlp import TrainConfig, save_head, train_frozen
from .pipelines import FileEmbeddingPipeline, FrozenToyPipeline, LoraToyPipeline
from .profiling import hardware_descriptor, profile, profile_row
from .prompts import HttpLlmClient, LlmClient, evaluate_fewshot
from .registry import TOY_MODEL, model_info, registry_lookup, toy_targets_for
from .report import save_records, write_report
from .tokens import TOKEN_OFFSET

_VALIDATION_ERRORS = (
    ConfigValidationError, FormatError, DataError, ConsistencyError,
    ParameterError, ShapeError, UnknownModelError,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


def manifest_path_for(matrix_path: Path) -> Path:
    return matrix_path.with_suffix(".manifest.json")


def _load_datasets(paths) -> list[Dataset]:
    return [load_dataset(p, manifest_path_for(Path(p))) for p in paths]


def _build_encoder(n_genes: int, seed: int) -> ToyEncoder:
    config = ToyEncoderConfig(vocab_size=n_genes + TOKEN_OFFSET, seed=seed)
    return init_encoder(config)


def _write_study(dataset: Dataset, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    matrix = out_dir / f"{dataset.manifest.study_id}.csv"
    write_dataset(dataset, matrix, manifest_path_for(matrix))
    return matrix


def _exchange_name(model_id: str, strategy: str) -> str:
    return f"{model_id}__{strategy}.emb"


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    matrix = Path(args.data)
    manifest = Path(args.manifest) if args.manifest else manifest_path_for(matrix)
    dataset = load_dataset(matrix, manifest)
    if args.responses:
        table = load_response_table(args.responses)
        dataset = Dataset(
            dataset.manifest, dataset.vocabulary,
            assign_labels(dataset.cells, table),
        )
    out = _write_study(dataset, Path(args.out))
    labeled = sum(1 for c in dataset.cells if c.label is not None)
    print(f"ingested {dataset.manifest.study_id}: {len(dataset.cells)} cells, "
          f"{dataset.n_genes} genes, {labeled} labeled -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    studies = synthesize_studies(
        n_studies=args.studies,
        n_cells=args.cells,
        n_genes=args.genes,
        label_rule=args.rule,
        base_seed=args.seed,
        noise_level=args.noise,
    )
    for ds in studies:
        path = _write_study(ds, Path(args.out))
        print(f"wrote {path} ({len(ds.cells)} cells, rule={args.rule})")
    return EXIT_OK


def cmd_embed(args) -> int:
    matrix = Path(args.data)
    dataset = load_dataset(matrix, manifest_path_for(matrix))
    encoder = _build_encoder(dataset.n_genes, args.seed)
    adapters = None
    strategy = "frozen"
    if args.adapters:
        adapters = load_adapters(encoder, args.adapters).adapters
        strategy = "finetuned"
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for model_id in args.models.split(","):
        descriptor = registry_lookup(model_id.strip())
        emb = embed_dataset(encoder, dataset, descriptor,
                            strategy=strategy, adapters=adapters)
        path = out_dir / _exchange_name(descriptor.model_id, strategy)
        write_embeddings(emb, path)
        print(f"wrote {path} ({emb.n_cells} cells x {emb.dim})")
    return EXIT_OK


def cmd_train(args) -> int:
    strategy = STRATEGY_ALIASES.get(args.strategy)
    if strategy not in ("frozen", "finetuned"):
        raise ParameterError(f"train supports frozen or finetune, got {args.strategy!r}")
    matrix = Path(args.data)
    dataset = load_dataset(matrix, manifest_path_for(matrix))
    labels = dataset.labels_array()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = TrainConfig(seed=args.seed)

    if strategy == "frozen":
        if not args.embeddings:
            raise ParameterError("frozen training needs --embeddings FILE")
        emb = read_embeddings(args.embeddings)
        if emb.cell_ids != dataset.cell_ids:
            raise ConsistencyError(
                f"{args.embeddings} covers different cells than {matrix}"
            )
        head = train_frozen(emb, labels, config)
        path = out_dir / "head.bin"
        save_head(head, path)
        print(f"trained head on {emb.n_cells} frozen embeddings -> {path}")
        return EXIT_OK

    descriptor = registry_lookup(args.model)
    encoder = _build_encoder(dataset.n_genes, args.seed)
    lora = LoraConfig(
        target_names=list(toy_targets_for(args.model)), seed=args.seed,
    )
    adapted = attach(encoder, lora)
    result = fine_tune(adapted, None, dataset, descriptor, config)
    save_adapters(adapted, out_dir / "adapters.bin")
    save_head(result.head, out_dir / "head.bin")
    print(f"fine-tuned {descriptor.model_id} for {result.steps} steps "
          f"(final loss {result.loss_curve[-1]:.4f}) -> {out_dir}")
    return EXIT_OK


def _config_from_args(args) -> RunConfig:
    if args.config:
        # snapshot() holds paths already resolved against the config's
        # directory, so flag overrides merge in cwd-relative terms
        raw = load_config(args.config).snapshot()
    else:
        raw = {"config_version": CONFIG_VERSION}
    if args.data:
        raw["datasets"] = [s.strip() for s in args.data.split(",")]
    if args.models:
        raw["models"] = [s.strip() for s in args.models.split(",")]
    if args.strategy:
        raw["strategies"] = [args.strategy]
    if args.axis:
        raw["axis"] = args.axis
    if args.scenario:
        raw["scenario"] = args.scenario
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.out:
        raw["out_dir"] = args.out
    raw.setdefault("strategies", ["frozen"])
    raw.setdefault("out_dir", "runs")
    return validate_config(raw, base_dir=Path("."))


def _make_run_dir(out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    candidate = out_dir / f"run-{stamp}"
    n = 1
    while candidate.exists():
        n += 1
        candidate = out_dir / f"run-{stamp}-{n}"
    candidate.mkdir()
    return candidate


def _make_pipeline(model_id: str, strategy: str, encoder: ToyEncoder,
                   config: RunConfig):
    """Toy pipelines compute embeddings in-process; with an embeddings
    directory configured, non-toy models read exchange files instead."""
    if config.embeddings_dir is not None and model_id.lower() != TOY_MODEL.model_id:
        path = config.embeddings_dir / _exchange_name(model_id, strategy)
        return FileEmbeddingPipeline(path, train_config=config.train_config(),
                                     expected_model=model_id)
    if strategy == "frozen":
        return FrozenToyPipeline(encoder, model_id, config.train_config())
    return LoraToyPipeline(encoder, model_id, config.train_config(), seed=config.seed)


def run(config: RunConfig) -> tuple[Path, int]:
    """Execute the scenario matrix and write a self-describing run directory."""
    if "fewshot" in config.strategies:
        raise ConfigValidationError(
            "the eval subcommand handles frozen/finetune strategies; "
            "use prompt-eval for fewshot"
        )
    datasets = _load_datasets(config.datasets)
    groups = group_by_category(datasets, config.axis)
    n_genes = datasets[0].n_genes
    encoder = _build_encoder(n_genes, config.seed)

    records = []
    failures = []
    profiles = []
    for model_id in config.models:
        for strategy in config.strategies:
            pipeline = _make_pipeline(model_id, strategy, encoder, config)
            for group in groups:
                try:
                    if config.scenario == "pooled":
                        got = pooled_evaluate(group, pipeline, seed=config.seed,
                                              workers=config.workers)
                    else:
                        got = cross_evaluate(group, pipeline, seed=config.seed,
                                             workers=config.workers)
                    records.extend(got)
                except CellrxError as exc:
                    failures.append({
                        "model_id": model_id,
                        "strategy": strategy,
                        "axis": config.axis,
                        "category": group.value,
                        "error": f"{type(exc).__name__}: {exc}",
                    })
            if hasattr(pipeline, "training_task"):
                quick = replace(config.train_config(), epochs=1, max_steps=30)
                prof_pipe = _make_pipeline(model_id, strategy, encoder, config)
                prof_pipe.train_config = quick
                training, inference = profile(prof_pipe, datasets[0])
                info = model_info(model_id)
                params = (parameter_count(encoder.config)
                          if info.params_millions is None
                          else int(info.params_millions * 1e6))
                dim = pooled_dim(registry_lookup(model_id).pooling,
                                 encoder.config.d_model)
                profiles.append(profile_row(training, inference, params, dim))

    run_dir = _make_run_dir(config.out_dir)
    (run_dir / "config.json").write_text(
        json.dumps(config.snapshot(), indent=2, sort_keys=True) + "\n", "utf-8")
    (run_dir / "environment.json").write_text(
        json.dumps({
            "package": __version__,
            "hardware": hardware_descriptor(),
            "utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }, indent=2, sort_keys=True) + "\n", "utf-8")
    save_records(records, run_dir)
    if profiles:
        (run_dir / "profiles.json").write_text(
            json.dumps(profiles, indent=2, sort_keys=True) + "\n", "utf-8")
    if failures:
        (run_dir / "failures.json").write_text(
            json.dumps(failures, indent=2, sort_keys=True) + "\n", "utf-8")
    if records:
        for fmt in ("csv", "structured", "plotdata"):
            write_report(run_dir, fmt)

    if records and failures:
        code = EXIT_PARTIAL
    elif records:
        code = EXIT_OK
    else:
        code = EXIT_RUNTIME
    return run_dir, code


def cmd_eval(args) -> int:
    config = _config_from_args(args)
    run_dir, code = run(config)
    print(f"run directory: {run_dir}")
    if code == EXIT_PARTIAL:
        print("some categories failed; see failures.json", file=sys.stderr)
    elif code == EXIT_RUNTIME:
        print("no category produced results; see failures.json", file=sys.stderr)
    return code


class CannedClient(LlmClient):
    """Replays recorded replies in batch order; offline stand-in for an API."""

    def __init__(self, replies: list[str]):
        self.replies = list(replies)
        self.cursor = 0

    def send(self, prompt: str) -> str:
        if self.cursor >= len(self.replies):
            raise DataError(
                f"canned replies exhausted after {self.cursor} batches"
            )
        reply = self.replies[self.cursor]
        self.cursor += 1
        return reply


def cmd_prompt_eval(args) -> int:
    matrix = Path(args.data)
    dataset = load_dataset(matrix, manifest_path_for(matrix))
    if args.replies:
        replies = json.loads(Path(args.replies).read_text("utf-8"))
        if not isinstance(replies, list):
            raise FormatError(f"{args.replies} must hold a JSON list of replies")
        client: LlmClient = CannedClient(replies)
    elif args.endpoint:
        client = HttpLlmClient(args.endpoint, args.model_name, timeout=args.timeout)
    else:
        raise ParameterError("prompt-eval needs --replies FILE or --endpoint URL")
    result = evaluate_fewshot(dataset, client)
    payload = {
        "f1": result.metrics.f1,
        "auroc": result.metrics.auroc,
        "accuracy": result.metrics.accuracy,
        "precision": result.metrics.precision,
        "recall": result.metrics.recall,
        "n_scored": result.n_scored,
        "n_skipped": result.n_skipped,
        "failures": [
            {"batch": f.batch_index, "cells": list(f.cell_ids), "reason": f.reason}
            for f in result.failures
        ],
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")
    print(f"scored {result.n_scored} cells (skipped {result.n_skipped}) -> {out}")
    return EXIT_PARTIAL if result.failures else EXIT_OK


def cmd_profile(args) -> int:
    matrix = Path(args.data)
    dataset = load_dataset(matrix, manifest_path_for(matrix))
    encoder = _build_encoder(dataset.n_genes, args.seed)
    strategy = STRATEGY_ALIASES.get(args.strategy)
    if strategy not in ("frozen", "finetuned"):
        raise ParameterError(f"profile supports frozen or finetune, got {args.strategy!r}")
    rows = []
    for model_id in args.models.split(","):
        model_id = model_id.strip()
        if strategy == "frozen":
            pipeline = FrozenToyPipeline(encoder, model_id)
        else:
            pipeline = LoraToyPipeline(encoder, model_id, seed=args.seed)
        training, inference = profile(pipeline, dataset, repeats=args.repeats)
        info = model_info(model_id)
        params = (parameter_count(encoder.config) if info.params_millions is None
                  else int(info.params_millions * 1e6))
        dim = pooled_dim(registry_lookup(model_id).pooling, encoder.config.d_model)
        rows.append(profile_row(training, inference, params, dim))
    payload = {"hardware": hardware_descriptor(), "rows": rows}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")
    for row in rows:
        print(f"{row['model_id']}: train {row['training_speed']:.1f} it/s, "
              f"infer {row['inference_speed']:.1f} it/s")
    return EXIT_OK


def cmd_report(args) -> int:
    written = write_report(args.run, args.format)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellrx",
        description="Single-cell drug-response benchmarking harness.",
    )
    parser.add_argument("--version", action="version", version=f"cellrx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset and write a normalized copy")
    p.add_argument("--data", required=True, help="expression matrix path")
    p.add_argument("--manifest", help="manifest path (default: <stem>.manifest.json)")
    p.add_argument("--responses", help="sample response CSV for label assignment")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("synth", help="generate synthetic labeled studies")
    p.add_argument("--rule", choices=LABEL_RULES, default="linear")
    p.add_argument("--cells", type=int, default=200)
    p.add_argument("--genes", type=int, default=60)
    p.add_argument("--studies", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0, help="label flip probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("embed", help="write embedding exchange files")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True, help="comma-separated model ids")
    p.add_argument("--adapters", help="adapter sidecar; switches to finetuned output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("train", help="train a head (frozen) or adapters (finetune)")
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", choices=("frozen", "finetune"), default="frozen")
    p.add_argument("--embeddings", help="exchange file (frozen strategy)")
    p.add_argument("--model", default=TOY_MODEL.model_id, help="model id (finetune strategy)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="run the scenario matrix into a run directory")
    p.add_argument("--config", help="run-config JSON path")
    p.add_argument("--data", help="comma-separated matrix paths (overrides config)")
    p.add_argument("--models", help="comma-separated model ids (overrides config)")
    p.add_argument("--strategy", choices=sorted(STRATEGY_ALIASES),
                   help="single strategy (overrides config)")
    p.add_argument("--axis", choices=GROUP_AXES)
    p.add_argument("--scenario", choices=("pooled", "cross"))
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="parent directory for run directories")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("prompt-eval", help="few-shot evaluation through an LLM client")
    p.add_argument("--data", required=True)
    p.add_argument("--replies", help="JSON list of canned replies (offline mode)")
    p.add_argument("--endpoint", help="chat-completions endpoint URL")
    p.add_argument("--model-name", default="gpt-4o-mini")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.set_defaults(fn=cmd_prompt_eval)

    p = sub.add_parser("profile", help="measure training/inference throughput")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--strategy", choices=("frozen", "finetune"), default="frozen")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("report", help="render summaries from a run directory")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--format", choices=("csv", "structured", "plotdata"),
                   default="csv")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CellrxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
