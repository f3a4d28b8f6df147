"""Versioned run configuration.

A run config is a JSON document with a `config_version` field. Validation
is fail-fast and complete: every problem found is listed in one report, and
unknown keys are rejected so typos never silently change a run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import GROUP_AXES
from .errors import ConfigValidationError, FormatError
from .mlp import TrainConfig

CONFIG_VERSION = 1

SCENARIOS = ("pooled", "cross")

# Strategy tokens accepted in configs and on the command line. "finetune"
# is the flag spelling of the stored strategy name "finetuned".
STRATEGY_ALIASES = {
    "frozen": "frozen",
    "finetune": "finetuned",
    "finetuned": "finetuned",
    "fewshot": "fewshot",
}

_TOP_KEYS = {
    "config_version", "datasets", "scenario", "axis", "models",
    "strategies", "seed", "workers", "train", "out_dir", "embeddings_dir",
}

_TRAIN_KEYS = {
    "learning_rate", "epochs", "batch_size", "optimizer", "betas", "eps",
    "hidden1", "hidden2", "standardize", "max_steps",
}


@dataclass
class RunConfig:
    """Validated benchmark run description."""

    datasets: list[Path]
    scenario: str
    axis: str
    models: list[str]
    strategies: list[str]
    out_dir: Path
    seed: int = 0
    workers: int = 1
    train_overrides: dict = field(default_factory=dict)
    embeddings_dir: Path | None = None

    def train_config(self, **extra) -> TrainConfig:
        merged = dict(self.train_overrides)
        merged.update(extra)
        if "betas" in merged:
            merged["betas"] = tuple(merged["betas"])
        return TrainConfig(seed=self.seed, **merged)

    def snapshot(self) -> dict:
        """JSON-ready dict that reproduces this config exactly."""
        out = {
            "config_version": CONFIG_VERSION,
            "datasets": [str(p) for p in self.datasets],
            "scenario": self.scenario,
            "axis": self.axis,
            "models": list(self.models),
            "strategies": list(self.strategies),
            "seed": self.seed,
            "workers": self.workers,
            "train": dict(self.train_overrides),
            "out_dir": str(self.out_dir),
        }
        if self.embeddings_dir is not None:
            out["embeddings_dir"] = str(self.embeddings_dir)
        return out


def validate_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Build a RunConfig from a parsed document, or report every problem."""
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigValidationError("config root must be a JSON object")
    base = Path(base_dir) if base_dir is not None else Path(".")

    version = raw.get("config_version")
    if version != CONFIG_VERSION:
        problems.append(
            f"config_version must be {CONFIG_VERSION}, got {version!r}"
        )
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        problems.append(f"unknown keys: {', '.join(unknown)}")

    datasets = raw.get("datasets")
    paths: list[Path] = []
    if not isinstance(datasets, list) or not datasets:
        problems.append("datasets must be a non-empty list of paths")
    else:
        for entry in datasets:
            p = base / str(entry)
            if not p.exists():
                problems.append(f"dataset path does not exist: {p}")
            paths.append(p)

    scenario = raw.get("scenario", "pooled")
    if scenario not in SCENARIOS:
        problems.append(f"scenario must be one of {SCENARIOS}, got {scenario!r}")

    axis = raw.get("axis", "tissue")
    if axis not in GROUP_AXES:
        problems.append(f"axis must be one of {GROUP_AXES}, got {axis!r}")

    models = raw.get("models")
    if not isinstance(models, list) or not models or not all(
        isinstance(m, str) and m for m in models
    ):
        problems.append("models must be a non-empty list of model ids")
        models = []

    strategies_raw = raw.get("strategies")
    strategies: list[str] = []
    if not isinstance(strategies_raw, list) or not strategies_raw:
        problems.append("strategies must be a non-empty list")
    else:
        for s in strategies_raw:
            canon = STRATEGY_ALIASES.get(str(s))
            if canon is None:
                problems.append(
                    f"unknown strategy {s!r}; choose from "
                    f"{sorted(set(STRATEGY_ALIASES))}"
                )
            elif canon not in strategies:
                strategies.append(canon)

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append(f"seed must be a non-negative integer, got {seed!r}")
        seed = 0

    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
        problems.append(f"workers must be a positive integer, got {workers!r}")
        workers = 1

    train = raw.get("train", {})
    if not isinstance(train, dict):
        problems.append("train must be an object of training overrides")
        train = {}
    else:
        bad = sorted(set(train) - _TRAIN_KEYS)
        if bad:
            problems.append(f"unknown train keys: {', '.join(bad)}")
            train = {k: v for k, v in train.items() if k in _TRAIN_KEYS}

    out_dir = raw.get("out_dir")
    if not isinstance(out_dir, str) or not out_dir:
        problems.append("out_dir must be a non-empty path string")
        out_dir = "runs"

    embeddings_dir = raw.get("embeddings_dir")
    emb_path = None
    if embeddings_dir is not None:
        emb_path = base / str(embeddings_dir)
        if not emb_path.exists():
            problems.append(f"embeddings_dir does not exist: {emb_path}")

    if problems:
        raise ConfigValidationError(
            "invalid run config:\n" + "\n".join(f"  - {p}" for p in problems)
        )
    config = RunConfig(
        datasets=paths,
        scenario=scenario,
        axis=axis,
        models=list(models),
        strategies=strategies,
        out_dir=base / out_dir,
        seed=seed,
        workers=workers,
        train_overrides=dict(train),
        embeddings_dir=emb_path,
    )
    try:
        config.train_config()  # surfaces bad override values now, not mid-run
    except Exception as exc:
        raise ConfigValidationError(f"invalid run config:\n  - train overrides: {exc}")
    return config


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigValidationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise FormatError(f"config file {path} is not valid JSON: {exc}")
    return validate_config(raw, base_dir=path.parent)


def write_config(config: RunConfig, path) -> None:
    Path(path).write_text(
        json.dumps(config.snapshot(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
