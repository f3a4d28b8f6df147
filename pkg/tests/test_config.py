"""Run-config validation, snapshots, and file round trips."""

import json

import pytest

from cellrx.config import (
    CONFIG_VERSION,
    RunConfig,
    load_config,
    validate_config,
    write_config,
)
from cellrx.errors import ConfigValidationError, FormatError


@pytest.fixture
def workspace(tmp_path):
    for name in ("a.json", "b.json"):
        (tmp_path / name).write_text("{}")
    return tmp_path


def _raw(**overrides):
    raw = {
        "config_version": CONFIG_VERSION,
        "datasets": ["a.json", "b.json"],
        "models": ["toy_scfm"],
        "strategies": ["frozen"],
        "out_dir": "runs",
    }
    raw.update(overrides)
    return raw


def test_minimal_config_fills_defaults(workspace):
    config = validate_config(_raw(), base_dir=workspace)
    assert config.scenario == "pooled"
    assert config.axis == "tissue"
    assert config.seed == 0
    assert config.workers == 1
    assert config.train_overrides == {}
    assert config.embeddings_dir is None
    assert config.datasets == [workspace / "a.json", workspace / "b.json"]
    assert config.out_dir == workspace / "runs"


def test_every_problem_reported_in_one_pass(workspace):
    raw = {
        "config_version": 99,
        "typo_key": 1,
        "datasets": ["a.json", "missing.json"],
        "scenario": "leaveout",
        "axis": "organ",
        "models": [],
        "strategies": ["frozen", "zap"],
        "seed": -3,
        "workers": 0,
        "train": {"epochs": 2, "momentum": 0.9},
        "out_dir": "",
    }
    with pytest.raises(ConfigValidationError) as err:
        validate_config(raw, base_dir=workspace)
    text = str(err.value)
    assert text.startswith("invalid run config:\n")
    lines = [l for l in text.split("\n") if l.startswith("  - ")]
    assert len(lines) == 11
    for needle in (
        "config_version must be 1", "typo_key", "missing.json", "leaveout",
        "organ", "models must be", "'zap'", "seed must be",
        "workers must be", "momentum", "out_dir must be",
    ):
        assert needle in text, needle


def test_strategy_aliases_canonicalize_and_dedup(workspace):
    config = validate_config(
        _raw(strategies=["finetune", "finetuned", "frozen", "frozen"]),
        base_dir=workspace,
    )
    assert config.strategies == ["finetuned", "frozen"]


@pytest.mark.parametrize("key,value", [("seed", True), ("workers", True)])
def test_bools_are_not_integers(workspace, key, value):
    with pytest.raises(ConfigValidationError, match=key):
        validate_config(_raw(**{key: value}), base_dir=workspace)


def test_embeddings_dir_must_exist(workspace):
    with pytest.raises(ConfigValidationError, match="embeddings_dir"):
        validate_config(_raw(embeddings_dir="vectors"), base_dir=workspace)
    (workspace / "vectors").mkdir()
    config = validate_config(_raw(embeddings_dir="vectors"), base_dir=workspace)
    assert config.embeddings_dir == workspace / "vectors"


def test_bad_train_override_values_surface_at_validation(workspace):
    raw = _raw(train={"learning_rate": -1.0})
    with pytest.raises(ConfigValidationError, match="train overrides"):
        validate_config(raw, base_dir=workspace)


def test_train_config_merges_overrides(workspace):
    raw = _raw(seed=7, train={"epochs": 5, "betas": [0.8, 0.9]})
    config = validate_config(raw, base_dir=workspace)
    tc = config.train_config(batch_size=16)
    assert tc.seed == 7
    assert tc.epochs == 5
    assert tc.batch_size == 16
    assert tc.betas == (0.8, 0.9)


def test_snapshot_revalidates_to_same_config(workspace):
    raw = _raw(seed=3, workers=2, scenario="cross", axis="therapy",
               train={"epochs": 4})
    first = validate_config(raw, base_dir=workspace)
    second = validate_config(first.snapshot(), base_dir=workspace)
    assert first == second


def test_config_file_round_trip_is_stable(workspace):
    config = validate_config(_raw(seed=5), base_dir=workspace)
    path = workspace / "run.json"
    write_config(config, path)
    loaded = load_config(path)
    assert loaded == config
    first_bytes = path.read_bytes()
    write_config(loaded, path)
    assert path.read_bytes() == first_bytes
    assert json.loads(first_bytes)["config_version"] == CONFIG_VERSION


def test_load_config_failures(tmp_path):
    with pytest.raises(ConfigValidationError, match="not found"):
        load_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(FormatError, match="not valid JSON"):
        load_config(bad)


def test_root_must_be_object():
    with pytest.raises(ConfigValidationError, match="JSON object"):
        validate_config(["not", "a", "dict"])