"""Throughput records, step planning, and the profiling loop."""

import math

import numpy as np
import pytest

from cellrx.data import SyntheticSpec, synthesize_dataset
from cellrx.encoder import ToyEncoderConfig, init_encoder
from cellrx.errors import ConsistencyError, ParameterError
from cellrx.mlp import TrainConfig
from cellrx.pipelines import FrozenToyPipeline
from cellrx.profiling import (
    PROFILE_COLUMNS,
    ProfileRecord,
    hardware_descriptor,
    planned_steps,
    profile,
    profile_row,
)


class StubPipeline:
    """Fixed-cost tasks; counts are scripted so repeats can disagree."""

    model_id = "stub"

    def __init__(self, train_counts=(5,), infer_counts=(2,)):
        self._train = list(train_counts)
        self._infer = list(infer_counts)
        self.train_calls = 0
        self.infer_calls = 0

    def training_task(self, dataset):
        def run():
            i = min(self.train_calls, len(self._train) - 1)
            self.train_calls += 1
            return self._train[i]
        return run

    def inference_task(self, dataset):
        def run():
            i = min(self.infer_calls, len(self._infer) - 1)
            self.infer_calls += 1
            return self._infer[i]
        return run


# ------------------------------------------------------------------ records


def test_record_accepts_consistent_speed():
    rec = ProfileRecord("m", "training", 120, 2.0, 60.0)
    assert rec.speed == 60.0


def test_record_rejects_inconsistent_speed():
    with pytest.raises(ConsistencyError, match="disagrees"):
        ProfileRecord("m", "training", 120, 2.0, 61.0)


def test_record_identity_holds_over_random_draws():
    rng = np.random.default_rng(0)
    for _ in range(500):
        iterations = int(rng.integers(1, 1_000_000))
        seconds = float(rng.uniform(1e-3, 50.0))
        rec = ProfileRecord.measure("m", "inference", iterations, seconds)
        assert abs(rec.speed * rec.seconds - rec.iterations) <= 1e-6 * rec.iterations
        with pytest.raises(ConsistencyError):
            ProfileRecord("m", "inference", iterations, seconds,
                          rec.speed * (1.0 + 1e-6) + 1e-12)


def test_record_field_validation():
    with pytest.raises(ParameterError, match="phase"):
        ProfileRecord("m", "embedding", 1, 1.0, 1.0)
    with pytest.raises(ParameterError, match="iterations"):
        ProfileRecord("m", "training", 0, 1.0, 0.0)
    with pytest.raises(ParameterError, match="seconds"):
        ProfileRecord("m", "training", 1, 0.0, 1.0)


# ------------------------------------------------------------------ planning


def test_planned_steps_matches_loop_count():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(1, 400))
        b = int(rng.integers(1, 70))
        epochs = int(rng.integers(1, 6))
        cap = int(rng.integers(1, 40)) if rng.random() < 0.5 else None

        steps = 0
        for _ in range(epochs):
            for _start in range(0, n, b):
                if cap is not None and steps >= cap:
                    break
                steps += 1
        assert planned_steps(n, b, epochs, max_steps=cap) == steps


def test_planned_steps_edges():
    assert planned_steps(10, 64, 3) == 3
    assert planned_steps(65, 64, 2) == 4
    assert planned_steps(65, 64, 2, max_steps=3) == 3
    assert planned_steps(65, 64, 2, max_steps=400) == 4
    for bad in [(0, 1, 1), (1, 0, 1), (1, 1, 0)]:
        with pytest.raises(ParameterError):
            planned_steps(*bad)


# ------------------------------------------------------------------- profile


def test_profile_runs_each_phase_repeats_times():
    pipe = StubPipeline(train_counts=(7,), infer_counts=(3,))
    dataset = object()
    training, inference = profile(pipe, dataset, repeats=5)
    assert pipe.train_calls == 5
    assert pipe.infer_calls == 5
    assert (training.phase, inference.phase) == ("training", "inference")
    assert training.iterations == 7
    assert inference.iterations == 3
    assert training.model_id == inference.model_id == "stub"
    assert training.speed == training.iterations / training.seconds


def test_profile_requires_three_repeats():
    with pytest.raises(ParameterError, match="repeats"):
        profile(StubPipeline(), object(), repeats=2)


def test_profile_rejects_nondeterministic_iteration_counts():
    pipe = StubPipeline(train_counts=(5, 5, 6))
    with pytest.raises(ConsistencyError, match="deterministic"):
        profile(pipe, object())


def test_profile_toy_pipeline_reports_planned_work():
    dataset = synthesize_dataset(SyntheticSpec(32, 12, "linear", seed=0))
    config = TrainConfig(hidden1=8, hidden2=4, epochs=2, batch_size=16,
                         max_steps=3)
    encoder = init_encoder(ToyEncoderConfig(
        vocab_size=len(dataset.vocabulary) + 4, d_model=16, max_len=32, seed=0))
    pipe = FrozenToyPipeline(encoder, "toy_scfm", train_config=config)
    training, inference = profile(pipe, dataset)
    assert training.iterations == planned_steps(32, 16, 2, max_steps=3)
    # inference batching is fixed at the embed default, not the train config
    assert inference.iterations == math.ceil(32 / 64)
    assert abs(training.speed * training.seconds - training.iterations) \
        <= 1e-6 * training.iterations


# --------------------------------------------------------------------- rows


def test_profile_row_layout():
    training = ProfileRecord.measure("toy_scfm", "training", 10, 0.5)
    inference = ProfileRecord.measure("toy_scfm", "inference", 4, 0.25)
    row = profile_row(training, inference, parameters=1234, output_dim=256)
    assert tuple(row) == ("model_id",) + PROFILE_COLUMNS
    assert row["model_id"] == "toy_scfm"
    assert row["parameters"] == 1234
    assert row["output_dim"] == 256
    assert row["training_speed"] == training.speed
    assert row["inference_seconds"] == inference.seconds


def test_profile_row_cross_checks_records():
    training = ProfileRecord.measure("a", "training", 10, 0.5)
    inference = ProfileRecord.measure("b", "inference", 4, 0.25)
    with pytest.raises(ConsistencyError, match="different models"):
        profile_row(training, inference, 1, 1)
    same = ProfileRecord.measure("a", "inference", 4, 0.25)
    with pytest.raises(ParameterError):
        profile_row(same, training.__class__.measure("a", "training", 1, 1.0), 1, 1)


def test_hardware_descriptor_is_informative():
    desc = hardware_descriptor()
    assert set(desc) == {"machine", "processor", "system", "python", "numpy"}
    assert all(isinstance(v, str) and v for v in desc.values())