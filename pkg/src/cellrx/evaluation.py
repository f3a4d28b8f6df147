"""Splits, metrics, and the pooled / cross-data evaluation scenarios.

Pooled evaluation concatenates every dataset in a category group and runs
k-fold cross-validation with one SplitPlan shared by every model and
strategy. Cross-data evaluation is leave-one-study-out within the group.
All metrics derive from thresholded confusion counts except AUROC, which is
the probability-of-correct-ranking statistic with half credit for ties.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, ParameterError, UndefinedMetricError
from .rng import make_rng
from .validation import as_binary_labels, as_probabilities, check_consistent_length

DEFAULT_THRESHOLD = 0.5


@dataclass
class SplitPlan:
    """Deterministic fold assignment; compared by value across pipelines."""

    n: int
    k: int
    seed: int
    fold_assignment: np.ndarray

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SplitPlan)
            and (self.n, self.k, self.seed) == (other.n, other.k, other.seed)
            and np.array_equal(self.fold_assignment, other.fold_assignment)
        )

    def test_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.fold_assignment == fold)[0]

    def train_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.fold_assignment != fold)[0]


def make_kfold(n: int, k: int = 10, seed: int = 0, labels=None) -> SplitPlan:
    """Random folds; the first n % k folds take the extra index.

    With ``labels`` given, folds are stratified per class while keeping the
    size invariant (fold sizes differ by at most 1).
    """
    if k < 2:
        raise ParameterError(f"k must be >= 2, got {k}")
    if n < k:
        raise ParameterError(f"cannot make {k} folds from {n} items")
    rng = make_rng(seed, 31)
    assignment = np.empty(n, dtype=np.int64)
    if labels is None:
        perm = rng.permutation(n)
        sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
        start = 0
        for fold, size in enumerate(sizes):
            assignment[perm[start : start + size]] = fold
            start += size
    else:
        labels = as_binary_labels(labels, "labels")
        if len(labels) != n:
            raise ParameterError(f"labels length {len(labels)} does not match n={n}")
        # Deal each class around the folds, rotating the starting fold so
        # remainders spread instead of piling onto fold 0.
        offset = 0
        for cls in (0, 1):
            idx = np.nonzero(labels == cls)[0]
            perm = idx[rng.permutation(len(idx))]
            assignment[perm] = (np.arange(len(perm)) + offset) % k
            offset += len(perm)
    return SplitPlan(n, k, seed, assignment)


@dataclass
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auroc: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    tpr: float
    fpr: float
    n: int

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auroc": self.auroc,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "tpr": self.tpr,
            "fpr": self.fpr,
            "n": self.n,
        }


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties 0.5).

    Computed by a sort-and-average-ranks sweep, which equals the pairwise
    definition exactly in rational arithmetic.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = as_binary_labels(labels, "labels")
    check_consistent_length(scores=scores, labels=labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC undefined: test set has {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_metrics(probs, labels, threshold: float = DEFAULT_THRESHOLD) -> MetricSet:
    """Confusion counts at the threshold plus ranking quality.

    Zero-denominator conventions: precision/recall/F1 fall back to 0; AUROC
    is None (undefined) when only one class is present, never silently 0.
    """
    probs = as_probabilities(probs, "probs")
    labels = as_binary_labels(labels, "labels")
    check_consistent_length(probs=probs, labels=labels)
    if len(labels) == 0:
        raise ParameterError("cannot compute metrics on an empty test set")

    preds = probs >= threshold
    pos = labels == 1
    tp = int(np.sum(preds & pos))
    fp = int(np.sum(preds & ~pos))
    fn = int(np.sum(~preds & pos))
    tn = int(np.sum(~preds & ~pos))
    n = len(labels)

    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    accuracy = (tp + tn) / n
    fpr = fp / (fp + tn) if fp + tn > 0 else 0.0
    try:
        area = auroc(probs, labels)
    except UndefinedMetricError:
        area = None
    return MetricSet(accuracy, precision, recall, f1, area, tp, fp, tn, fn, recall, fpr, n)


@dataclass(frozen=True)
class Scenario:
    variant: str  # "pooled" | "cross_data"
    category_axis: str
    category_value: str
    held_out_study: str | None = None


@dataclass
class ResultRecord:
    model_id: str
    strategy: str
    scenario: Scenario
    split_id: str
    metrics: MetricSet
    seconds: float

    def as_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "strategy": self.strategy,
            "variant": self.scenario.variant,
            "category_axis": self.scenario.category_axis,
            "category_value": self.scenario.category_value,
            "held_out_study": self.scenario.held_out_study,
            "split_id": self.split_id,
            "seconds": self.seconds,
            **self.metrics.as_dict(),
        }


def _run_splits(pipeline, labels, jobs, workers: int):
    """Run (tag, scenario, train_idx, test_idx) jobs, preserving job order."""

    def one(job):
        tag, scenario, train_idx, test_idx = job
        start = time.perf_counter()
        probs = pipeline.run_split(train_idx, test_idx, tag)
        seconds = time.perf_counter() - start
        metrics = compute_metrics(probs, labels[test_idx])
        return ResultRecord(pipeline.model_id, pipeline.strategy, scenario, tag, metrics, seconds)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, jobs))
    else:
        records = [one(job) for job in jobs]
    return records


def pooled_evaluate(group, pipeline, k: int = 10, seed: int = 0,
                    stratified: bool = False, workers: int = 1) -> list[ResultRecord]:
    """k-fold cross-validation over the concatenated category group."""
    labels = pipeline.prepare(group.datasets)
    n = len(labels)
    if len(np.unique(labels)) < 2:
        raise DegenerateDataError(
            f"pooled group {group.value!r} contains a single class; cannot evaluate"
        )
    plan = make_kfold(n, k, seed, labels=labels if stratified else None)
    scenario = Scenario("pooled", group.axis, group.value)
    jobs = [
        (f"fold-{fold}", scenario, plan.train_indices(fold), plan.test_indices(fold))
        for fold in range(k)
    ]
    return _run_splits(pipeline, labels, jobs, workers)


def cross_evaluate(group, pipeline, seed: int = 0, workers: int = 1) -> list[ResultRecord]:
    """Leave-one-study-out within the category group."""
    if len(group.datasets) < 2:
        raise ParameterError(
            f"cross-data evaluation needs >= 2 studies in group {group.value!r}, "
            f"got {len(group.datasets)}"
        )
    labels = pipeline.prepare(group.datasets)
    study_of_cell = pipeline.study_ids
    jobs = []
    for ds in group.datasets:
        study = ds.manifest.study_id
        test_idx = np.nonzero(study_of_cell == study)[0]
        train_idx = np.nonzero(study_of_cell != study)[0]
        scenario = Scenario("cross_data", group.axis, group.value, held_out_study=study)
        jobs.append((study, scenario, train_idx, test_idx))
    return _run_splits(pipeline, labels, jobs, workers)


METRIC_COLUMNS = ("f1", "auroc", "accuracy", "precision", "recall")


@dataclass
class SummaryRow:
    model_id: str
    strategy: str
    variant: str
    category_axis: str
    category_value: str
    n_records: int
    stats: dict  # metric -> {"mean": float|None, "std": float|None, "n_defined": int}

    def as_dict(self) -> dict:
        out = {
            "model_id": self.model_id,
            "strategy": self.strategy,
            "variant": self.variant,
            "category_axis": self.category_axis,
            "category_value": self.category_value,
            "n_records": self.n_records,
        }
        for metric in METRIC_COLUMNS:
            entry = self.stats[metric]
            out[f"{metric}_mean"] = entry["mean"]
            out[f"{metric}_std"] = entry["std"]
            out[f"{metric}_n_defined"] = entry["n_defined"]
        return out


def aggregate(records: list[ResultRecord]) -> list[SummaryRow]:
    """Mean and population std per (model, strategy, scenario, category).

    Undefined AUROC values are excluded from the mean and counted via
    n_defined so degenerate folds stay visible instead of skewing scores.
    """
    if not records:
        raise ParameterError("cannot aggregate zero records")
    groups: dict[tuple, list[ResultRecord]] = {}
    for rec in records:
        key = (
            rec.model_id,
            rec.strategy,
            rec.scenario.variant,
            rec.scenario.category_axis,
            rec.scenario.category_value,
        )
        groups.setdefault(key, []).append(rec)

    rows = []
    for key in sorted(groups):
        recs = groups[key]
        stats = {}
        for metric in METRIC_COLUMNS:
            values = [getattr(r.metrics, metric) for r in recs]
            defined = [v for v in values if v is not None]
            if defined:
                arr = np.asarray(defined, dtype=np.float64)
                stats[metric] = {
                    "mean": float(arr.mean()),
                    "std": float(arr.std()),
                    "n_defined": len(defined),
                }
            else:
                stats[metric] = {"mean": None, "std": None, "n_defined": 0}
        rows.append(SummaryRow(*key, len(recs), stats))
    return rows
