"""Run-directory reporting: records on disk, summary tables, plot series.

Summaries carry mean and standard deviation per metric, matching
aggregate() exactly. All report files are byte-stable for a fixed set of
records; wall-clock timings stay out of summary outputs so reruns of the
same seed produce identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import EvaluationError, FormatError
from .evaluation import (
    METRIC_COLUMNS,
    MetricSet,
    ResultRecord,
    Scenario,
    SummaryRow,
    aggregate,
)

RECORDS_NAME = "records.json"

REPORT_FORMATS = ("csv", "structured", "plotdata")


def record_to_dict(record: ResultRecord) -> dict:
    m = record.metrics
    return {
        "model_id": record.model_id,
        "strategy": record.strategy,
        "variant": record.scenario.variant,
        "category_axis": record.scenario.category_axis,
        "category_value": record.scenario.category_value,
        "held_out_study": record.scenario.held_out_study,
        "split_id": record.split_id,
        "seconds": record.seconds,
        "metrics": {
            "accuracy": m.accuracy, "precision": m.precision,
            "recall": m.recall, "f1": m.f1, "auroc": m.auroc,
            "tp": m.tp, "fp": m.fp, "tn": m.tn, "fn": m.fn,
            "tpr": m.tpr, "fpr": m.fpr, "n": m.n,
        },
    }


def record_from_dict(raw: dict) -> ResultRecord:
    try:
        metrics = MetricSet(**raw["metrics"])
        scenario = Scenario(
            variant=raw["variant"],
            category_axis=raw["category_axis"],
            category_value=raw["category_value"],
            held_out_study=raw.get("held_out_study"),
        )
        return ResultRecord(
            model_id=raw["model_id"],
            strategy=raw["strategy"],
            scenario=scenario,
            split_id=raw["split_id"],
            metrics=metrics,
            seconds=raw["seconds"],
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed result record: {exc}")


def save_records(records: list[ResultRecord], run_dir) -> Path:
    path = Path(run_dir) / RECORDS_NAME
    payload = [record_to_dict(r) for r in records]
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def load_records(run_dir) -> list[ResultRecord]:
    path = Path(run_dir) / RECORDS_NAME
    if not path.exists():
        raise EvaluationError(f"no {RECORDS_NAME} under {run_dir}; run an evaluation first")
    raw = json.loads(path.read_text(encoding="utf-8"))
    return [record_from_dict(entry) for entry in raw]


def _fmt(value) -> str:
    """Shortest round-trip decimal; empty cell for undefined values."""
    if value is None:
        return ""
    return repr(float(value))


def summary_csv(rows: list[SummaryRow]) -> str:
    header = ["model_id", "strategy", "variant", "category_axis",
              "category_value", "n_records"]
    for metric in METRIC_COLUMNS:
        header.extend([f"{metric}_mean", f"{metric}_std"])
    lines = [",".join(header)]
    for row in rows:
        cells = [row.model_id, row.strategy, row.variant, row.category_axis,
                 row.category_value, str(row.n_records)]
        for metric in METRIC_COLUMNS:
            stat = row.stats[metric]
            cells.extend([_fmt(stat["mean"]), _fmt(stat["std"])])
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def summary_structured(rows: list[SummaryRow]) -> str:
    payload = [
        {
            "model_id": row.model_id,
            "strategy": row.strategy,
            "variant": row.variant,
            "category_axis": row.category_axis,
            "category_value": row.category_value,
            "n_records": row.n_records,
            "metrics": row.stats,
        }
        for row in rows
    ]
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def plotdata(rows: list[SummaryRow]) -> dict:
    """Series ready for bar and radar rendering by any plotting tool.

    Bars: one entry per (row, metric) with mean and std (the error bar).
    Radar: per (axis, variant, metric), category values in sorted order on
    the spokes and one series per model/strategy.
    """
    bars = []
    for row in rows:
        for metric in METRIC_COLUMNS:
            stat = row.stats[metric]
            bars.append({
                "model_id": row.model_id,
                "strategy": row.strategy,
                "variant": row.variant,
                "category_axis": row.category_axis,
                "category_value": row.category_value,
                "metric": metric,
                "mean": stat["mean"],
                "std": stat["std"],
            })

    radar: dict = {}
    wheels = sorted({(r.category_axis, r.variant) for r in rows})
    for axis, variant in wheels:
        subset = [r for r in rows if r.category_axis == axis and r.variant == variant]
        spokes = sorted({r.category_value for r in subset})
        series = []
        for model_id, strategy in sorted({(r.model_id, r.strategy) for r in subset}):
            by_value = {
                r.category_value: r for r in subset
                if r.model_id == model_id and r.strategy == strategy
            }
            for metric in METRIC_COLUMNS:
                values = [
                    by_value[v].stats[metric]["mean"] if v in by_value else None
                    for v in spokes
                ]
                series.append({
                    "model_id": model_id,
                    "strategy": strategy,
                    "metric": metric,
                    "values": values,
                })
        radar[f"{axis}/{variant}"] = {"spokes": spokes, "series": series}

    return {"bars": bars, "radar": radar}


def write_report(run_dir, fmt: str) -> list[Path]:
    """Render records under run_dir into the requested format."""
    if fmt not in REPORT_FORMATS:
        raise FormatError(f"format must be one of {REPORT_FORMATS}, got {fmt!r}")
    run_dir = Path(run_dir)
    records = load_records(run_dir)
    if not records:
        raise EvaluationError(f"{run_dir} contains no result records")
    rows = aggregate(records)
    written = []
    if fmt == "csv":
        path = run_dir / "summary.csv"
        path.write_text(summary_csv(rows), encoding="utf-8")
        written.append(path)
    elif fmt == "structured":
        path = run_dir / "summary.json"
        path.write_text(summary_structured(rows), encoding="utf-8")
        written.append(path)
    else:
        path = run_dir / "plotdata.json"
        path.write_text(json.dumps(plotdata(rows), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        written.append(path)
    return written
