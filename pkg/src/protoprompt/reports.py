"""Evaluation reports: structure, JSON round-trip, CSV tables, comparisons, plots.

A report keeps three granularities — per-slice records, per-volume scores,
and per-fold scores — so any aggregate can be recomputed from the layer
below it. The full resolved run configuration and seed ride along for
reproducibility. CSV layout: one row per fold plus a closing ``aggregate``
row of mean±std cells, one column per class plus their mean.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import InvalidComparisonError, SchemaVersionError
from .stats import Aggregate, crossval_aggregate, wilcoxon_signed_rank

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SliceRecord:
    fold: int
    class_id: str
    query_scan: str
    slice_index: int
    dice: float
    iou: float


@dataclass(frozen=True)
class VolumeRecord:
    fold: int
    class_id: str
    query_scan: str
    support_scan: str
    dice: float
    iou: float


@dataclass(frozen=True)
class FoldScore:
    fold: int
    class_id: str
    dice: float  # mean of volume-level dice over the fold's query scans
    iou: float
    n_volumes: int


@dataclass(frozen=True)
class EvalReport:
    config: dict
    seed: int
    classes: tuple[str, ...]
    n_folds: int
    fold_scores: tuple[FoldScore, ...]
    volume_records: tuple[VolumeRecord, ...]
    slice_records: tuple[SliceRecord, ...]

    def scores_for(self, class_id: str, metric: str = "dice") -> list[float]:
        """Per-fold scores for one class, ordered by fold index."""
        rows = sorted((f for f in self.fold_scores if f.class_id == class_id), key=lambda f: f.fold)
        return [getattr(f, metric) for f in rows]

    def aggregate(self, class_id: str, metric: str = "dice") -> Aggregate:
        return crossval_aggregate(self.scores_for(class_id, metric), self.n_folds)

    def paired_points(self, metric: str = "dice") -> list[float]:
        """Fold-level scores flattened over (class, fold) in a fixed order —
        the pairing axis for cross-report significance tests."""
        points = []
        for class_id in self.classes:
            points.extend(self.scores_for(class_id, metric))
        return points

    def to_json_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": self.config,
            "seed": self.seed,
            "classes": list(self.classes),
            "n_folds": self.n_folds,
            "fold_scores": [asdict(f) for f in self.fold_scores],
            "volume_records": [asdict(v) for v in self.volume_records],
            "slice_records": [asdict(s) for s in self.slice_records],
        }


_REQUIRED_KEYS = ("schema_version", "config", "seed", "classes", "n_folds", "fold_scores", "volume_records", "slice_records")


def report_from_json_dict(payload: dict) -> EvalReport:
    missing = [k for k in _REQUIRED_KEYS if k not in payload]
    if missing:
        raise SchemaVersionError(f"report is missing required fields {missing}")
    if payload["schema_version"] != REPORT_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"report schema version {payload['schema_version']} != supported {REPORT_SCHEMA_VERSION}"
        )
    return EvalReport(
        config=payload["config"],
        seed=payload["seed"],
        classes=tuple(payload["classes"]),
        n_folds=payload["n_folds"],
        fold_scores=tuple(FoldScore(**f) for f in payload["fold_scores"]),
        volume_records=tuple(VolumeRecord(**v) for v in payload["volume_records"]),
        slice_records=tuple(SliceRecord(**s) for s in payload["slice_records"]),
    )


def persist_report(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    return path


def load_report(path: str | Path) -> EvalReport:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaVersionError(f"report file {path} is not valid JSON: {exc}") from exc
    return report_from_json_dict(payload)


def render_csv(report: EvalReport) -> str:
    """Fold-by-class table: |folds| rows per metric plus one aggregate row."""
    out = io.StringIO()
    classes = list(report.classes)
    out.write("metric,fold," + ",".join(classes) + ",mean\n")
    for metric in ("dice", "iou"):
        per_class = {c: report.scores_for(c, metric) for c in classes}
        for fold in range(report.n_folds):
            cells = []
            for c in classes:
                scores = per_class[c]
                cells.append(f"{scores[fold]:.4f}" if fold < len(scores) else "")
            present = [float(v) for v in cells if v != ""]
            mean = f"{sum(present) / len(present):.4f}" if present else ""
            out.write(f"{metric},{fold}," + ",".join(cells) + f",{mean}\n")
        agg_cells = [report.aggregate(c, metric).cell(digits=4) for c in classes]
        means = [report.aggregate(c, metric).mean for c in classes]
        out.write(f"{metric},aggregate," + ",".join(agg_cells) + f",{sum(means) / len(means):.4f}\n")
    return out.getvalue()


def compare_reports(a: EvalReport, b: EvalReport, metric: str = "dice") -> dict:
    """Paired two-sided signed-rank comparison over (class x fold) fold scores."""
    if a.classes != b.classes or a.n_folds != b.n_folds:
        raise InvalidComparisonError(
            f"reports are not comparable: classes {a.classes} vs {b.classes}, folds {a.n_folds} vs {b.n_folds}"
        )
    x = a.paired_points(metric)
    y = b.paired_points(metric)
    if len(x) != len(y):
        raise InvalidComparisonError(f"paired point counts disagree: {len(x)} vs {len(y)}")
    return {
        "metric": metric,
        "n_points": len(x),
        "mean_a": sum(x) / len(x),
        "mean_b": sum(y) / len(y),
        "p_value": wilcoxon_signed_rank(x, y),
    }


def render_wilcoxon_csv(rows: Sequence[dict]) -> str:
    out = io.StringIO()
    out.write("comparison,n_points,mean_a,mean_b,p_value\n")
    for r in rows:
        out.write(f"{r['comparison']},{r['n_points']},{r['mean_a']:.4f},{r['mean_b']:.4f},{r['p_value']:.6g}\n")
    return out.getvalue()


def plot_class_means(report: EvalReport, path: str | Path, metric: str = "dice") -> Path:
    """Per-class bar chart of fold-mean scores with std error bars."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    aggs = [report.aggregate(c, metric) for c in report.classes]
    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(aggs), 3.2))
    ax.bar(range(len(aggs)), [a.mean for a in aggs], yerr=[a.std for a in aggs], capsize=4, color="#4878cf")
    ax.set_xticks(range(len(aggs)), report.classes)
    ax.set_ylabel(metric)
    ax.set_ylim(0, 1.05)
    ax.set_title(f"per-class {metric} (mean ± std over {report.n_folds} folds)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ablation(rows: Sequence[dict], path: str | Path) -> Path:
    """Bar chart of mean dice per prompt combination."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = ["+".join(r["combo"]) for r in rows]
    fig, ax = plt.subplots(figsize=(1.5 + 1.1 * len(rows), 3.4))
    ax.bar(range(len(rows)), [r["dice"] for r in rows], color="#6aa84f")
    ax.set_xticks(range(len(rows)), names, rotation=20, ha="right")
    ax.set_ylabel("dice")
    ax.set_ylim(0, 1.05)
    ax.set_title("prompt-combination sweep (mean dice)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
