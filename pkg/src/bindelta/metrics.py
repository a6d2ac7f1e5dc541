"""Median angle error and Acc@pi/6, aggregated per category like the result tables."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import so3

ACC_THRESHOLD = np.pi / 6


def angle_error(y_pred, y_star) -> np.ndarray:
    """Geodesic angle (radians) between the rotations of two axis-angle vectors."""
    return so3.geodesic_distance(so3.exp_map(y_pred), so3.exp_map(y_star))


def median(values, interpolate: bool = False) -> float:
    """Lower-middle order statistic, or the usual interpolated median when asked."""
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        return float("nan")
    if interpolate:
        return float(np.median(v))
    return float(v[(len(v) - 1) // 2])


@dataclass
class MetricReport:
    categories: list[str]
    med_err: list[float]
    acc: list[float]
    counts: list[int]
    mean_med_err: float
    mean_acc: float
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def compute_metrics(preds, gts, categories=None, names: dict | None = None,
                    interpolate: bool = False, meta: dict | None = None,
                    threshold: float = ACC_THRESHOLD) -> MetricReport:
    """Per-category MedErr (degrees) and Acc (fraction with error strictly below ``threshold``).

    The "mean" entries are unweighted averages over categories. Categories
    are reported in ascending id order; ``names`` maps ids to column labels.

    Raises:
        ValueError: if the inputs have different lengths.
    """
    preds = np.asarray(preds, dtype=float).reshape(-1, 3)
    gts = np.asarray(gts, dtype=float).reshape(-1, 3)
    cats = np.zeros(len(gts), dtype=int) if categories is None else np.asarray(categories)
    if not (len(preds) == len(gts) == len(cats)):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(gts)} targets, {len(cats)} categories")
    err = angle_error(preds, gts) if len(gts) else np.zeros(0)
    labels, med, acc, counts = [], [], [], []
    for c in np.unique(cats):
        e = err[cats == c]
        labels.append(str(names.get(c, c)) if names else str(c))
        med.append(float(np.degrees(median(e, interpolate))))
        acc.append(float(np.mean(e < threshold)))
        counts.append(int(len(e)))
    return MetricReport(
        categories=labels,
        med_err=med,
        acc=acc,
        counts=counts,
        mean_med_err=float(np.mean(med)) if med else float("nan"),
        mean_acc=float(np.mean(acc)) if acc else float("nan"),
        meta=dict(meta or {}),
    )


def report_csv(report: MetricReport) -> str:
    """Two-row table: header = categories + "mean"; first row MedErr (deg), second Acc."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.categories + ["mean"])
    w.writerow([f"{v:.2f}" for v in report.med_err + [report.mean_med_err]])
    w.writerow([f"{v:.4f}" for v in report.acc + [report.mean_acc]])
    return buf.getvalue()


def emit_report(report: MetricReport, path, fmt: str = "json") -> Path:
    path = Path(path)
    if fmt == "json":
        path.write_text(report.to_json())
    elif fmt == "csv":
        path.write_text(report_csv(report))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def read_report_csv(path) -> MetricReport:
    """Parse a table written by :func:`report_csv`; the stored mean column is kept as-is."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, med_row, acc_row = rows[0], rows[1], rows[2]
    if header[-1] != "mean" or not (len(header) == len(med_row) == len(acc_row)):
        raise ValueError(f"{path}: malformed report table")
    return MetricReport(
        categories=header[:-1],
        med_err=[float(v) for v in med_row[:-1]],
        acc=[float(v) for v in acc_row[:-1]],
        counts=[],
        mean_med_err=float(med_row[-1]),
        mean_acc=float(acc_row[-1]),
    )


def reference_table_path() -> Path:
    return Path(__file__).parent / "fixtures" / "mg_plus_table.csv"
