"""Relative error metrics and their median / percentile summaries."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, ShapeMismatch, ZeroReference

METRICS = ("rel_l1", "rel_l2", "rel_linf")


@dataclass(frozen=True)
class ErrorRecord:
    run_id: int
    test_fn_id: int
    rel_l1: float
    rel_l2: float
    rel_linf: float


def rel_errors(f_hat, f_true, weights) -> tuple[float, float, float]:
    """Weighted relative L1 and L2 errors and the unweighted relative max error."""
    f_hat = np.asarray(f_hat, dtype=np.float64).ravel()
    f_true = np.asarray(f_true, dtype=np.float64).ravel()
    w = np.asarray(weights, dtype=np.float64).ravel()
    if not f_hat.shape == f_true.shape == w.shape:
        raise ShapeMismatch(f"lengths differ: {f_hat.shape}, {f_true.shape}, {w.shape}")
    diff = f_hat - f_true
    ref = (w @ np.abs(f_true), np.sqrt(w @ f_true ** 2), np.abs(f_true).max(initial=0.0))
    if min(ref) <= 0.0:
        raise ZeroReference("reference function vanishes in at least one norm")
    err = (w @ np.abs(diff), np.sqrt(w @ diff ** 2), np.abs(diff).max())
    return tuple(float(e / r) for e, r in zip(err, ref))


def error_records(f_hat_rows, f_true_rows, weights, run_id: int = 0) -> list[ErrorRecord]:
    """One record per row (test function)."""
    return [ErrorRecord(run_id, i, *rel_errors(a, b, weights))
            for i, (a, b) in enumerate(zip(np.atleast_2d(f_hat_rows), np.atleast_2d(f_true_rows)))]


@dataclass(frozen=True)
class Summary:
    metric: str
    median: float
    p10: float
    p90: float


def aggregate(records: list[ErrorRecord], by: str = "per_sample") -> dict[str, Summary]:
    """Median and 10/90 percentiles (linear interpolation) of each metric.

    ``per_run`` first averages each run's test functions, then summarizes the
    run means; ``per_sample`` pools every record.
    """
    if not records:
        raise EmptyInput("no error records to aggregate")
    if by not in ("per_run", "per_sample"):
        raise ValueError(f"unknown aggregation {by!r}")
    out = {}
    for metric in METRICS:
        if by == "per_sample":
            values = np.array([getattr(r, metric) for r in records])
        else:
            runs: dict[int, list[float]] = {}
            for r in records:
                runs.setdefault(r.run_id, []).append(getattr(r, metric))
            values = np.array([np.mean(runs[k]) for k in sorted(runs)])
        p10, med, p90 = np.percentile(values, [10, 50, 90], method="linear")
        out[metric] = Summary(metric, float(med), float(p10), float(p90))
    return out


def write_summary_csv(path, example_id: str, summaries: dict[str, dict[str, Summary]]) -> None:
    """``summaries`` maps protocol name to the output of :func:`aggregate`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "protocol", "metric", "median", "p10", "p90"])
        for protocol, table in summaries.items():
            for metric in METRICS:
                s = table[metric]
                writer.writerow([example_id, protocol, metric, repr(s.median), repr(s.p10), repr(s.p90)])


def write_records_csv(path, records: list[ErrorRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "test_fn_id", *METRICS])
        for r in records:
            writer.writerow([r.run_id, r.test_fn_id, repr(r.rel_l1), repr(r.rel_l2), repr(r.rel_linf)])
