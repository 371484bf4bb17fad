"""End-to-end health tracking: simulate test days, classify, score, write CSVs."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .. import inner
from ..sampling import RngStream, stream_id
from .data import Person
from .metrics import ClassMetrics, ConfusionMatrix3, class_metrics, discretize, evaluate, overall_accuracy
from .model import HEALTH_SOLVER, DayResult, HealthModelParams, simulate_day

log = logging.getLogger(__name__)

METRIC_FIELDS = ("accuracy", "precision", "recall", "specificity", "f1")


@dataclass
class PersonReport:
    user_id: int
    days: Dict[int, DayResult]
    confusion: ConfusionMatrix3
    metrics: List[ClassMetrics]


@dataclass
class HealthReport:
    persons: List[PersonReport]
    confusion: ConfusionMatrix3          # pooled over persons
    metrics: List[ClassMetrics]          # per-person metrics averaged over persons
    accuracy: Optional[float]            # pooled share of correctly classified points
    diagnostics: dict = field(default_factory=dict)


def day_classes(res: DayResult, params: HealthModelParams):
    """Predicted and true classes at nodes 1..S (the updated states)."""
    return discretize(res.x_true[1:], params.thresholds), discretize(res.x_pred[1:], params.thresholds)


def average_metrics(per_person: Sequence[List[ClassMetrics]]) -> List[ClassMetrics]:
    """Mean over persons of each defined value; ``None`` if no person defines it."""
    out = []
    for c in range(3):
        vals = {}
        for name in METRIC_FIELDS:
            xs = [getattr(m[c], name) for m in per_person if getattr(m[c], name) is not None]
            vals[name] = float(np.mean(xs)) if xs else None
        out.append(ClassMetrics(c, **vals))
    return out


def run_health(people: Sequence[Person], test_days: Sequence[int], seed: int = 0,
               params: HealthModelParams = HealthModelParams(),
               solver_config: inner.SolverConfig = HEALTH_SOLVER,
               redraw: bool = True, steps: Optional[int] = None) -> HealthReport:
    """Track every ``(person, test day)`` and score the discretised states."""
    reports = []
    diag = {"inner_solves": 0, "inner_unconverged": 0, "max_kkt_residual": 0.0}
    for person in people:
        uid = person.profile.user_id
        days = {}
        cm = ConfusionMatrix3(np.zeros((3, 3)))
        for d in test_days:
            stream = RngStream(seed, stream_id("health", uid, int(d)))
            res = simulate_day(person.data, int(d), params, solver_config, stream, redraw, steps=steps)
            days[int(d)] = res
            for k in ("inner_solves", "inner_unconverged"):
                diag[k] += res.diagnostics[k]
            diag["max_kkt_residual"] = max(diag["max_kkt_residual"], res.diagnostics["max_kkt_residual"])
            cm = cm + evaluate(*day_classes(res, params))[0]
            log.info("user %d day %d done", uid, d)
        reports.append(PersonReport(uid, days, cm, class_metrics(cm)))
    pooled = ConfusionMatrix3(sum(r.confusion.counts for r in reports))
    if diag["inner_unconverged"]:
        log.info("%d of %d inner solves stopped at max_iter", diag["inner_unconverged"], diag["inner_solves"])
    return HealthReport(reports, pooled, average_metrics([r.metrics for r in reports]),
                        overall_accuracy(pooled), diag)


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_metrics_csv(metrics: Sequence[ClassMetrics], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("class",) + METRIC_FIELDS)
        for m in metrics:
            w.writerow([m.cls] + [_fmt(getattr(m, f)) for f in METRIC_FIELDS])


def write_confusion_csv(cm: ConfusionMatrix3, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true_class", "pred_0", "pred_1", "pred_2"])
        for i in range(3):
            w.writerow([i] + [int(v) for v in cm.counts[i]])


def write_day_csv(res: DayResult, params: HealthModelParams, path):
    cp = discretize(res.x_pred, params.thresholds)
    ct = discretize(res.x_true, params.thresholds)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["nu", "t", "x_pred", "x_true", "class_pred", "class_true"])
        for k in range(len(res.nu)):
            w.writerow([int(res.nu[k]), repr(float(res.t[k])), repr(float(res.x_pred[k])),
                        repr(float(res.x_true[k])), int(cp[k]), int(ct[k])])


def write_report(report: HealthReport, outdir, params: HealthModelParams = HealthModelParams()) -> List[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for r in report.persons:
        p = outdir / f"confusion_user{r.user_id}.csv"
        write_confusion_csv(r.confusion, p)
        q = outdir / f"metrics_user{r.user_id}.csv"
        write_metrics_csv(r.metrics, q)
        paths += [p, q]
        for d, res in r.days.items():
            t = outdir / f"trajectory_user{r.user_id}_day{d}.csv"
            write_day_csv(res, params, t)
            paths.append(t)
    p = outdir / "confusion.csv"
    write_confusion_csv(report.confusion, p)
    q = outdir / "metrics.csv"
    write_metrics_csv(report.metrics, q)
    return paths + [p, q]
