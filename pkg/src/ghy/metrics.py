"""Classification metrics and training-time accounting."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

REPORT_COLUMNS = ("Model", "Accuracy", "F1-score", "Recall", "Precision", "AUC", "TT")


@dataclass(frozen=True)
class Confusion:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


def _binary(y, name):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError(f"{name} must contain only 0 and 1")
    return y.astype(bool)


def confusion(y_true, y_pred) -> Confusion:
    t, p = _binary(y_true, "y_true"), _binary(y_pred, "y_pred")
    if len(t) != len(p):
        raise ValueError(f"length mismatch: {len(t)} labels vs {len(p)} predictions")
    return Confusion(int(np.sum(t & p)), int(np.sum(~t & ~p)),
                     int(np.sum(~t & p)), int(np.sum(t & ~p)))


def prf1(c: Confusion):
    """(accuracy, precision, recall, f1); undefined ratios are 0."""
    if c.total <= 0:
        raise ValueError("no scored samples")
    acc = (c.tp + c.tn) / c.total
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return acc, precision, recall, f1


def auc(scores, y_true) -> float:
    """P(score_pos > score_neg) + P(tie)/2, via the Mann-Whitney rank sum."""
    y = _binary(y_true, "y_true")
    s = np.asarray(scores, dtype=np.float64)
    if len(s) != len(y):
        raise ValueError(f"length mismatch: {len(s)} scores vs {len(y)} labels")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes in y_true")
    ranks = rankdata(s)  # ties get average ranks
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    tt_seconds: float = 0.0

    @classmethod
    def from_predictions(cls, y_true, y_pred, scores, tt_seconds=0.0):
        acc, p, r, f1 = prf1(confusion(y_true, y_pred))
        try:
            a = auc(scores, y_true)
        except ValueError:
            a = float("nan")
        return cls(acc, p, r, f1, a, tt_seconds)

    def row(self, model: str, timing=True) -> list[str]:
        """Cells in table order; rates as percentages with two decimals."""
        pct = [f"{100 * v:.2f}" for v in (self.accuracy, self.f1, self.recall,
                                          self.precision, self.auc)]
        return [model, *pct, f"{self.tt_seconds:.2f}" if timing else "-"]


def format_report(rows: list[list[str]], fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(REPORT_COLUMNS) + " |",
                 "|" + "|".join(["---"] + ["---:"] * (len(REPORT_COLUMNS) - 1)) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}; expected csv or markdown")


class Timer:
    """Wall-clock stopwatch; accumulates over repeated ``with`` blocks."""

    def __init__(self):
        self.seconds = 0.0

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds += time.perf_counter() - self._start
        return False


def time_block(op, *args, **kwargs) -> float:
    """Seconds taken by ``op(*args, **kwargs)``."""
    with Timer() as t:
        op(*args, **kwargs)
    return t.seconds
