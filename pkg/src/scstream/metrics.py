"""External clustering metrics computed from a contingency table.

Conventions for degenerate inputs (so every metric is a total function):

* ARI: when the adjusted denominator vanishes, 1.0 if the partitions are
  identical up to relabeling, else 0.0.
* NMI uses the geometric mean of the two entropies.  If either entropy is
  zero the result is 1.0 for identical partitions, else 0.0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # predicted cluster x true class

    @classmethod
    def from_labels(cls, pred, truth) -> "ContingencyTable":
        pred, truth = _check(pred, truth)
        _, pi = np.unique(pred, return_inverse=True)
        _, ti = np.unique(truth, return_inverse=True)
        table = np.zeros((pi.max(initial=-1) + 1, ti.max(initial=-1) + 1), dtype=np.int64)
        np.add.at(table, (pi, ti), 1)
        return cls(table)

    @property
    def rows(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def cols(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def _check(pred, truth, min_len: int = 1):
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise InputError(f"label arrays differ in length: {pred.size} vs {truth.size}")
    if pred.size < min_len:
        raise InputError(f"need at least {min_len} labels, got {pred.size}")
    return pred, truth


def _comb2(x):
    x = np.asarray(x, dtype=np.int64)
    return x * (x - 1) // 2


def _identical(table: ContingencyTable) -> bool:
    c = table.counts
    return bool(np.all((c > 0).sum(axis=0) == 1) and np.all((c > 0).sum(axis=1) == 1))


def ari(pred, truth) -> float:
    _check(pred, truth, 2)
    table = ContingencyTable.from_labels(pred, truth)
    index = int(_comb2(table.counts).sum())
    a = int(_comb2(table.rows).sum())
    b = int(_comb2(table.cols).sum())
    total = int(_comb2(table.n))
    expected = a * b / total
    max_index = (a + b) / 2
    denom = max_index - expected
    if denom == 0:
        return 1.0 if _identical(table) else 0.0
    return float((index - expected) / denom)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(pred, truth) -> float:
    _check(pred, truth, 1)
    table = ContingencyTable.from_labels(pred, truth)
    n = table.n
    h_pred = _entropy(table.rows, n)
    h_true = _entropy(table.cols, n)
    if h_pred == 0 or h_true == 0:
        return 1.0 if _identical(table) else 0.0
    c = table.counts
    nz = c > 0
    outer = np.outer(table.rows, table.cols)
    mi = float(np.sum(c[nz] / n * np.log(c[nz] * n / outer[nz])))
    return float(min(1.0, max(0.0, mi / np.sqrt(h_pred * h_true))))


def purity(pred, truth) -> float:
    _check(pred, truth, 1)
    table = ContingencyTable.from_labels(pred, truth)
    return float(table.counts.max(axis=1).sum() / table.n)


def pairwise_f(pred, truth) -> float:
    _check(pred, truth, 2)
    table = ContingencyTable.from_labels(pred, truth)
    tp = int(_comb2(table.counts).sum())
    pred_pairs = int(_comb2(table.rows).sum())
    true_pairs = int(_comb2(table.cols).sum())
    if tp == 0:
        # no co-clustered pair is shared; identical all-singleton partitions score 1
        return 1.0 if pred_pairs == 0 and true_pairs == 0 else 0.0
    precision = tp / pred_pairs
    recall = tp / true_pairs
    return float(2 * precision * recall / (precision + recall))


def full_nmi(preds: Sequence, truths: Sequence) -> float:
    """NMI over the concatenation of every batch; penalises label switching."""
    if len(preds) != len(truths):
        raise InputError(f"{len(preds)} prediction batches vs {len(truths)} truth batches")
    if not preds:
        raise InputError("no batches")
    for p, t in zip(preds, truths):
        _check(p, t)
    return nmi(np.concatenate([np.ravel(p) for p in preds]),
               np.concatenate([np.ravel(t) for t in truths]))


METRICS = {"ari": ari, "nmi": nmi, "purity": purity, "pairwise_f": pairwise_f}


def batch_metrics(pred, truth) -> dict[str, float]:
    return {name: fn(pred, truth) for name, fn in METRICS.items()}
