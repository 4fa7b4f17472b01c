"""Damped-window history records of per-batch sufficient statistics.

A record keeps one ``(t, stats, count)`` entry per processed batch.  Older
entries are down-weighted by ``2 ** (-lam * (t_now - t))`` and dropped once
that weight falls to ``eps`` or below, which bounds the record length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InputError

DEFAULT_LAMBDA = 1.0
DEFAULT_EPSILON = 1e-8


def kernel_weight(t_now: float, t_b: float, lam: float) -> float:
    if lam <= 0:
        raise InputError(f"decay rate must be positive, got {lam}")
    if t_now < t_b:
        raise InputError(f"timestamp {t_b} lies after the current time {t_now}")
    return 2.0 ** (-lam * (t_now - t_b))


def max_history_length(lam: float, eps: float) -> int:
    """Most entries retained when batches arrive at consecutive integer times.

    Lags ``0..n-1`` survive where ``n`` is the smallest lag whose weight is
    at most ``eps``; this is never more than ``ceil(log2(1/eps)/lam) + 1``.
    """
    if lam <= 0 or not 0 < eps < 1:
        raise InputError(f"need lam > 0 and 0 < eps < 1, got lam={lam}, eps={eps}")
    n = math.ceil(math.log2(1.0 / eps) / lam)
    # settle float rounding at the threshold by evaluating the rule itself
    while 2.0 ** (-lam * n) > eps:
        n += 1
    while n > 1 and 2.0 ** (-lam * (n - 1)) <= eps:
        n -= 1
    return n


class HistoryEntry(NamedTuple):
    t: float
    stats: np.ndarray
    n: float


@dataclass
class WeightedAggregate:
    S: np.ndarray
    N: float


class HistoryRecord:
    """Time-ordered batch statistics for one cluster or subcluster."""

    __slots__ = ("stat_dim", "entries", "_cache")

    def __init__(self, stat_dim: int, entries=()):
        self.stat_dim = stat_dim
        self.entries: list[HistoryEntry] = list(entries)
        self._cache: tuple[float, float, WeightedAggregate] | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __repr__(self) -> str:
        ts = [e.t for e in self.entries]
        return f"HistoryRecord(n_entries={len(ts)}, t={ts})"

    @property
    def last_time(self) -> float | None:
        return self.entries[-1].t if self.entries else None

    def copy(self) -> "HistoryRecord":
        # entries hold read-only arrays, so a shallow copy is safe
        return HistoryRecord(self.stat_dim, self.entries)

    def append_and_prune(self, t: float, stats: np.ndarray, n: float, lam: float,
                         eps: float) -> "HistoryRecord":
        if self.entries and not t > self.entries[-1].t:
            raise InputError(f"timestamp {t} does not follow {self.entries[-1].t}")
        if n < 0:
            raise InputError(f"count must be nonnegative, got {n}")
        stats = np.array(stats, dtype=float)
        stats.setflags(write=False)
        self.entries.append(HistoryEntry(float(t), stats, float(n)))
        self.prune(t, lam, eps)
        self._cache = None
        return self

    def prune(self, t_now: float, lam: float, eps: float) -> None:
        keep = [e for e in self.entries if kernel_weight(t_now, e.t, lam) > eps]
        if len(keep) != len(self.entries):
            self.entries = keep
            self._cache = None

    def weighted_aggregate(self, t_now: float, lam: float) -> WeightedAggregate:
        if self._cache is not None and self._cache[0] == t_now and self._cache[1] == lam:
            return self._cache[2]
        S = np.zeros(self.stat_dim)
        N = 0.0
        for e in self.entries:  # oldest first, fixed order
            w = kernel_weight(t_now, e.t, lam)
            S += w * e.stats
            N += w * e.n
        agg = WeightedAggregate(S, N)
        self._cache = (t_now, lam, agg)
        return agg

    def total_count(self) -> float:
        return sum(e.n for e in self.entries)


def merge_histories(a: HistoryRecord, b: HistoryRecord) -> HistoryRecord:
    """Timestamp-wise sum of two records; unmatched entries are carried over."""
    by_t: dict[float, HistoryEntry] = {}
    for e in list(a.entries) + list(b.entries):
        prev = by_t.get(e.t)
        if prev is None:
            by_t[e.t] = e
        else:
            by_t[e.t] = HistoryEntry(e.t, prev.stats + e.stats, prev.n + e.n)
    entries = [by_t[t] for t in sorted(by_t)]
    for e in entries:
        e.stats.setflags(write=False)
    return HistoryRecord(a.stat_dim, entries)


def append_and_prune(h: HistoryRecord, t, stats, n, lam=DEFAULT_LAMBDA,
                     eps=DEFAULT_EPSILON) -> HistoryRecord:
    return h.append_and_prune(t, stats, n, lam, eps)


def weighted_aggregate(h: HistoryRecord, t_now, lam=DEFAULT_LAMBDA) -> WeightedAggregate:
    return h.weighted_aggregate(t_now, lam)
