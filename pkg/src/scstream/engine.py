"""Streaming driver: predict-then-update over a sequence of batches."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigurationError, InputError
from .family import ConjugateFamily
from .history import DEFAULT_EPSILON, DEFAULT_LAMBDA, HistoryRecord
from .sampler import (
    COUNT_FLOOR,
    BatchState,
    Cluster,
    IdSource,
    MoveLog,
    Sampler,
    _score_columns,
    _sub_scores,
    argmax_labels,
    mode_weights,
    principal_axis_partition,
    sample_categorical,
    sample_weights,
)

log = logging.getLogger(__name__)


@dataclass
class EngineConfig:
    alpha: float = 1.0
    lam: float = DEFAULT_LAMBDA
    eps: float = DEFAULT_EPSILON
    T: int = 1
    seed: int = 0
    # first batch: iterate until no accepted move for `stable_iters` iterations
    # and fewer than `change_tol` of labels changed, or `max_first_iters`
    converge_first_batch: bool = True
    max_first_iters: int = 200
    stable_iters: int = 10
    change_tol: float = 0.01
    deterministic_pass: bool = True
    count_floor: float = COUNT_FLOOR
    retire_factor: float = 10.0
    threads: int = 1
    strict: bool = False

    def validate(self) -> "EngineConfig":
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if not self.lam > 0:
            raise ConfigurationError(f"lambda must be positive, got {self.lam}")
        if not 0 < self.eps < 1:
            raise ConfigurationError(f"epsilon must lie in (0, 1), got {self.eps}")
        if int(self.T) < 1:
            raise ConfigurationError(f"T must be a positive integer, got {self.T}")
        if self.max_first_iters < 1 or self.threads < 1:
            raise ConfigurationError("iteration and thread counts must be positive")
        self.T = int(self.T)
        if self.strict:
            self.threads = 1
        return self


@dataclass
class Batch:
    points: np.ndarray
    timestamp: float | None = None
    labels: np.ndarray | None = None
    index: int | None = None

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class BatchResult:
    batch_index: int
    timestamp: float
    predicted: np.ndarray | None  # None for the cold first batch
    final: np.ndarray
    K: int
    moves: MoveLog
    wall_ms: float
    lineage: dict[int, list[int]] = field(default_factory=dict)
    iterations: int = 0

    def to_record(self, inline_labels: bool = True) -> dict:
        rec = {
            "batch_index": self.batch_index,
            "timestamp": self.timestamp,
            "K": self.K,
            "iterations": self.iterations,
            "moves": self.moves.to_records(),
            "lineage": {str(k): v for k, v in self.lineage.items()},
            "wall_ms": self.wall_ms,
        }
        if inline_labels:
            rec["predicted_labels"] = None if self.predicted is None else self.predicted.tolist()
        return rec


class ScStream:
    """Streaming DPMM clusterer over time-decayed sufficient statistics.

    Parameters
    ----------
    family : ConjugateFamily
        Component family with its prior (``GaussianNIW`` or ``MultinomialDirichlet``).
    config : EngineConfig, optional
        Hyperparameters; keyword arguments override individual fields.
    """

    def __init__(self, family: ConjugateFamily, config: EngineConfig | None = None, **overrides):
        cfg = config if config is not None else EngineConfig()
        if overrides:
            cfg = EngineConfig(**{**asdict(cfg), **overrides})
        self.config = cfg.validate()
        self.family = family
        self.clusters: list[Cluster] = []
        self.t_now: float | None = None
        self.n_batches = 0
        self.ids = IdSource()
        self.rng = np.random.default_rng(cfg.seed)

    # -- inspection -------------------------------------------------------

    @property
    def is_cold(self) -> bool:
        return not self.clusters

    @property
    def K(self) -> int:
        return len(self.clusters)

    def cluster_ids(self) -> list[int]:
        return [c.id for c in self.clusters]

    def weighted_counts(self, t: float | None = None) -> np.ndarray:
        t = self.t_now if t is None else t
        return np.array([c.history.weighted_aggregate(t, self.config.lam).N for c in self.clusters])

    def _sampler(self) -> Sampler:
        c = self.config
        return Sampler(self.family, c.alpha, self.rng, self.ids, c.count_floor, c.threads)

    def _next_time(self, t) -> float:
        if t is None:
            return float(self.n_batches + 1) if self.t_now is None else self.t_now + 1.0
        return float(t)

    # -- prediction -------------------------------------------------------

    def predict(self, X, t: float | None = None) -> np.ndarray | None:
        """Label points with the current model at time ``t``; ``None`` when cold.

        The model is not modified.  Cluster weights use the Dirichlet mode of
        the decayed counts and each point goes to the argmax of weight times
        predictive density.
        """
        X = self.family.validate_points(X)
        if self.is_cold:
            return None
        t = self._next_time(t)
        if t < self.t_now:
            raise InputError(f"timestamp {t} precedes the model time {self.t_now}")
        st = BatchState(self.family, list(self.clusters), X, t, self.config.lam)
        if self.config.deterministic_pass:
            z = self._predictive_labels(st)
        else:
            z = self._sampled_labels(st)
        return st.ids[z]

    def _predictive_labels(self, st: BatchState) -> np.ndarray:
        fam = self.family
        pi, _ = mode_weights(st.hist_N, st.sub_hist_N, self.config.alpha)
        posts = [fam.posterior(st.hist_S[k], st.hist_N[k]) for k in range(st.K)]
        scores = _score_columns(lambda k: fam.log_predictive(posts[k], st.X), st.K,
                                self.config.threads)
        return argmax_labels(scores + np.log(pi)[None, :])

    def _sampled_labels(self, st: BatchState) -> np.ndarray:
        # sampler-style labelling used when the deterministic routine is ablated;
        # a derived generator keeps the engine's own stream untouched
        rng = np.random.default_rng([self.config.seed, self.n_batches, 7])
        fam = self.family
        pi, _ = sample_weights(st.hist_N, st.sub_hist_N, self.config.alpha, rng)
        params = [fam.sample_params(fam.posterior(st.hist_S[k], st.hist_N[k]), rng)
                  for k in range(st.K)]
        scores = np.stack([fam.log_likelihood(p, st.X) for p in params], axis=1)
        with np.errstate(divide="ignore"):
            scores += np.log(pi)[None, :]
        return sample_categorical(scores, rng)

    def _init_warm_labels(self, st: BatchState) -> None:
        fam = self.family
        st.z = self._predictive_labels(st)
        _, pibar = mode_weights(st.hist_N, st.sub_hist_N, self.config.alpha)
        sub_posts = [[fam.posterior(st.sub_hist_S[k, j], st.sub_hist_N[k, j]) for j in range(2)]
                     for k in range(st.K)]
        sub = _sub_scores(fam, st.X, st.z, st.K,
                          lambda k, j, Xk: fam.log_predictive(sub_posts[k][j], Xk), np.log(pibar))
        st.zbar = argmax_labels(sub, "subcluster label")
        # Fresh children have no subcluster history yet, and a subcluster that
        # has collapsed to (almost) nothing can never win points back.  Both
        # cases restart the subclusters from a partition of the current batch.
        stale = np.flatnonzero(st.sub_hist_N.min(axis=1) <= self.config.count_floor)
        for k in stale:
            c = st.clusters[k]
            if c.sub_history[0].entries or c.sub_history[1].entries:
                log.debug("resetting subclusters of cluster %d", c.id)
                c.sub_history = [HistoryRecord(fam.stat_dim), HistoryRecord(fam.stat_dim)]
                st.sub_hist_S[k] = 0.0
                st.sub_hist_N[k] = 0.0
            idx = np.flatnonzero(st.z == k)
            st.zbar[idx] = principal_axis_partition(st.X[idx], self.rng)

    # -- update -----------------------------------------------------------

    def update(self, X, t: float | None = None) -> BatchResult:
        """Absorb one batch into the model and return its final labels."""
        started = time.perf_counter()
        X = self.family.validate_points(X)
        if len(X) == 0:
            raise InputError("empty batch")
        t = self._next_time(t)
        if self.t_now is not None and not t > self.t_now:
            raise InputError(f"batch timestamp {t} must exceed the model time {self.t_now}")
        cfg = self.config
        sampler = self._sampler()
        moves = MoveLog()
        cold = self.is_cold
        if cold:
            self.clusters.append(Cluster.empty(self.ids(), self.family.stat_dim))
        st = BatchState(self.family, self.clusters, X, t, cfg.lam)
        if cold:
            st.zbar = principal_axis_partition(X, self.rng)
            iters = self._converge(st, sampler, moves) if cfg.converge_first_batch else cfg.T
            if not cfg.converge_first_batch:
                self._stochastic(st, sampler, moves, cfg.T)
        else:
            self._init_warm_labels(st)
            self._stochastic(st, sampler, moves, cfg.T)
            iters = cfg.T
        if cfg.deterministic_pass:
            sampler.deterministic_pass(st)
        else:
            sampler.stochastic_iteration(st)
        sampler.split_merge(st, moves, "final")
        final = st.ids[st.z]
        self._bookkeeping(st, t)
        self.t_now = t
        self.n_batches += 1
        lineage = {}
        for m in moves.accepted():
            for parent in m.clusters:
                lineage.setdefault(parent, []).extend(m.children or [])
        return BatchResult(self.n_batches - 1, t, None, final, self.K, moves,
                           1000.0 * (time.perf_counter() - started), lineage, iters)

    def _stochastic(self, st, sampler, moves, n_iter):
        for i in range(n_iter):
            sampler.stochastic_iteration(st)
            sampler.split_merge(st, moves, f"iter{i}")

    def _converge(self, st: BatchState, sampler: Sampler, moves: MoveLog) -> int:
        cfg = self.config
        quiet = 0
        for i in range(cfg.max_first_iters):
            before = st.ids[st.z]
            n_before = len(moves)
            sampler.stochastic_iteration(st)
            sampler.split_merge(st, moves, f"iter{i}")
            changed = np.mean(st.ids[st.z] != before)
            accepted = any(m.accepted for m in moves[n_before:])
            quiet = 0 if accepted else quiet + 1
            if quiet >= cfg.stable_iters and changed < cfg.change_tol:
                if not cfg.deterministic_pass:
                    return i + 1
                # the stochastic chain is settled; stop only if the hard
                # assignment proposes nothing new either
                n_before = len(moves)
                sampler.deterministic_pass(st)
                sampler.split_merge(st, moves, f"iter{i}-mode")
                if not any(m.accepted for m in moves[n_before:]):
                    return i + 1
                quiet = 0
        return cfg.max_first_iters

    def _bookkeeping(self, st: BatchState, t: float) -> None:
        cfg = self.config
        bS, bN = st.batch_sums()
        survivors = []
        for k, c in enumerate(st.clusters):
            c.history.append_and_prune(t, bS[k].sum(axis=0), bN[k].sum(), cfg.lam, cfg.eps)
            for j in range(2):
                c.sub_history[j].append_and_prune(t, bS[k, j], bN[k, j], cfg.lam, cfg.eps)
            if c.history.weighted_aggregate(t, cfg.lam).N >= cfg.retire_factor * cfg.eps:
                survivors.append(c)
            else:
                log.debug("retiring cluster %d", c.id)
        self.clusters[:] = survivors

    def process(self, batch: Batch) -> BatchResult:
        """Predict the batch with the current model, then update on it."""
        t = self._next_time(batch.timestamp)
        predicted = self.predict(batch.points, t)
        result = self.update(batch.points, t)
        result.predicted = predicted
        if batch.index is not None:
            result.batch_index = batch.index
        return result

    # -- persistence ------------------------------------------------------

    def snapshot(self) -> bytes:
        from .snapshot import dump_state
        return dump_state(self)

    @classmethod
    def restore(cls, data: bytes) -> "ScStream":
        from .snapshot import load_state
        return load_state(data)


def predict_labels(engine: ScStream, batch: Batch):
    return engine.predict(batch.points, batch.timestamp)


def update_with_batch(engine: ScStream, batch: Batch) -> BatchResult:
    return engine.update(batch.points, batch.timestamp)


def run_stream(engine: ScStream, batches: Iterable[Batch],
               sink: Callable[[BatchResult], None] | None = None,
               snapshot_path=None) -> list[BatchResult]:
    """Predict-then-update over every batch, handing each result to ``sink``.

    If the sink raises, the current state is written to ``snapshot_path``
    (when given) before the error propagates.
    """
    results = []
    for batch in batches:
        result = engine.process(batch)
        results.append(result)
        if sink is not None:
            try:
                sink(result)
            except Exception:
                if snapshot_path is not None:
                    with open(snapshot_path, "wb") as fh:
                        fh.write(engine.snapshot())
                raise
    return results
