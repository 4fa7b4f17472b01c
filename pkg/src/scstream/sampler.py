"""Subcluster-augmented restricted Gibbs sampler with split/merge moves.

All quantities are computed from *weighted* aggregates: the decayed history
of a cluster (fixed while a batch is being processed) plus the statistics
of the current batch's points under the current labels.

Within a batch, clusters are addressed by their position in
``BatchState.clusters``; the list is kept sorted by cluster id so argmax
ties resolve to the lowest id.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import NumericalError, StateError
from .family import ConjugateFamily
from .history import HistoryRecord, merge_histories

log = logging.getLogger(__name__)

COUNT_FLOOR = 1.0  # effective points; below this lgamma(N) dominates log H
MODE_DELTA = 1e-10


@dataclass
class Cluster:
    """One instantiated component with its two auxiliary subclusters."""

    id: int
    history: HistoryRecord
    sub_history: list[HistoryRecord]
    weight: float = 1.0
    sub_weights: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))

    @classmethod
    def empty(cls, cid: int, stat_dim: int, weight: float = 1.0) -> "Cluster":
        return cls(cid, HistoryRecord(stat_dim),
                   [HistoryRecord(stat_dim), HistoryRecord(stat_dim)], weight)


@dataclass
class Move:
    stage: str
    kind: str  # "split" | "merge"
    clusters: list[int]
    log_h: float | None
    accepted: bool
    reason: str | None = None
    children: list[int] | None = None

    def to_dict(self) -> dict:
        d = {"stage": self.stage, "kind": self.kind, "clusters": self.clusters,
             "log_h": self.log_h, "accepted": self.accepted}
        if self.reason:
            d["reason"] = self.reason
        if self.children:
            d["children"] = self.children
        return d


class MoveLog(list):
    """Append-only record of the split/merge proposals made for one batch."""

    def accepted(self) -> list[Move]:
        return [m for m in self if m.accepted]

    def n_accepted(self) -> int:
        return sum(1 for m in self if m.accepted)

    def to_records(self) -> list[dict]:
        return [m.to_dict() for m in self]


class IdSource:
    """Monotone cluster-id allocator; ids are never reused within a run."""

    def __init__(self, next_id: int = 0):
        self.next_id = next_id

    def __call__(self) -> int:
        cid = self.next_id
        self.next_id += 1
        return cid


# -- weights --------------------------------------------------------------

def _gamma_draws(shape: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    shape = np.asarray(shape, dtype=float)
    out = np.zeros_like(shape)
    pos = shape > 0
    out[pos] = rng.standard_gamma(shape[pos])
    return out


def sample_weights(counts, subcounts, alpha: float, rng: np.random.Generator):
    """Draw cluster weights and subcluster weights from their conditionals.

    ``(pi_1..pi_K, pi_rest) ~ Dir(N_1..N_K, alpha)`` with the unobserved mass
    ``pi_rest`` discarded, and ``pibar_k ~ Dir(Nbar_k1 + alpha/2, Nbar_k2 + alpha/2)``.
    """
    counts = np.asarray(counts, dtype=float)
    subcounts = np.asarray(subcounts, dtype=float).reshape(-1, 2)
    if counts.size == 0:
        raise StateError("cannot sample weights without clusters")
    g = _gamma_draws(np.append(counts, alpha), rng)
    total = g.sum()
    if not total > 0:
        raise NumericalError("all Dirichlet gamma draws underflowed")
    pi = g[:-1] / total
    gb = rng.standard_gamma(subcounts + alpha / 2.0)
    sums = gb.sum(axis=1, keepdims=True)
    gb = np.where(sums > 0, gb / np.where(sums > 0, sums, 1.0), 0.5)
    return pi, gb


def dirichlet_mode(params, delta: float = MODE_DELTA) -> np.ndarray:
    """Interior-mode rule ``((a_i - 1)^+ + delta) / sum_j ((a_j - 1)^+ + delta)``."""
    a = np.maximum(np.asarray(params, dtype=float) - 1.0, 0.0) + delta
    return a / a.sum(axis=-1, keepdims=True)


def mode_weights(counts, subcounts, alpha: float):
    """Deterministic counterpart of :func:`sample_weights`.

    The concentration component is dropped and the remaining K entries are
    renormalised.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.size == 0:
        raise StateError("cannot compute weights without clusters")
    pi = dirichlet_mode(counts)
    pibar = dirichlet_mode(np.asarray(subcounts, dtype=float).reshape(-1, 2) + alpha / 2.0)
    return pi, pibar


# -- labels ---------------------------------------------------------------

def sample_categorical(log_scores: np.ndarray, rng: np.random.Generator,
                       what: str = "label") -> np.ndarray:
    """Draw one index per row with probability proportional to exp(log_scores)."""
    mx = np.max(log_scores, axis=1, keepdims=True)
    bad = ~np.isfinite(mx[:, 0])
    if bad.any():
        raise NumericalError(f"every {what} score is -inf for point {int(np.flatnonzero(bad)[0])}")
    p = np.exp(log_scores - mx)
    c = np.cumsum(p, axis=1)
    u = rng.random(len(p)) * c[:, -1]
    idx = (c < u[:, None]).sum(axis=1)
    return np.minimum(idx, log_scores.shape[1] - 1)


def argmax_labels(log_scores: np.ndarray, what: str = "label") -> np.ndarray:
    mx = np.max(log_scores, axis=1)
    bad = ~np.isfinite(mx)
    if bad.any():
        raise NumericalError(f"every {what} score is -inf for point {int(np.flatnonzero(bad)[0])}")
    return np.argmax(log_scores, axis=1)


def _group_slices(z: np.ndarray, K: int):
    order = np.argsort(z, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(z, minlength=K))])
    return order, bounds


def sample_labels(family: ConjugateFamily, X, params, pi, rng, threads: int = 1):
    """z_i drawn from pi_k f(x_i; theta_k) over the existing clusters only."""
    scores = _score_columns(lambda k: family.log_likelihood(params[k], X), len(params), threads)
    with np.errstate(divide="ignore"):
        scores += np.log(pi)[None, :]
    return sample_categorical(scores, rng)


def _sub_scores(family, X, z, K, sub_fn, log_pibar) -> np.ndarray:
    scores = np.empty((len(X), 2))
    order, bounds = _group_slices(z, K)
    for k in range(K):
        idx = order[bounds[k]:bounds[k + 1]]
        if len(idx) == 0:
            continue
        Xk = X[idx]
        for j in range(2):
            scores[idx, j] = log_pibar[k, j] + sub_fn(k, j, Xk)
    return scores


def sample_subcluster_labels(family: ConjugateFamily, X, z, sub_params, pibar, rng):
    """zbar_i drawn within the two subcomponents of the point's cluster."""
    K = len(sub_params)
    with np.errstate(divide="ignore"):
        log_pibar = np.log(pibar)
    scores = _sub_scores(family, X, z, K,
                         lambda k, j, Xk: family.log_likelihood(sub_params[k][j], Xk),
                         log_pibar)
    return sample_categorical(scores, rng, "subcluster label")


def _score_columns(fn, K: int, threads: int) -> np.ndarray:
    # each column is computed independently, so results do not depend on threads
    if threads > 1 and K > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            cols = list(ex.map(fn, range(K)))
    else:
        cols = [fn(k) for k in range(K)]
    return np.stack(cols, axis=1)


# -- Hastings ratios ------------------------------------------------------

def split_log_hastings(family: ConjugateFamily, alpha: float, S, N: float, subS, subN) -> float:
    """log H_split for a cluster with aggregate (S, N) and subclusters (subS, subN).

    A proposal with an empty side is not a split and gets ``-inf``.
    """
    subS = np.asarray(subS)
    if min(subN[0], subN[1]) <= 0:
        return -np.inf
    return float(
        np.log(alpha)
        + gammaln(subN[0]) + family.log_marginal(subS[0], subN[0])
        + gammaln(subN[1]) + family.log_marginal(subS[1], subN[1])
        - gammaln(N) - family.log_marginal(S, N)
    )


def merge_log_hastings(family: ConjugateFamily, alpha: float, S_a, N_a: float, S_b, N_b: float) -> float:
    """log H_merge = -log H_split with the two clusters acting as subclusters."""
    S_a = np.asarray(S_a)
    S_b = np.asarray(S_b)
    return -split_log_hastings(family, alpha, S_a + S_b, N_a + N_b,
                               np.stack([S_a, S_b]), np.array([N_a, N_b]))


def cluster_split_log_hastings(family, cluster: Cluster, alpha: float, t_now: float, lam: float) -> float:
    """Split ratio from a cluster's histories alone (no in-flight batch)."""
    agg = cluster.history.weighted_aggregate(t_now, lam)
    subs = [h.weighted_aggregate(t_now, lam) for h in cluster.sub_history]
    return split_log_hastings(family, alpha, agg.S, agg.N,
                              np.stack([s.S for s in subs]), np.array([s.N for s in subs]))


def cluster_merge_log_hastings(family, a: Cluster, b: Cluster, alpha: float, t_now: float,
                               lam: float) -> float:
    if a is b or a.id == b.id:
        raise StateError("a cluster cannot be merged with itself")
    ga = a.history.weighted_aggregate(t_now, lam)
    gb = b.history.weighted_aggregate(t_now, lam)
    return merge_log_hastings(family, alpha, ga.S, ga.N, gb.S, gb.N)


# -- batch working state --------------------------------------------------

@dataclass
class Aggregates:
    S: np.ndarray  # (K, P)
    N: np.ndarray  # (K,)
    subS: np.ndarray  # (K, 2, P)
    subN: np.ndarray  # (K, 2)


def principal_axis_partition(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One-step 2-means-style split: sign of the projection on the top principal axis.

    Falls back to random labels when fewer than four points are available.
    """
    n = len(X)
    if n < 4:
        return rng.integers(0, 2, size=n)
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    proj = centered @ vecs[:, -1]
    labels = (proj > 0).astype(int)
    if labels.min() == labels.max():
        return rng.integers(0, 2, size=n)
    return labels


class BatchState:
    """Clusters plus the current batch's points and labels.

    ``hist_*`` arrays hold the decayed history aggregates at the batch
    timestamp; they stay fixed while the batch is processed except when
    splits and merges reshape the cluster list.
    """

    def __init__(self, family: ConjugateFamily, clusters: list[Cluster], X: np.ndarray,
                 t: float, lam: float):
        self.family = family
        self.clusters = clusters
        self.X = X
        self.phi = family.point_stats(X)
        self.t = t
        self.lam = lam
        n = len(X)
        self.z = np.zeros(n, dtype=np.int64)
        self.zbar = np.zeros(n, dtype=np.int64)
        P = family.stat_dim
        K = len(clusters)
        self.hist_S = np.zeros((K, P))
        self.hist_N = np.zeros(K)
        self.sub_hist_S = np.zeros((K, 2, P))
        self.sub_hist_N = np.zeros((K, 2))
        for k, c in enumerate(clusters):
            agg = c.history.weighted_aggregate(t, lam)
            self.hist_S[k], self.hist_N[k] = agg.S, agg.N
            for j in range(2):
                sagg = c.sub_history[j].weighted_aggregate(t, lam)
                self.sub_hist_S[k, j], self.sub_hist_N[k, j] = sagg.S, sagg.N

    @property
    def K(self) -> int:
        return len(self.clusters)

    @property
    def ids(self) -> np.ndarray:
        return np.array([c.id for c in self.clusters], dtype=np.int64)

    def batch_sums(self):
        """Current-batch statistics per (cluster, subcluster): (K,2,P) and (K,2)."""
        K = self.K
        g = 2 * self.z + self.zbar
        counts = np.bincount(g, minlength=2 * K).astype(float)
        onehot = np.zeros((len(g), 2 * K))
        onehot[np.arange(len(g)), g] = 1.0
        sums = onehot.T @ self.phi
        return sums.reshape(K, 2, -1), counts.reshape(K, 2)

    def aggregates(self) -> Aggregates:
        bS, bN = self.batch_sums()
        subS = self.sub_hist_S + bS
        subN = self.sub_hist_N + bN
        S = self.hist_S + bS.sum(axis=1)
        N = self.hist_N + bN.sum(axis=1)
        return Aggregates(S, N, subS, subN)

    def current_counts(self) -> np.ndarray:
        return np.bincount(self.z, minlength=self.K)

    # -- structural edits -------------------------------------------------

    def _append(self, cluster, hS, hN, shS, shN):
        self.clusters.append(cluster)
        self.hist_S = np.concatenate([self.hist_S, hS[None]])
        self.hist_N = np.append(self.hist_N, hN)
        self.sub_hist_S = np.concatenate([self.sub_hist_S, shS[None]])
        self.sub_hist_N = np.concatenate([self.sub_hist_N, shN[None]])

    def _remove(self, idx: list[int]):
        keep = np.setdiff1d(np.arange(self.K), idx)
        remap = -np.ones(self.K, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        self.clusters[:] = [self.clusters[i] for i in keep]
        self.hist_S = self.hist_S[keep]
        self.hist_N = self.hist_N[keep]
        self.sub_hist_S = self.sub_hist_S[keep]
        self.sub_hist_N = self.sub_hist_N[keep]
        return remap

    def split(self, k: int, new_id: IdSource, rng: np.random.Generator) -> list[int]:
        """Replace cluster ``k`` by two children built from its subclusters."""
        parent = self.clusters[k]
        member = self.z == k
        children = []
        for j in range(2):
            h = parent.sub_history[j]
            # subcluster histories start empty; the batch partition below seeds them
            child = Cluster(new_id(), h.copy(), [HistoryRecord(h.stat_dim), HistoryRecord(h.stat_dim)],
                            weight=parent.weight * float(parent.sub_weights[j]))
            hS, hN = self.sub_hist_S[k, j], self.sub_hist_N[k, j]
            self._append(child, hS, hN, np.zeros((2,) + hS.shape), np.zeros(2))
            children.append(child)
        new_k = [self.K - 2, self.K - 1]
        parts = [np.flatnonzero(member & (self.zbar == j)) for j in range(2)]
        for j, pts in enumerate(parts):
            self.z[pts] = new_k[j]
            self.zbar[pts] = principal_axis_partition(self.X[pts], rng)
        remap = self._remove([k])
        self.z = remap[self.z]
        return [c.id for c in children]

    def merge(self, a: int, b: int, new_id: IdSource) -> int:
        ca, cb = self.clusters[a], self.clusters[b]
        merged = Cluster(new_id(), merge_histories(ca.history, cb.history),
                         [ca.history.copy(), cb.history.copy()],
                         weight=ca.weight + cb.weight)
        tot = ca.weight + cb.weight
        merged.sub_weights = (np.array([ca.weight, cb.weight]) / tot if tot > 0
                              else np.array([0.5, 0.5]))
        self._append(merged, self.hist_S[a] + self.hist_S[b], self.hist_N[a] + self.hist_N[b],
                     np.stack([self.hist_S[a], self.hist_S[b]]),
                     np.array([self.hist_N[a], self.hist_N[b]]))
        m = self.K - 1
        in_a, in_b = self.z == a, self.z == b
        self.z[in_a | in_b] = m
        self.zbar[in_a] = 0
        self.zbar[in_b] = 1
        remap = self._remove([a, b])
        self.z = remap[self.z]
        return merged.id


class Sampler:
    """Stochastic and deterministic iterations over a :class:`BatchState`."""

    def __init__(self, family: ConjugateFamily, alpha: float, rng: np.random.Generator,
                 ids: IdSource, count_floor: float = COUNT_FLOOR, threads: int = 1):
        if alpha <= 0:
            raise StateError(f"concentration must be positive, got {alpha}")
        self.family = family
        self.alpha = float(alpha)
        self.rng = rng
        self.ids = ids
        self.count_floor = count_floor
        self.threads = max(1, int(threads))

    # one restricted Gibbs iteration: weights -> params -> labels -> sublabels
    def stochastic_iteration(self, st: BatchState) -> None:
        fam, rng = self.family, self.rng
        agg = st.aggregates()
        pi, pibar = sample_weights(agg.N, agg.subN, self.alpha, rng)
        params, sub_params = [], []
        for k in range(st.K):
            params.append(fam.sample_params(fam.posterior(agg.S[k], agg.N[k]), rng))
            sub_params.append([fam.sample_params(fam.posterior(agg.subS[k, j], agg.subN[k, j]), rng)
                               for j in range(2)])
        st.z = sample_labels(fam, st.X, params, pi, rng, self.threads)
        st.zbar = sample_subcluster_labels(fam, st.X, st.z, sub_params, pibar, rng)
        for k, c in enumerate(st.clusters):
            c.weight = float(pi[k])
            c.sub_weights = pibar[k]

    def deterministic_pass(self, st: BatchState) -> None:
        """Mode weights and argmax of the weighted predictive posteriors."""
        fam = self.family
        agg = st.aggregates()
        pi, pibar = mode_weights(agg.N, agg.subN, self.alpha)
        posts = [fam.posterior(agg.S[k], agg.N[k]) for k in range(st.K)]
        sub_posts = [[fam.posterior(agg.subS[k, j], agg.subN[k, j]) for j in range(2)]
                     for k in range(st.K)]
        scores = _score_columns(lambda k: fam.log_predictive(posts[k], st.X), st.K, self.threads)
        scores += np.log(pi)[None, :]
        st.z = argmax_labels(scores)
        sub = _sub_scores(fam, st.X, st.z, st.K,
                          lambda k, j, Xk: fam.log_predictive(sub_posts[k][j], Xk), np.log(pibar))
        st.zbar = argmax_labels(sub, "subcluster label")
        for k, c in enumerate(st.clusters):
            c.weight = float(pi[k])
            c.sub_weights = pibar[k]

    def attempt_splits(self, st: BatchState, moves: MoveLog, stage: str,
                       force_accept: bool = False) -> None:
        agg = st.aggregates()
        to_split = []
        for k, c in enumerate(st.clusters):
            subN = agg.subN[k]
            if subN.min() <= self.count_floor:
                moves.append(Move(stage, "split", [c.id], None, False, "below count floor"))
                continue
            log_h = split_log_hastings(self.family, self.alpha, agg.S[k], agg.N[k],
                                       agg.subS[k], subN)
            accept = force_accept or np.log(self.rng.random()) < log_h
            moves.append(Move(stage, "split", [c.id], log_h, bool(accept)))
            if accept:
                to_split.append((c.id, moves[-1]))
        for cid, move in to_split:
            k = next(i for i, c in enumerate(st.clusters) if c.id == cid)
            move.children = st.split(k, self.ids, self.rng)

    def attempt_merges(self, st: BatchState, moves: MoveLog, stage: str,
                       force_accept: bool = False) -> None:
        if st.K < 2:
            return
        agg = st.aggregates()
        perm = self.rng.permutation(st.K)
        to_merge = []
        for p in range(st.K // 2):
            a, b = int(perm[2 * p]), int(perm[2 * p + 1])
            ids = [st.clusters[a].id, st.clusters[b].id]
            if min(agg.N[a], agg.N[b]) <= self.count_floor:
                moves.append(Move(stage, "merge", ids, None, False, "below count floor"))
                continue
            log_h = merge_log_hastings(self.family, self.alpha, agg.S[a], agg.N[a],
                                       agg.S[b], agg.N[b])
            accept = force_accept or np.log(self.rng.random()) < log_h
            moves.append(Move(stage, "merge", ids, log_h, bool(accept)))
            if accept:
                to_merge.append((ids, moves[-1]))
        for ids, move in to_merge:
            pos = {c.id: i for i, c in enumerate(st.clusters)}
            move.children = [st.merge(pos[ids[0]], pos[ids[1]], self.ids)]

    def split_merge(self, st: BatchState, moves: MoveLog, stage: str) -> None:
        self.attempt_splits(st, moves, stage)
        self.attempt_merges(st, moves, stage)
