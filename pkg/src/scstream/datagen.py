"""Synthetic drifting streams for Gaussian and count data."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .engine import Batch
from .errors import ConfigurationError

DRIFT_KINDS = ("none", "incremental", "gradual", "recurring")


@dataclass(frozen=True)
class DriftSpec:
    """How the generating components change from batch to batch.

    For incremental drift every Gaussian mean takes a random-walk step per
    batch whose RMS length is ``magnitude`` times the cluster separation.
    ``revert`` pulls each mean back toward its starting point by that
    fraction of the offset per batch, so long streams keep the clusters
    distinguishable; set it to 0 for a pure random walk.  For gradual drift
    ``ramp`` is the number of batches over which a component blends into a
    freshly drawn target.  ``period`` is used by recurring drift.
    """

    kind: str = "none"
    magnitude: float = 0.05
    ramp: int = 20
    period: int = 2
    revert: float = 0.05

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ConfigurationError(f"unknown drift kind {self.kind!r}")
        if self.magnitude < 0:
            raise ConfigurationError("drift magnitude must be nonnegative")
        if self.period < 1 or self.ramp < 1:
            raise ConfigurationError("period and ramp must be >= 1")
        if not 0.0 <= self.revert <= 1.0:
            raise ConfigurationError("revert must lie in [0, 1]")


def _grid_means(K: int, D: int, separation: float, rng) -> np.ndarray:
    """Centres on a regular grid with spacing ``separation``, jittered by up to 10%."""
    side = math.ceil(K ** (1.0 / D)) if D > 1 else K
    grids = np.meshgrid(*[np.arange(side)] * D, indexing="ij")
    cells = np.stack([g.ravel() for g in grids], axis=1)[:K].astype(float)
    cells -= cells.mean(axis=0)
    return cells * separation + rng.uniform(-0.1, 0.1, size=cells.shape) * separation


def _random_cov(D: int, rng, anisotropy: float) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((D, D)))
    scales = np.exp(rng.uniform(-anisotropy, anisotropy, size=D))
    scales /= np.exp(np.mean(np.log(scales)))  # unit geometric-mean variance
    return q @ np.diag(scales) @ q.T


def gen_gaussian_stream(K: int, D: int, n_total: int, batch_size: int,
                        drift: DriftSpec | None = None, seed: int = 0,
                        separation: float = 12.0, anisotropy: float = 0.5,
                        weights=None) -> Iterator[Batch]:
    """Mixture of K Gaussians (unit-scale covariances) on a jittered grid.

    Incremental drift moves every mean independently by a Gaussian step of
    RMS length ``drift.magnitude * separation`` per batch, with the mean
    reversion described in :class:`DriftSpec`.

    Gradual drift replaces each component's location by a fresh uniform
    draw inside the initial layout's bounding box.  During the ``ramp``
    batches of a replacement a point comes from the new location with
    probability rising linearly from 0 to 1, so the old and new concepts
    coexist.  Components are staggered so that replacements are spread
    evenly over time.  Labels follow the component, not the location.
    """
    if K < 1 or D < 1 or batch_size < 1 or n_total < 0:
        raise ConfigurationError("K, D and batch_size must be >= 1")
    drift = drift or DriftSpec()
    rng = np.random.default_rng(seed)
    means = _grid_means(K, D, separation, rng)
    chols = np.stack([np.linalg.cholesky(_random_cov(D, rng, anisotropy)) for _ in range(K)])
    w = np.full(K, 1.0 / K) if weights is None else np.asarray(weights, float) / np.sum(weights)
    anchors = means.copy()
    lo, hi = means.min(axis=0), means.max(axis=0)
    targets = rng.uniform(lo, hi, size=(K, D))
    offsets = (np.arange(K) * drift.ramp) // K
    step = drift.magnitude * separation / math.sqrt(D)
    n_batches = math.ceil(n_total / batch_size)
    for b in range(n_batches):
        n = min(batch_size, n_total - b * batch_size)
        z = rng.choice(K, size=n, p=w)
        eps = rng.standard_normal((n, D))
        centre = means[z]
        if drift.kind == "gradual":
            # staggered replacement: component k restarts its ramp at its own offset
            phase = ((b + offsets) % drift.ramp) / drift.ramp
            restart = np.flatnonzero(((b + offsets) % drift.ramp == 0) & (b > 0))
            means[restart] = targets[restart]
            targets[restart] = rng.uniform(lo, hi, size=(len(restart), D))
            use_new = rng.random(n) < phase[z]
            centre = np.where(use_new[:, None], targets[z], means[z])
        X = centre + np.einsum("nij,nj->ni", chols[z], eps)
        yield Batch(X, float(b + 1), z, b)
        if drift.kind == "incremental" and drift.magnitude > 0:
            means = (means - drift.revert * (means - anchors)
                     + step * rng.standard_normal((K, D)))


def gen_multinomial_stream(K: int, D: int, trials_per_point: int, n_total: int, batch_size: int,
                           drift: DriftSpec | None = None, seed: int = 0,
                           concentration: float = 0.2) -> Iterator[Batch]:
    """Mixture of K multinomials with Dirichlet(concentration) probability vectors.

    Gradual drift blends each component linearly into a resampled target over
    ``drift.ramp`` batches, then draws a new target.
    """
    if K < 1 or D < 2 or batch_size < 1 or trials_per_point < 1:
        raise ConfigurationError("K >= 1, D >= 2, batch_size >= 1 and trials >= 1 required")
    drift = drift or DriftSpec()
    rng = np.random.default_rng(seed)
    start = rng.dirichlet(np.full(D, concentration), size=K)
    target = rng.dirichlet(np.full(D, concentration), size=K)
    n_batches = math.ceil(n_total / batch_size)
    for b in range(n_batches):
        if drift.kind == "gradual":
            phase = (b % drift.ramp) / drift.ramp
            if b > 0 and b % drift.ramp == 0:
                start, target = target, rng.dirichlet(np.full(D, concentration), size=K)
            probs = (1 - phase) * start + phase * target
        else:
            probs = start
        n = min(batch_size, n_total - b * batch_size)
        z = rng.integers(0, K, size=n)
        X = np.stack([rng.multinomial(trials_per_point, probs[k]) for k in z]).astype(float)
        yield Batch(X, float(b + 1), z, b)


def gen_recurring_wrapper(base: Iterator[Batch], period: int, dwell: int = 1,
                          batch_size: int | None = None) -> Iterator[Batch]:
    """Cycle through ``period`` disjoint class groups (label mod period).

    Each emitted batch contains only the classes of the active group; the
    group advances every ``dwell`` batches, so earlier clusters return.
    Points of inactive classes are discarded, and batches are refilled from
    the base stream to ``batch_size`` (default: the base batch size).
    """
    if period < 2:
        raise ConfigurationError("recurring drift needs period >= 2")
    buf_X, buf_y = [], []
    out_index = 0
    for batch in base:
        if batch.labels is None:
            raise ConfigurationError("recurring wrapper needs labelled batches")
        size = batch_size or len(batch)
        group = (out_index // dwell) % period
        keep = batch.labels % period == group
        buf_X.append(batch.points[keep])
        buf_y.append(batch.labels[keep])
        have = sum(len(y) for y in buf_y)
        if have >= size:
            X = np.concatenate(buf_X)
            y = np.concatenate(buf_y)
            yield Batch(X[:size], float(out_index + 1), y[:size], out_index)
            out_index += 1
            buf_X, buf_y = [], []
