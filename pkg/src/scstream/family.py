"""Conjugate exponential-family contract and shared numeric primitives.

Every family maps a point ``x`` to a flat statistic vector ``phi(x)`` of
length ``stat_dim``.  Sufficient statistics of a point set are sums of those
vectors, which makes addition and scaling by kernel weights trivial and lets
per-cluster reductions run as a single matrix product.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import InputError

__all__ = [
    "SufficientStats",
    "ConjugateFamily",
    "stats_from_points",
    "stats_add",
    "stats_scale",
    "multivariate_log_gamma",
    "log_gamma",
    "logsumexp",
    "symmetrize",
]

SYMMETRY_TOL = 1e-9


def log_gamma(a):
    return gammaln(a)


def multivariate_log_gamma(a, dim: int):
    """log Gamma_D(a) = D(D-1)/4 log(pi) + sum_{j=1..D} log Gamma(a + (1-j)/2)."""
    a = np.asarray(a, dtype=float)
    offsets = (1.0 - np.arange(1, dim + 1)) / 2.0
    return dim * (dim - 1) / 4.0 * np.log(np.pi) + np.sum(
        gammaln(a[..., None] + offsets), axis=-1
    )


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Additive summary of a weighted point set.

    ``values`` is the flat statistic vector.  For the Gaussian family it is
    ``[sum_x, vec(sum_xxT)]``; for the multinomial family it is the count
    vector.
    """

    family: str
    dim: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls, family: str, dim: int, stat_dim: int) -> "SufficientStats":
        return cls(family, dim, np.zeros(stat_dim))

    @property
    def sum_x(self) -> np.ndarray:
        self._require("gaussian")
        return self.values[: self.dim]

    @property
    def sum_xxT(self) -> np.ndarray:
        self._require("gaussian")
        return self.values[self.dim :].reshape(self.dim, self.dim)

    @property
    def sum_counts(self) -> np.ndarray:
        self._require("multinomial")
        return self.values

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def _require(self, family: str) -> None:
        if self.family != family:
            raise AttributeError(f"{family} field requested on {self.family} stats")

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        return stats_add(self, other)

    def __repr__(self) -> str:
        return f"SufficientStats({self.family}, dim={self.dim}, values={self.values!r})"


def _check_compatible(a: SufficientStats, b: SufficientStats) -> None:
    if a.family != b.family:
        raise InputError(f"cannot combine {a.family} and {b.family} statistics")
    if a.dim != b.dim or a.values.shape != b.values.shape:
        raise InputError(f"dimension mismatch: {a.dim} vs {b.dim}")


def stats_add(a: SufficientStats, b: SufficientStats) -> SufficientStats:
    _check_compatible(a, b)
    return SufficientStats(a.family, a.dim, a.values + b.values)


def stats_scale(a: SufficientStats, w: float) -> SufficientStats:
    if w < 0:
        raise InputError(f"scale must be nonnegative, got {w}")
    if w == 1:
        return a
    return SufficientStats(a.family, a.dim, a.values * w)


class ConjugateFamily(ABC):
    """A component family together with its conjugate prior.

    Subclasses hold the prior hyperparameters and implement posterior
    updates, marginal likelihoods, predictive densities and parameter
    sampling on top of flat statistic vectors.
    """

    name: str = ""

    def __init__(self, dim: int):
        if dim < 1:
            raise InputError(f"dimension must be >= 1, got {dim}")
        self.dim = int(dim)

    @property
    @abstractmethod
    def stat_dim(self) -> int: ...

    @abstractmethod
    def validate_points(self, X) -> np.ndarray:
        """Return ``X`` as a float (n, D) array or raise :class:`InputError`."""

    @abstractmethod
    def point_stats(self, X: np.ndarray) -> np.ndarray:
        """Per-point statistic vectors, shape (n, stat_dim)."""

    @abstractmethod
    def posterior(self, S: np.ndarray, N: float) -> Any: ...

    @abstractmethod
    def log_marginal(self, S: np.ndarray, N: float) -> float: ...

    @abstractmethod
    def log_predictive(self, post: Any, X: np.ndarray) -> np.ndarray:
        """Log predictive density of every row of ``X`` (constants may be dropped
        only where they are identical across components)."""

    @abstractmethod
    def sample_params(self, post: Any, rng: np.random.Generator) -> Any: ...

    @abstractmethod
    def log_likelihood(self, params: Any, X: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def prior_dict(self) -> dict: ...

    def zero_stats(self) -> SufficientStats:
        return SufficientStats.zero(self.name, self.dim, self.stat_dim)

    def wrap(self, values: np.ndarray) -> SufficientStats:
        return SufficientStats(self.name, self.dim, values)

    def stats_from_points(self, X, mask=None) -> SufficientStats:
        return stats_from_points(self, X, mask)


def stats_from_points(family: ConjugateFamily, X, mask=None) -> SufficientStats:
    X = family.validate_points(X)
    if mask is None:
        mask = np.ones(len(X), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (len(X),):
        raise InputError(f"mask length {mask.shape} does not match {len(X)} points")
    if not mask.any():
        return family.zero_stats()
    return family.wrap(family.point_stats(X[mask]).sum(axis=0))
