"""Multinomial components under a Dirichlet prior."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import ConfigurationError, InputError
from .family import ConjugateFamily, SufficientStats


@dataclass(frozen=True, eq=False)
class DirichletPrior:
    d: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d, dtype=float))
        if d.ndim != 1 or not np.all(d > 0):
            raise ConfigurationError("Dirichlet hyperparameters must be a positive vector")
        object.__setattr__(self, "d", d)

    @property
    def dim(self) -> int:
        return self.d.shape[0]


@dataclass(frozen=True, eq=False)
class DirichletPosterior:
    d: np.ndarray
    total: float  # A* = sum(d*)

    @property
    def dim(self) -> int:
        return self.d.shape[0]


def _counts(S, D: int) -> np.ndarray:
    values = S.values if isinstance(S, SufficientStats) else np.asarray(S, dtype=float)
    if values.shape != (D,):
        raise InputError(f"count stats of shape {values.shape} do not match D={D}")
    return values


def dirichlet_posterior(prior: DirichletPrior, S) -> DirichletPosterior:
    c = _counts(S, prior.dim)
    if np.any(c < 0):
        raise InputError("weighted counts must be nonnegative")
    d = prior.d + c
    return DirichletPosterior(d, float(d.sum()))


def multinomial_log_marginal(prior: DirichletPrior, S, N: float = None) -> float:
    """Dirichlet-multinomial evidence of aggregated counts.

    Per-point multinomial coefficients are *not* included; they cancel in
    split/merge ratios and cannot be recovered from aggregated statistics.
    ``N`` (the point count) is accepted for interface symmetry but unused.
    """
    c = _counts(S, prior.dim)
    if not np.any(c):
        return 0.0
    A = prior.d.sum()
    return float(
        gammaln(A) - gammaln(A + c.sum()) + np.sum(gammaln(prior.d + c) - gammaln(prior.d))
    )


def _log_multinomial_coef(X: np.ndarray) -> np.ndarray:
    return gammaln(X.sum(axis=1) + 1.0) - np.sum(gammaln(X + 1.0), axis=1)


def dirmult_log_predictive(post: DirichletPosterior, x, proportional: bool = False):
    """Log Dirichlet-multinomial mass of ``x`` (a count vector or rows of them).

    With ``proportional=True`` the multinomial coefficient, which does not
    depend on the component, is dropped.
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != post.dim:
        raise InputError(f"point dimension {X.shape[1]} != {post.dim}")
    totals = X.sum(axis=1)
    if np.any(totals <= 0):
        raise InputError("count vectors must contain at least one observation")
    out = (
        gammaln(post.total)
        - gammaln(post.total + totals)
        + np.sum(gammaln(post.d + X) - gammaln(post.d), axis=1)
    )
    if not proportional:
        out = out + _log_multinomial_coef(X)
    return float(out[0]) if single else out


def dirichlet_sample_params(post: DirichletPosterior, rng: np.random.Generator) -> np.ndarray:
    p = rng.dirichlet(post.d)
    s = p.sum()
    if not s > 0:
        # every gamma draw underflowed; fall back to the posterior mean
        p = post.d / post.total
        s = 1.0
    return p / s


class MultinomialDirichlet(ConjugateFamily):
    """Multinomial (count-vector) family bound to a Dirichlet prior."""

    name = "multinomial"

    def __init__(self, prior: DirichletPrior):
        super().__init__(prior.dim)
        self.prior = prior

    @classmethod
    def from_config(cls, dim: int, d=1.0) -> "MultinomialDirichlet":
        return cls(DirichletPrior(np.broadcast_to(np.asarray(d, dtype=float), (dim,)).copy()))

    @property
    def stat_dim(self) -> int:
        return self.dim

    def validate_points(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise InputError(f"expected count vectors of length {self.dim}, got shape {X.shape}")
        if not np.all(np.isfinite(X)) or np.any(X < 0) or np.any(X != np.round(X)):
            raise InputError("multinomial points must be nonnegative integer counts")
        if np.any(X.sum(axis=1) <= 0):
            raise InputError("every multinomial point needs at least one nonzero count")
        return X

    def point_stats(self, X: np.ndarray) -> np.ndarray:
        return X

    def posterior(self, S, N: float) -> DirichletPosterior:
        return dirichlet_posterior(self.prior, S)

    def log_marginal(self, S, N: float) -> float:
        return multinomial_log_marginal(self.prior, S, N)

    def log_predictive(self, post: DirichletPosterior, X: np.ndarray) -> np.ndarray:
        return dirmult_log_predictive(post, np.atleast_2d(X), proportional=True)

    def sample_params(self, post: DirichletPosterior, rng) -> np.ndarray:
        return dirichlet_sample_params(post, rng)

    def log_likelihood(self, params: np.ndarray, X: np.ndarray) -> np.ndarray:
        # the multinomial coefficient is shared by all components and dropped
        return np.sum(xlogy(X, params), axis=1)

    def prior_dict(self) -> dict:
        return {"family": self.name, "d": self.prior.d.tolist()}
