"""Full-covariance Gaussian components under a Normal-Inverse-Wishart prior."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln

from .errors import ConfigurationError, InputError, NumericalError
from .family import (
    SYMMETRY_TOL,
    ConjugateFamily,
    SufficientStats,
    multivariate_log_gamma,
    symmetrize,
)

log = logging.getLogger(__name__)

LOG_PI = np.log(np.pi)
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class NiwPrior:
    """NIW hyperparameters (kappa, m, nu, Psi).

    ``Psi`` is normalised so that the inverse-Wishart scale matrix is
    ``nu * Psi``, i.e. ``Psi`` is on the same footing as a covariance.
    """

    kappa: float
    m: np.ndarray
    nu: float
    psi: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.m, dtype=float))
        psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        D = m.shape[0]
        if psi.shape != (D, D):
            raise ConfigurationError(f"Psi has shape {psi.shape}, expected {(D, D)}")
        if not self.kappa > 0:
            raise ConfigurationError(f"kappa must be positive, got {self.kappa}")
        if not self.nu > D - 1:
            raise ConfigurationError(f"nu must exceed D-1={D - 1}, got {self.nu}")
        if np.max(np.abs(psi - psi.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(psi))):
            raise ConfigurationError("Psi is not symmetric")
        psi = symmetrize(psi)
        try:
            np.linalg.cholesky(psi)
        except np.linalg.LinAlgError:
            raise ConfigurationError("Psi is not positive definite") from None
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "nu", float(self.nu))
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "psi", psi)

    @property
    def dim(self) -> int:
        return self.m.shape[0]

    @classmethod
    def isotropic(cls, dim: int, kappa=1.0, nu=None, psi_scale=1.0, mean=0.0):
        nu = dim + 2.0 if nu is None else nu
        return cls(kappa, np.full(dim, float(mean)), nu, np.eye(dim) * psi_scale)


@dataclass(frozen=True, eq=False)
class NiwPosterior:
    kappa: float
    m: np.ndarray
    nu: float
    scale: np.ndarray  # nu * Psi
    chol: np.ndarray  # lower Cholesky factor of scale
    logdet: float  # log |scale|

    @property
    def psi(self) -> np.ndarray:
        return self.scale / self.nu

    @property
    def dim(self) -> int:
        return self.m.shape[0]


@dataclass(frozen=True, eq=False)
class GaussianParams:
    mu: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray


def _cholesky_with_jitter(a: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    D = a.shape[0]
    jitter = 1e-10 * np.trace(a) / D
    log.warning("%s lost positive definiteness; adding %.3g to the diagonal", what, jitter)
    try:
        return np.linalg.cholesky(a + jitter * np.eye(D))
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"{what} is not positive definite even after jitter; eigenvalues {np.linalg.eigvalsh(a)}"
        ) from None


def _split_stats(S, D: int):
    values = S.values if isinstance(S, SufficientStats) else np.asarray(S, dtype=float)
    if values.shape != (D + D * D,):
        raise InputError(f"Gaussian stats of length {values.shape} do not match D={D}")
    return values[:D], values[D:].reshape(D, D)


def _prior_as_posterior(prior: NiwPrior) -> NiwPosterior:
    scale = prior.nu * prior.psi
    chol = _cholesky_with_jitter(scale, "prior scale")
    return NiwPosterior(prior.kappa, prior.m, prior.nu, scale, chol,
                        2.0 * np.sum(np.log(np.diag(chol))))


def niw_posterior(prior: NiwPrior, S, N: float) -> NiwPosterior:
    """Conjugate NIW update from (possibly kernel-weighted) stats and count."""
    if N < 0:
        raise InputError(f"count must be nonnegative, got {N}")
    D = prior.dim
    sum_x, sum_xxT = _split_stats(S, D)
    if N == 0:
        return _prior_as_posterior(prior)
    kappa = prior.kappa + N
    nu = prior.nu + N
    m = (prior.kappa * prior.m + sum_x) / kappa
    scale = (
        prior.nu * prior.psi
        + prior.kappa * np.outer(prior.m, prior.m)
        + sum_xxT
        - kappa * np.outer(m, m)
    )
    scale = symmetrize(scale)
    chol = _cholesky_with_jitter(scale, "posterior scale")
    return NiwPosterior(kappa, m, nu, scale, chol, 2.0 * np.sum(np.log(np.diag(chol))))


def niw_log_marginal(prior: NiwPrior, S, N: float) -> float:
    """log p(X) with the data integrated against the NIW prior."""
    if N == 0:
        _split_stats(S, prior.dim)
        return 0.0
    post = niw_posterior(prior, S, N)
    return _log_marginal_from_post(prior, post, N)


def _log_marginal_from_post(prior: NiwPrior, post: NiwPosterior, N: float) -> float:
    D = prior.dim
    prior_logdet = np.linalg.slogdet(prior.nu * prior.psi)[1]
    return float(
        multivariate_log_gamma(post.nu / 2.0, D)
        - multivariate_log_gamma(prior.nu / 2.0, D)
        + 0.5 * prior.nu * prior_logdet
        - 0.5 * post.nu * post.logdet
        - 0.5 * N * D * LOG_PI
        + 0.5 * D * (np.log(prior.kappa) - np.log(post.kappa))
    )


def niw_log_predictive(post: NiwPosterior, x) -> np.ndarray | float:
    """Multivariate Student-t log density of ``x`` (a point or rows of points)."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    D = post.dim
    if X.shape[1] != D:
        raise InputError(f"point dimension {X.shape[1]} != {D}")
    df = post.nu - D + 1
    if df <= 0:
        raise ConfigurationError(f"nu*={post.nu} too small for D={D}")
    # shape matrix = c * scale, c = (kappa+1) / (kappa * df)
    c = (post.kappa + 1.0) / (post.kappa * df)
    diff = X - post.m
    z = solve_triangular(post.chol, diff.T, lower=True, check_finite=False)
    maha = np.sum(z * z, axis=0) / c
    out = (
        gammaln(0.5 * (df + D))
        - gammaln(0.5 * df)
        - 0.5 * D * (np.log(df) + LOG_PI)
        - 0.5 * (post.logdet + D * np.log(c))
        - 0.5 * (df + D) * np.log1p(maha / df)
    )
    return float(out[0]) if single else out


def sample_inverse_wishart(df: float, scale: np.ndarray, rng: np.random.Generator,
                           scale_chol: np.ndarray | None = None) -> np.ndarray:
    """Draw Sigma ~ IW(df, scale) via the Bartlett decomposition of its inverse."""
    D = scale.shape[0]
    if scale_chol is None:
        scale_chol = np.linalg.cholesky(scale)
    # Sigma^{-1} ~ W(df, scale^{-1}) = (U A)(U A)^T with U = scale_chol^{-T}
    A = np.zeros((D, D))
    A[np.diag_indices(D)] = np.sqrt(rng.chisquare(df - np.arange(D)))
    tril = np.tril_indices(D, -1)
    A[tril] = rng.standard_normal(len(tril[0]))
    # Sigma = (U A)^{-T} (U A)^{-1} = scale_chol A^{-T} A^{-1} scale_chol^T
    B = solve_triangular(A, scale_chol.T, lower=True, check_finite=False)  # A^{-1} L^T
    return symmetrize(B.T @ B)


def niw_sample_params(post: NiwPosterior, rng: np.random.Generator) -> GaussianParams:
    sigma = sample_inverse_wishart(post.nu, post.scale, rng, post.chol)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        sigma = sample_inverse_wishart(post.nu, post.scale, rng, post.chol)
        sigma = sigma + 1e-10 * np.trace(sigma) / post.dim * np.eye(post.dim)
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise NumericalError("sampled covariance is not positive definite") from None
    mu = post.m + chol @ rng.standard_normal(post.dim) / np.sqrt(post.kappa)
    return GaussianParams(mu, sigma, chol)


def gaussian_log_likelihood(params: GaussianParams, X: np.ndarray) -> np.ndarray:
    D = params.mu.shape[0]
    z = solve_triangular(params.chol, (X - params.mu).T, lower=True, check_finite=False)
    return (
        -0.5 * D * LOG_2PI
        - np.sum(np.log(np.diag(params.chol)))
        - 0.5 * np.sum(z * z, axis=0)
    )


class GaussianNIW(ConjugateFamily):
    """Gaussian family bound to a NIW prior."""

    name = "gaussian"

    def __init__(self, prior: NiwPrior):
        super().__init__(prior.dim)
        self.prior = prior
        self._prior_post = _prior_as_posterior(prior)

    @classmethod
    def from_config(cls, dim: int, kappa: float = 1.0, mean=0.0, nu: float | None = None,
                    psi=1.0) -> "GaussianNIW":
        psi_arr = np.asarray(psi, dtype=float)
        if psi_arr.ndim == 0:
            psi_arr = np.eye(dim) * float(psi_arr)
        m = np.broadcast_to(np.asarray(mean, dtype=float), (dim,)).copy()
        return cls(NiwPrior(kappa, m, dim + 2.0 if nu is None else nu, psi_arr))

    @property
    def stat_dim(self) -> int:
        return self.dim + self.dim * self.dim

    def validate_points(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise InputError(f"expected points of dimension {self.dim}, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InputError("points contain non-finite values")
        return X

    def point_stats(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        outer = (X[:, :, None] * X[:, None, :]).reshape(n, -1)
        return np.concatenate([X, outer], axis=1)

    def posterior(self, S, N: float) -> NiwPosterior:
        if N == 0:
            return self._prior_post
        return niw_posterior(self.prior, S, N)

    def log_marginal(self, S, N: float) -> float:
        if N == 0:
            return 0.0
        return _log_marginal_from_post(self.prior, niw_posterior(self.prior, S, N), N)

    def log_predictive(self, post: NiwPosterior, X: np.ndarray) -> np.ndarray:
        return niw_log_predictive(post, np.atleast_2d(X))

    def sample_params(self, post: NiwPosterior, rng) -> GaussianParams:
        return niw_sample_params(post, rng)

    def log_likelihood(self, params: GaussianParams, X: np.ndarray) -> np.ndarray:
        return gaussian_log_likelihood(params, X)

    def prior_dict(self) -> dict:
        return {
            "family": self.name,
            "kappa": self.prior.kappa,
            "m": self.prior.m.tolist(),
            "nu": self.prior.nu,
            "psi": self.prior.psi.tolist(),
        }
