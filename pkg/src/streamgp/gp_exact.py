"""Exact GP regression (the full-batch oracle) and the independent-noise baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapExceeded, DimensionMismatch, InsufficientData
from .kernels import Hyperparams, _as_2d
from .linalg import PsdFactor, psd_factor, solve_psd, tri_solve

LOG_2PI = np.log(2.0 * np.pi)
EXACT_CAP = 5000
VARIANCE_FLOOR = 1e-8


def _check(X, y, cap):
    X = _as_2d(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    if X.shape[0] > cap:
        raise CapExceeded(f"{X.shape[0]} points exceeds the exact-GP cap of {cap}")
    return X, y


@dataclass(frozen=True, eq=False)
class ExactPosterior:
    X: np.ndarray
    factor: PsdFactor
    weights: np.ndarray
    hyperparams: Hyperparams

    @classmethod
    def fit(cls, X, y, hyperparams: Hyperparams, cap: int = EXACT_CAP) -> "ExactPosterior":
        X, y = _check(X, y, cap)
        K = hyperparams.kernel.matrix(X) + hyperparams.noise_variance * np.eye(X.shape[0])
        factor = psd_factor(K)
        return cls(X, factor, solve_psd(factor, y), hyperparams)


def exact_lml(X, y, hyperparams: Hyperparams, cap: int = EXACT_CAP) -> float:
    """log N(y; 0, K_ff + noise I)."""
    X, y = _check(X, y, cap)
    K = hyperparams.kernel.matrix(X) + hyperparams.noise_variance * np.eye(X.shape[0])
    factor = psd_factor(K)
    r = tri_solve(factor, y)
    return -0.5 * (float(r @ r) + factor.log_det + X.shape[0] * LOG_2PI)


def exact_lml_and_grad(X, y, hyperparams: Hyperparams, cap: int = EXACT_CAP):
    """Exact LML and its gradient with respect to the log-hyperparameters."""
    X, y = _check(X, y, cap)
    n = X.shape[0]
    K = hyperparams.kernel.matrix(X) + hyperparams.noise_variance * np.eye(n)
    factor = psd_factor(K)
    alpha = solve_psd(factor, y)
    value = -0.5 * (float(y @ alpha) + factor.log_det + n * LOG_2PI)
    # d LML = 0.5 tr((alpha alpha^T - K^{-1}) dK)
    W = np.outer(alpha, alpha) - solve_psd(factor, np.eye(n))
    grads = [0.5 * float(np.sum(W * dK)) for dK in hyperparams.kernel.param_gradients(X)]
    grads.append(0.5 * hyperparams.noise_variance * float(np.trace(W)))
    return value, np.array(grads)


def exact_predict(posterior: ExactPosterior, Xstar):
    """Predictive mean and latent marginal variance."""
    Xstar = _as_2d(Xstar)
    if Xstar.shape[1] != posterior.X.shape[1]:
        raise DimensionMismatch("test inputs have the wrong dimension")
    kern = posterior.hyperparams.kernel
    Ks = kern.matrix(posterior.X, Xstar)
    mean = Ks.T @ posterior.weights
    A = tri_solve(posterior.factor, Ks)
    var = kern.diag(Xstar) - np.sum(A**2, axis=0)
    return mean, np.maximum(var, 0.0)


@dataclass(frozen=True)
class RunningMoments:
    """Streaming count, mean and population variance of the outputs."""

    count: int = 0
    mean: float = 0.0
    variance: float = 0.0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be non-negative")


def update_moments(moments: RunningMoments, y_batch) -> RunningMoments:
    """Merge a batch into the running moments (Chan et al. pairwise update)."""
    y = np.asarray(y_batch, dtype=float).reshape(-1)
    nb = y.size
    if nb == 0:
        return moments
    mb = float(np.mean(y))
    m2b = float(np.sum((y - mb) ** 2))
    na = moments.count
    if na == 0:
        return RunningMoments(nb, mb, m2b / nb)
    n = na + nb
    d = mb - moments.mean
    mean = moments.mean + d * nb / n
    m2 = moments.variance * na + m2b + d * d * na * nb / n
    return RunningMoments(n, mean, max(m2 / n, 0.0))


def gaussian_logpdf_sum(y, mean: float, variance: float) -> float:
    y = np.asarray(y, dtype=float).reshape(-1)
    variance = max(variance, VARIANCE_FLOOR)
    return float(-0.5 * np.sum((y - mean) ** 2) / variance - 0.5 * y.size * (LOG_2PI + np.log(variance)))


def noise_lml(moments: RunningMoments, y_batch) -> float:
    """Sum over the batch of log N(y_i; mean, variance) under the running moments."""
    if moments.count < 2:
        raise InsufficientData("need at least two observations for the noise model")
    return gaussian_logpdf_sum(y_batch, moments.mean, moments.variance)
