"""Sparse variational posterior: prediction and the optimal q(b) for a batch."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch
from .kernels import Hyperparams, _as_2d
from .linalg import psd_factor, tri_solve
from .online_bounds import PosteriorSummary, _collapsed, _optimal_qb_moments, _summary_from


@dataclass(frozen=True, eq=False)
class SparsePosterior:
    """q(u) = N(m, S) at inducing inputs Z."""

    Z: np.ndarray
    m: np.ndarray
    S: np.ndarray
    hyperparams: Hyperparams

    def __post_init__(self):
        Z = _as_2d(self.Z)
        m = np.asarray(self.m, dtype=float).reshape(-1)
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        if m.shape[0] != Z.shape[0] or S.shape != (Z.shape[0], Z.shape[0]):
            raise DimensionMismatch("q(u) moments do not match the inducing inputs")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "S", S)

    @property
    def size(self) -> int:
        return self.Z.shape[0]


def predict(posterior: SparsePosterior, Xstar):
    """Predictive mean and latent marginal variance at ``Xstar``."""
    Xstar = _as_2d(Xstar)
    if Xstar.shape[1] != posterior.Z.shape[1]:
        raise DimensionMismatch("test inputs have the wrong dimension")
    kern = posterior.hyperparams.kernel
    F = psd_factor(kern.matrix(posterior.Z))
    A = tri_solve(F, kern.matrix(posterior.Z, Xstar))
    mean = A.T @ tri_solve(F, posterior.m)
    # K_*u K^{-1} (K - S) K^{-1} K_u*: with W = L^{-1} S L^{-T}, var = k** - |A|^2 + A^T W A
    Linv_S = tri_solve(F, posterior.S)
    W = tri_solve(F, Linv_S.T)
    var = kern.diag(Xstar) - np.sum(A**2, axis=0) + np.sum(A * (W @ A), axis=0)
    return mean, np.maximum(var, 0.0)


def optimal_qb(summary: Optional[PosteriorSummary], X, y, Z, hyperparams: Hyperparams) -> SparsePosterior:
    """The q(b) that maximises the online bound for fixed ``Z`` and hyperparameters."""
    c = _collapsed(summary, X, y, Z, hyperparams, traces=False)
    m, S = _optimal_qb_moments(c)
    return SparsePosterior(_as_2d(Z), m, S, hyperparams)


def optimal_qb_and_summary(summary, X, y, Z, hyperparams: Hyperparams):
    """Optimal q(b) together with the summary carried to the next batch (one factorisation)."""
    c = _collapsed(summary, X, y, Z, hyperparams, traces=False)
    nxt = _summary_from(c, Z, hyperparams)
    return SparsePosterior(nxt.Z, nxt.mean, nxt.cov, hyperparams), nxt
