"""Dense symmetric positive-definite linear algebra with an explicit jitter policy.

Every bound evaluation in the package goes through :class:`PsdFactor`; no
explicit matrix inverses are formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, FactorizationFailed, NonPositiveSchurComplement

_EPS = np.finfo(float).eps
DUPLICATE_TOL = 1e-12


@dataclass(frozen=True)
class JitterPolicy:
    """Jitter escalation schedule.

    ``initial=None`` means ``1e-8`` times the mean diagonal of the matrix being
    factorised. Zero jitter is always tried first.
    """

    initial: Optional[float] = None
    growth_factor: float = 10.0
    max_attempts: int = 6

    def __post_init__(self):
        if self.initial is not None and not self.initial > 0:
            raise ValueError("initial jitter must be positive")
        if not self.growth_factor > 1:
            raise ValueError("growth_factor must exceed 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")

    def schedule(self, mean_diag: float):
        base = self.initial if self.initial is not None else 1e-8 * max(mean_diag, _EPS)
        yield 0.0
        for k in range(self.max_attempts):
            yield base * self.growth_factor**k


DEFAULT_POLICY = JitterPolicy()


@dataclass(frozen=True)
class PsdFactor:
    """Lower Cholesky factor of ``A + jitter_used * I``."""

    lower: np.ndarray
    log_det: float
    jitter_used: float = 0.0

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def matrix(self) -> np.ndarray:
        return self.lower @ self.lower.T


def _cholesky(A: np.ndarray) -> Optional[np.ndarray]:
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(L)
    if not np.all(np.isfinite(L)):
        return None
    # tiny pivots mean the matrix is numerically rank deficient
    if d.size and d.min() ** 2 <= A.shape[0] * _EPS * np.max(np.diag(A)):
        return None
    return L


def psd_factor(A, policy: JitterPolicy = DEFAULT_POLICY) -> PsdFactor:
    """Factorise a symmetric PSD matrix, adding the smallest jitter that works."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n == 0:
        return PsdFactor(np.zeros((0, 0)), 0.0, 0.0)
    scale = np.max(np.abs(A))
    if not np.isfinite(scale):
        raise FactorizationFailed("matrix has non-finite entries")
    if np.max(np.abs(A - A.T)) > 1e-10 * max(scale, _EPS):
        raise DimensionMismatch("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    mean_diag = float(np.mean(np.diag(A)))
    for jitter in policy.schedule(mean_diag):
        L = _cholesky(A + jitter * np.eye(n)) if jitter else _cholesky(A)
        if L is not None:
            return PsdFactor(L, 2.0 * float(np.sum(np.log(np.diag(L)))), jitter)
    raise FactorizationFailed(
        f"{n}x{n} matrix not positive definite after {policy.max_attempts} jitter escalations"
    )


def tri_solve(factor: PsdFactor, B) -> np.ndarray:
    """Return ``L^{-1} B``."""
    return solve_triangular(factor.lower, B, lower=True, check_finite=False)


def tri_solve_t(factor: PsdFactor, B) -> np.ndarray:
    """Return ``L^{-T} B``."""
    return solve_triangular(factor.lower, B, lower=True, trans="T", check_finite=False)


def solve_psd(factor: PsdFactor, B) -> np.ndarray:
    """Solve ``(A + jitter I) X = B`` with two triangular solves."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] != factor.n:
        raise DimensionMismatch(f"factor is {factor.n}x{factor.n} but B has {B.shape[0]} rows")
    if factor.n == 0:
        return np.zeros_like(B)
    return tri_solve_t(factor, tri_solve(factor, B))


def rank_one_update(factor: PsdFactor, column, diag: float) -> PsdFactor:
    """Extend the factor by one row/column.

    ``column`` holds the cross terms between the existing points and the new
    one, ``diag`` the new diagonal entry. The factor's jitter is added to the
    new diagonal so the result factorises the jittered extended matrix.
    """
    column = np.asarray(column, dtype=float).reshape(-1)
    n = factor.n
    if column.shape[0] != n:
        raise DimensionMismatch(f"column has length {column.shape[0]}, factor is {n}x{n}")
    d = float(diag) + factor.jitter_used
    l = tri_solve(factor, column) if n else column
    schur = d - float(l @ l)
    diag_old = np.sum(factor.lower**2, axis=1)
    mean_diag = (float(np.sum(diag_old)) + d) / (n + 1)
    if not schur > DUPLICATE_TOL * mean_diag:
        raise NonPositiveSchurComplement(
            f"Schur complement {schur:.3e} below {DUPLICATE_TOL:g} x mean diagonal"
        )
    pivot = np.sqrt(schur)
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = factor.lower
    L[n, :n] = l
    L[n, n] = pivot
    return PsdFactor(L, factor.log_det + 2.0 * np.log(pivot), factor.jitter_used)


def gauss_kl(mean0, cov0, mean1, cov1, policy: JitterPolicy = DEFAULT_POLICY) -> float:
    """KL[N(mean0, cov0) || N(mean1, cov1)] in nats."""
    mean0 = np.asarray(mean0, dtype=float).reshape(-1)
    mean1 = np.asarray(mean1, dtype=float).reshape(-1)
    cov0 = np.atleast_2d(np.asarray(cov0, dtype=float))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    k = mean0.shape[0]
    if not (mean1.shape[0] == k and cov0.shape == (k, k) and cov1.shape == (k, k)):
        raise DimensionMismatch("Gaussian dimensions disagree")
    f0 = psd_factor(cov0, policy)
    f1 = psd_factor(cov1, policy)
    A = solve_triangular(f1.lower, f0.lower, lower=True, check_finite=False)
    r = tri_solve(f1, mean1 - mean0)
    return 0.5 * (float(np.sum(A**2)) + float(r @ r) - k + f1.log_det - f0.log_det)
