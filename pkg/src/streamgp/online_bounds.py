"""Online collapsed lower bound, its optimum over inducing sets, and the upper bound.

The carried-over posterior q_o(a) = N(m_a, S_a) enters through its
pseudo-likelihood: a Gaussian "observation" of a with precision
``P = S_a^{-1} - K'_aa^{-1}`` and natural mean ``g = S_a^{-1} m_a``. The
bound is evaluated with ``P`` and ``g`` only; the pseudo-noise covariance
``D_a = P^{-1}`` is formed (through an eigendecomposition) solely for the
reported breakdown, because it is unbounded when old data carried no
information in some direction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Optional

import numpy as np
from scipy.linalg.lapack import dpstrf

from .errors import DegenerateSummary, DimensionMismatch
from .kernels import Hyperparams, _as_2d
from .linalg import (
    DUPLICATE_TOL,
    PsdFactor,
    psd_factor,
    solve_psd,
    tri_solve,
    tri_solve_t,
)

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
GAIN_FLOOR = 1e-10
DENSE_CAP = 20000


def _sym(A):
    return 0.5 * (A + A.T)


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Everything carried from one batch to the next.

    ``mean``/``cov`` are q_o(a) at the inducing inputs ``Z``; ``theta`` the
    hyperparameters it was fitted under and ``prior_cov`` the (jittered)
    K'_aa. The remaining fields are the pseudo-likelihood in solved form.
    """

    Z: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    theta: Hyperparams
    prior_cov: np.ndarray
    precision_gain: np.ndarray
    natural_mean: np.ndarray
    log_det_ratio: float
    gain_eigvals: np.ndarray
    gain_eigvecs: np.ndarray
    n_clamped: int = 0

    @property
    def size(self) -> int:
        return self.Z.shape[0]

    @classmethod
    def build(cls, Z, mean, cov, theta: Hyperparams, *, prior_cov=None,
              precision_gain=None, natural_mean=None, log_det_ratio=None) -> "PosteriorSummary":
        """Derive the pseudo-likelihood of N(mean, cov) against the prior at ``Z``.

        The optional keyword arguments let a caller that already holds the
        quantities in a better-conditioned form pass them through.
        """
        Z = _as_2d(Z)
        mean = np.asarray(mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        M = Z.shape[0]
        if mean.shape[0] != M or cov.shape != (M, M):
            raise DimensionMismatch("summary mean/cov do not match the inducing inputs")
        if prior_cov is None:
            kf = psd_factor(theta.kernel.matrix(Z))
            prior_cov = kf.matrix()
        kf = psd_factor(prior_cov)
        prior_prec_diag = np.sum(tri_solve(kf, np.eye(M)) ** 2, axis=0)
        if precision_gain is None or natural_mean is None or log_det_ratio is None:
            sf = psd_factor(cov)
            if precision_gain is None:
                precision_gain = solve_psd(sf, np.eye(M)) - solve_psd(kf, np.eye(M))
            if natural_mean is None:
                natural_mean = solve_psd(sf, mean)
            if log_det_ratio is None:
                log_det_ratio = sf.log_det - kf.log_det
        P = _sym(np.asarray(precision_gain, dtype=float))
        if not np.all(np.isfinite(P)):
            raise DegenerateSummary("precision gain has non-finite entries")
        lam, V = np.linalg.eigh(P)
        scale = float(np.mean(np.diag(P)))
        if not scale > 0:
            scale = float(np.mean(prior_prec_diag))
        floor = GAIN_FLOOR * scale
        if not (np.isfinite(floor) and floor > 0):
            raise DegenerateSummary("cannot set a positive floor for the precision gain")
        low = lam < floor
        n_clamped = int(np.sum(low))
        if n_clamped:
            log.debug("clamped %d of %d precision-gain eigenvalues to %.3e", n_clamped, M, floor)
            lam = np.where(low, floor, lam)
            P = _sym((V * lam) @ V.T)
        return cls(Z, mean, cov, theta, np.asarray(prior_cov, dtype=float), P,
                   np.asarray(natural_mean, dtype=float).reshape(-1), float(log_det_ratio),
                   lam, V, n_clamped)

    @property
    def pseudo_noise(self) -> np.ndarray:
        """D_a = (S_a^{-1} - K'_aa^{-1})^{-1}."""
        return (self.gain_eigvecs / self.gain_eigvals) @ self.gain_eigvecs.T

    @property
    def pseudo_targets(self) -> np.ndarray:
        """D_a S_a^{-1} m_a, the pseudo-observations of a."""
        return self.gain_eigvecs @ ((self.gain_eigvecs.T @ self.natural_mean) / self.gain_eigvals)

    @property
    def m_tilde(self) -> np.ndarray:
        """K'_aa^{-1} m_a."""
        return solve_psd(psd_factor(self.prior_cov), self.mean)

    def _pseudo_terms(self):
        w = self.gain_eigvecs.T @ self.natural_mean
        logdet_D = -float(np.sum(np.log(self.gain_eigvals)))
        quad_D = float(np.sum(w**2 / self.gain_eigvals))
        return logdet_D, quad_D

    @property
    def delta(self) -> float:
        """The constant Delta_a collecting the old-posterior normalisers."""
        logdet_D, quad_D = self._pseudo_terms()
        return (-0.5 * self.log_det_ratio + 0.5 * logdet_D + 0.5 * self.size * LOG_2PI
                - 0.5 * float(self.mean @ self.natural_mean) + 0.5 * quad_D)

    @property
    def fit_constant(self) -> float:
        """Part of log N(y_hat; ...) that depends on the summary only."""
        logdet_D, quad_D = self._pseudo_terms()
        return -0.5 * self.size * LOG_2PI - 0.5 * logdet_D - 0.5 * quad_D

    @property
    def stable_constant(self) -> float:
        """``delta + fit_constant`` without forming D_a."""
        return -0.5 * self.log_det_ratio - 0.5 * float(self.mean @ self.natural_mean)

    def reconstruct(self):
        """Rebuild (m_a, S_a) from the pseudo-likelihood and the prior."""
        kf = psd_factor(self.prior_cov)
        prec = self.precision_gain + solve_psd(kf, np.eye(self.size))
        pf = psd_factor(_sym(prec))
        S = solve_psd(pf, np.eye(self.size))
        return solve_psd(pf, self.natural_mean), _sym(S)


@dataclass(frozen=True)
class BoundBreakdown:
    total: float
    fit_term: float
    delta: float
    trace_a: float
    trace_f: float


def _batch(X, y):
    X = _as_2d(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    return X, y


def _residual_floor(factor: PsdFactor, K: np.ndarray) -> float:
    # conditional variances at or below the jitter level are numerically zero
    return factor.jitter_used + DUPLICATE_TOL * max(float(np.mean(np.diag(K))), 0.0)


def _collapsed(summary: Optional[PosteriorSummary], X, y, Z, theta: Hyperparams, *,
               traces: bool = True, gradient: bool = False):
    """Shared Woodbury evaluation of the collapsed bound at inducing inputs Z."""
    X, y = _batch(X, y)
    Z = _as_2d(Z)
    if Z.shape[0] == 0:
        raise DimensionMismatch("the inducing set must be nonempty")
    kern = theta.kernel
    s2 = theta.noise_variance
    N, Mb = X.shape[0], Z.shape[0]

    Kbb = kern.matrix(Z)
    Fb = psd_factor(Kbb)
    Kbf = kern.matrix(Z, X)
    Af = tri_solve(Fb, Kbf)
    B = np.eye(Mb) + Af @ Af.T / s2
    ct = Af @ y / s2
    if summary is not None:
        Za = summary.Z
        P, g = summary.precision_gain, summary.natural_mean
        Kba = kern.matrix(Z, Za)
        Aa = tri_solve(Fb, Kba)
        B += Aa @ P @ Aa.T
        ct += Aa @ g
    FB = psd_factor(_sym(B))
    v = tri_solve(FB, ct)
    yy = float(y @ y)
    core = -0.5 * N * (LOG_2PI + np.log(s2)) - 0.5 * yy / s2 - 0.5 * FB.log_det + 0.5 * float(v @ v)

    out = SimpleNamespace(Fb=Fb, FB=FB, Af=Af, v=v, ct=ct, core=core, trace_f=0.0, trace_a=0.0,
                          rf=None, Ra=None, Kbb=Kbb, Kbf=Kbf)
    if summary is not None:
        out.Aa, out.Kba = Aa, Kba
    if traces:
        floor = _residual_floor(Fb, Kbb)
        rf = kern.diag(X) - np.sum(Af**2, axis=0)
        rf[rf <= floor] = 0.0
        out.rf = rf
        out.trace_f = -0.5 * float(np.sum(rf)) / s2
        if summary is not None:
            Ra = kern.matrix(Za) - Aa.T @ Aa
            dead = np.diag(Ra) <= floor
            Ra[dead, :] = 0.0
            Ra[:, dead] = 0.0
            out.Ra = Ra
            out.trace_a = -0.5 * float(np.sum(P * Ra))
    const = summary.stable_constant if summary is not None else 0.0
    out.total = core + const + out.trace_a + out.trace_f

    if gradient:
        out.grad = _collapsed_gradient(summary, X, y, Z, theta, out)
    return out


def _collapsed_gradient(summary, X, y, Z, theta, c):
    """Gradient of the bound with respect to the log-hyperparameters.

    Adjoint form: the derivative of the objective with respect to each
    kernel block (K_bb, K_bf, K_ba, K_aa, diag K_ff) is assembled once and
    contracted with the per-parameter kernel derivatives.
    """
    kern = theta.kernel
    s2 = theta.noise_variance
    N = X.shape[0]
    Fb, FB = c.Fb, c.FB
    Mb = Fb.n
    I = np.eye(Mb)

    Kinv = solve_psd(Fb, I)
    Binv = solve_psd(FB, I)
    Phinv = _sym(tri_solve_t(Fb, tri_solve_t(Fb, Binv).T))
    alpha = tri_solve_t(Fb, tri_solve_t(FB, c.v))
    E = tri_solve_t(Fb, c.Af)
    G_phi = -0.5 * Phinv - 0.5 * np.outer(alpha, alpha)

    G_bb = G_phi + 0.5 * Kinv - 0.5 / s2 * (E @ E.T)
    H_bf = E / s2 + 2.0 * (G_phi @ c.Kbf) / s2 + np.outer(alpha, y) / s2
    if summary is not None:
        P, g = summary.precision_gain, summary.natural_mean
        Ea = tri_solve_t(Fb, c.Aa)
        G_bb -= 0.5 * (Ea @ P @ Ea.T)
        H_ba = Ea @ P + 2.0 * (G_phi @ c.Kba @ P) + np.outer(alpha, g)
    G_bb = _sym(G_bb)

    KbfKfb = c.Kbf @ c.Kbf.T
    rsum = float(np.sum(c.rf)) if c.rf is not None else 0.0
    d_s2 = (-0.5 * N / s2 + 0.5 * float(y @ y) / s2**2 + 0.5 * rsum / s2**2
            - float(np.sum(G_phi * KbfKfb)) / s2**2 - float(alpha @ (c.Kbf @ y)) / s2**2)

    dKbb = kern.param_gradients(Z)
    dKbf = kern.param_gradients(Z, X)
    dkff = kern.diag_param_gradients(X)
    grads = []
    for j in range(kern.n_params):
        gj = float(np.sum(G_bb * dKbb[j])) + float(np.sum(H_bf * dKbf[j]))
        gj -= 0.5 / s2 * float(np.sum(dkff[j]))
        grads.append(gj)
    if summary is not None:
        dKba = kern.param_gradients(Z, summary.Z)
        dKaa = kern.param_gradients(summary.Z)
        for j in range(kern.n_params):
            grads[j] += float(np.sum(H_ba * dKba[j])) - 0.5 * float(np.sum(P * dKaa[j]))
    grads.append(s2 * d_s2)
    return np.array(grads)


def lower_bound(summary: Optional[PosteriorSummary], X, y, Z, theta: Hyperparams) -> BoundBreakdown:
    """Online collapsed lower bound at inducing inputs Z (hyperparameters ``theta``)."""
    c = _collapsed(summary, X, y, Z, theta)
    return _breakdown(summary, c)


def _breakdown(summary, c) -> BoundBreakdown:
    if summary is None:
        return BoundBreakdown(c.total, c.core, 0.0, c.trace_a, c.trace_f)
    return BoundBreakdown(c.total, c.core + summary.fit_constant, summary.delta, c.trace_a, c.trace_f)


def lower_bound_and_grad(summary, X, y, Z, theta: Hyperparams):
    """Bound breakdown plus the gradient of ``total`` in canonical log-parameter order."""
    c = _collapsed(summary, X, y, Z, theta, gradient=True)
    return _breakdown(summary, c), c.grad


def l_star(summary: Optional[PosteriorSummary], X, y, theta: Hyperparams) -> float:
    """Best attainable bound: every new input plus the old inducing inputs.

    With the inducing set equal to the augmented inputs the Nystrom terms
    vanish and the bound is log N(y_hat; 0, K_hat + Sigma) + Delta_a; it is
    evaluated through the same factor route as :func:`lower_bound`.
    Numerically duplicated inputs are dropped first (pivoted Cholesky) since
    they leave the spanned space unchanged but would force jitter.
    """
    X, y = _batch(X, y)
    Xh = X if summary is None else np.vstack([X, summary.Z])
    if Xh.shape[0] > DENSE_CAP:
        raise DimensionMismatch(f"{Xh.shape[0]} points exceed the dense cap of {DENSE_CAP}")
    return float(_collapsed(summary, X, y, spanning_subset(Xh, theta.kernel), theta, traces=False).total)


def spanning_subset(Z, kernel) -> np.ndarray:
    """Rows of ``Z`` whose kernel matrix has full numerical rank, in original order."""
    K = kernel.matrix(Z)
    tol = DUPLICATE_TOL * max(float(np.mean(np.diag(K))), 0.0)
    _, piv, rank, info = dpstrf(K, lower=1, tol=tol)
    if info < 0:
        raise DimensionMismatch("pivoted Cholesky rejected its input")
    return Z[np.sort(piv[:rank] - 1)]


def upper_bound(summary: Optional[PosteriorSummary], X, y, Zu, theta: Hyperparams) -> float:
    """Upper bound on ``l_star`` computed from the inducing set ``Zu``.

    The determinant term uses the Nystrom covariance plus Sigma; the
    quadratic term adds ``t I`` with t the total Nystrom residual. A rank
    deficient ``Zu`` is reduced to its spanning subset rather than jittered.
    """
    X, y = _batch(X, y)
    s2 = theta.noise_variance
    N = X.shape[0]
    c = _collapsed(summary, X, y, Zu, theta)
    if c.Fb.jitter_used > 0:
        c = _collapsed(summary, X, y, spanning_subset(Zu, theta.kernel), theta)
    t = -2.0 * s2 * c.trace_f
    if summary is not None:
        t += float(np.trace(c.Ra))
    Mb = c.Fb.n
    s2t = s2 + t
    Dhat = np.eye(Mb) + c.Af @ c.Af.T / s2t
    chat = c.Af @ y / s2t
    extra = 0.0
    const = 0.0
    if summary is not None:
        lam, V = summary.gain_eigvals, summary.gain_eigvecs
        w = V.T @ summary.natural_mean
        shrink = 1.0 / (1.0 + t * lam)
        # (D_a + tI)^{-1} and (D_a + tI)^{-1} D_a g in the eigenbasis of the gain
        P_t = (V * (lam * shrink)) @ V.T
        g_t = V @ (w * shrink)
        Dhat += c.Aa @ P_t @ c.Aa.T
        chat += c.Aa @ g_t
        extra = 0.5 * t * float(np.sum(w**2 * shrink))
        const = summary.stable_constant
    FD = psd_factor(_sym(Dhat))
    u = tri_solve(FD, chat)
    return (-0.5 * N * (LOG_2PI + np.log(s2)) - 0.5 * c.FB.log_det - 0.5 * float(y @ y) / s2t
            + extra + 0.5 * float(u @ u) + const)


def vips_threshold(u_star: float, l_noise: float, delta: float) -> float:
    """Stopping tolerance delta * |U - L_noise| in nats."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return delta * abs(u_star - l_noise)


def next_summary(summary: Optional[PosteriorSummary], X, y, Z, theta: Hyperparams) -> PosteriorSummary:
    """Summary carrying the optimal q(b) at ``Z`` under ``theta`` to the next batch."""
    c = _collapsed(summary, X, y, Z, theta, traces=False)
    return _summary_from(c, Z, theta)


def _optimal_qb_moments(c):
    Lb = c.Fb.lower
    m = Lb @ tri_solve_t(c.FB, c.v)
    R = tri_solve(c.FB, Lb.T)
    return m, _sym(R.T @ R)


def _summary_from(c, Z, theta) -> PosteriorSummary:
    m, S = _optimal_qb_moments(c)
    Fb = c.Fb
    # S^{-1} - K^{-1} = L^{-T} (B - I) L^{-1}, S^{-1} m = L^{-T} c~, |S|/|K| = 1/|B|
    gain_inner = c.FB.matrix() - np.eye(Fb.n)
    P = _sym(tri_solve_t(Fb, tri_solve_t(Fb, gain_inner).T))
    g = tri_solve_t(Fb, c.ct)
    return PosteriorSummary.build(Z, m, S, theta, prior_cov=Fb.matrix(), precision_gain=P,
                                  natural_mean=g, log_det_ratio=-c.FB.log_det)
