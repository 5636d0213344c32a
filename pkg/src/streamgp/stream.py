"""Continual-learning driver: per batch select, optimise, summarise and evaluate."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .errors import BatchAborted, DimensionMismatch, EmptyTestSet, StreamGPError
from .gp_exact import (
    EXACT_CAP,
    VARIANCE_FLOOR,
    ExactPosterior,
    RunningMoments,
    exact_lml_and_grad,
    exact_predict,
    update_moments,
)
from .hyperopt import OptimizerConfig, optimize
from .kernels import NOISE_FLOOR, Hyperparams, _as_2d
from .online_bounds import DENSE_CAP, PosteriorSummary, lower_bound_and_grad
from .selection import SelectionConfig, VIPS, select
from .svgp import SparsePosterior, optimal_qb_and_summary, predict

LOG_BOUND = 30.0


@dataclass(frozen=True, eq=False)
class InputScaler:
    """Z-scoring with statistics frozen at the first batch."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "InputScaler":
        X = _as_2d(X)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        # constant columns (or single-row batches) are only centred
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    def transform(self, X) -> np.ndarray:
        return (_as_2d(X) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


@dataclass(frozen=True, eq=False)
class StreamState:
    summary: Optional[PosteriorSummary]
    theta: Hyperparams
    moments: RunningMoments
    batch_index: int
    selection: SelectionConfig
    standardize: bool = False
    scaler: Optional[InputScaler] = None

    @classmethod
    def initial(cls, theta: Hyperparams, selection: SelectionConfig, standardize: bool = False) -> "StreamState":
        return cls(None, theta, RunningMoments(), 0, selection, standardize)

    @property
    def inducing_count(self) -> int:
        return 0 if self.summary is None else self.summary.size

    @property
    def posterior(self) -> Optional[SparsePosterior]:
        if self.summary is None:
            return None
        s = self.summary
        return SparsePosterior(s.Z, s.mean, s.cov, s.theta)

    def transform(self, X) -> np.ndarray:
        X = _as_2d(X)
        return self.scaler.transform(X) if self.scaler is not None else X


@dataclass(frozen=True, eq=False)
class BatchReport:
    """Per-batch record. Bound values are those seen during selection (previous hyperparameters)."""

    batch_index: int
    M_before: int
    M_after: int
    l_hat: float
    l_star: float
    u_hat: float
    alpha: float
    saturated: bool
    l_noise: float
    theta_after: Hyperparams
    l_hat_optimized: float
    opt_iterations: int
    converged: bool
    n_clamped: int
    wall_clock: float
    rmse: float = math.nan
    nlpd: float = math.nan
    rmse_rel_pct: float = math.nan
    nlpd_rel_pct: float = math.nan

    def with_metrics(self, m: "Metrics") -> "BatchReport":
        return replace(self, rmse=m.rmse, nlpd=m.nlpd, rmse_rel_pct=m.rmse_rel_pct, nlpd_rel_pct=m.nlpd_rel_pct)


def hyper_bounds(theta: Hyperparams):
    n = theta.kernel.n_params
    return [(-LOG_BOUND, LOG_BOUND)] * n + [(math.log(NOISE_FLOOR), LOG_BOUND)]


def process_batch(state: StreamState, X, y, *, optimizer: OptimizerConfig = OptimizerConfig(),
                  optimize_hyperparams: bool = True,
                  dense_cap: int = DENSE_CAP) -> Tuple[StreamState, BatchReport]:
    """Advance the stream by one batch.

    Numerical failures raise :class:`BatchAborted`; the input state is
    immutable and therefore untouched.
    """
    t0 = time.perf_counter()
    X = _as_2d(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] == 0 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch("a batch needs matching, nonempty inputs and targets")
    if state.summary is not None and X.shape[1] != state.summary.Z.shape[1]:
        raise DimensionMismatch("batch dimension differs from earlier batches")
    try:
        scaler = state.scaler
        if scaler is None and state.standardize:
            scaler = InputScaler.fit(X)
        Xs = scaler.transform(X) if scaler is not None else X
        moments = update_moments(state.moments, y)
        summary = state.summary
        sel = select(summary, Xs, y, state.theta, state.selection, moments, dense_cap)
        Z = sel.Z
        theta = state.theta
        iters, converged = 0, True
        l_opt = sel.l_hat
        if optimize_hyperparams:
            def objective(v):
                b, g = lower_bound_and_grad(summary, Xs, y, Z, theta.from_vector(v))
                return b.total, g

            res = optimize(objective, theta.to_vector(), optimizer, hyper_bounds(theta))
            theta = theta.from_vector(res.theta)
            iters, converged, l_opt = res.iterations, res.converged, res.value
        _, nxt = optimal_qb_and_summary(summary, Xs, y, Z, theta)
    except (StreamGPError, np.linalg.LinAlgError) as exc:
        raise BatchAborted(state.batch_index, exc) from exc

    alpha = sel.threshold_at_stop if isinstance(state.selection, VIPS) else math.nan
    new_state = replace(state, summary=nxt, theta=theta, moments=moments,
                        batch_index=state.batch_index + 1, scaler=scaler)
    report = BatchReport(
        batch_index=state.batch_index,
        M_before=state.inducing_count,
        M_after=Z.shape[0],
        l_hat=float(sel.l_hat),
        l_star=float(sel.l_star),
        u_hat=float(sel.u_hat),
        alpha=float(alpha),
        saturated=bool(sel.saturated),
        l_noise=float(sel.l_noise),
        theta_after=theta,
        l_hat_optimized=float(l_opt),
        opt_iterations=int(iters),
        converged=bool(converged),
        n_clamped=nxt.n_clamped,
        wall_clock=time.perf_counter() - t0,
    )
    return new_state, report


@dataclass(frozen=True)
class Metrics:
    rmse: float
    nlpd: float
    rmse_rel_pct: float = math.nan
    nlpd_rel_pct: float = math.nan


def predictive_metrics(mean, latent_var, noise_variance: float, y) -> Metrics:
    """RMSE of the mean and mean negative log predictive density including observation noise."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 0:
        raise EmptyTestSet("no test points")
    var = np.maximum(np.asarray(latent_var, dtype=float) + noise_variance, VARIANCE_FLOOR)
    r = y - np.asarray(mean, dtype=float)
    rmse = float(np.sqrt(np.mean(r**2)))
    nlpd = float(np.mean(0.5 * np.log(2 * np.pi * var) + 0.5 * r**2 / var))
    return Metrics(rmse, nlpd)


def relative_pct(method: float, exact: float, noise: float) -> float:
    """100 (method - exact) / |noise - exact|."""
    denom = abs(noise - exact)
    if not denom > 0:
        return math.nan
    return 100.0 * (method - exact) / denom


def noise_reference(moments: RunningMoments, y_test) -> Metrics:
    y = np.asarray(y_test, dtype=float).reshape(-1)
    return predictive_metrics(np.full(y.size, moments.mean), np.zeros(y.size), moments.variance, y)


def fit_exact_hyperparams(X, y, theta0: Hyperparams, optimizer: OptimizerConfig = OptimizerConfig(),
                          cap: int = EXACT_CAP) -> Hyperparams:
    def objective(v):
        return exact_lml_and_grad(X, y, theta0.from_vector(v), cap)

    res = optimize(objective, theta0.to_vector(), optimizer, hyper_bounds(theta0))
    return theta0.from_vector(res.theta)


def exact_reference(X, y, theta: Hyperparams, X_test, y_test, cap: int = EXACT_CAP) -> Metrics:
    post = ExactPosterior.fit(X, y, theta, cap)
    mean, var = exact_predict(post, X_test)
    return predictive_metrics(mean, var, theta.noise_variance, y_test)


def evaluate(state: StreamState, X_test, y_test, exact_ref: Optional[Metrics] = None,
             noise_ref: Optional[Metrics] = None) -> Metrics:
    """Test metrics of the current posterior, with relative percentages when both references are given."""
    if state.summary is None:
        raise ValueError("no batch has been processed yet")
    y_test = np.asarray(y_test, dtype=float).reshape(-1)
    if y_test.size == 0:
        raise EmptyTestSet("no test points")
    mean, var = predict(state.posterior, state.transform(X_test))
    m = predictive_metrics(mean, var, state.theta.noise_variance, y_test)
    if exact_ref is not None and noise_ref is not None:
        m = replace(m, rmse_rel_pct=relative_pct(m.rmse, exact_ref.rmse, noise_ref.rmse),
                    nlpd_rel_pct=relative_pct(m.nlpd, exact_ref.nlpd, noise_ref.nlpd))
    return m
