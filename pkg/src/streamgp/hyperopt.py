"""Quasi-Newton maximisation of a smooth objective over log-hyperparameters."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, FactorizationFailed, NonFiniteObjective

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    """L-BFGS-B settings.

    ``trust_radius`` confines each inner run to a box of that half-width (log
    units) around its start; the box is re-centred while the optimum sits on
    its edge. It stops a single line search from leaping across many orders
    of magnitude. ``None`` runs one unconstrained pass. ``value_tolerance``
    is the relative objective-reduction stopping test.
    """

    max_iterations: int = 200
    gradient_tolerance: float = 1e-6
    value_tolerance: float = 1e7 * np.finfo(float).eps
    memory_pairs: int = 10
    trust_radius: Optional[float] = 2.0
    max_recentres: int = 20

    def __post_init__(self):
        if self.max_iterations < 0 or self.memory_pairs < 1 or not self.gradient_tolerance > 0:
            raise ConfigError("optimizer settings must be positive")
        if not self.value_tolerance >= 0:
            raise ConfigError("value_tolerance must be non-negative")
        if self.trust_radius is not None and not self.trust_radius > 0:
            raise ConfigError("trust_radius must be positive")
        if self.max_recentres < 0:
            raise ConfigError("max_recentres must be non-negative")


@dataclass(frozen=True)
class OptimizeResult:
    theta: np.ndarray
    value: float
    iterations: int
    converged: bool
    message: str = ""


def optimize(objective: Callable[[np.ndarray], Tuple[float, np.ndarray]], theta0,
             config: OptimizerConfig = OptimizerConfig(),
             bounds: Optional[Sequence[Tuple[float, float]]] = None) -> OptimizeResult:
    """Maximise ``objective`` (returning value and gradient) with L-BFGS-B.

    The best point ever evaluated is returned, so the result is never worse
    than ``theta0``. Evaluations that fail to factorise count as -inf.
    ``converged`` means the last inner run met a stopping test away from the
    trust-box edge.
    """
    theta0 = np.asarray(theta0, dtype=float)
    v0, g0 = objective(theta0)
    g0 = np.asarray(g0, dtype=float)
    if not (np.isfinite(v0) and np.all(np.isfinite(g0))):
        raise NonFiniteObjective("objective is not finite at the starting point")
    best = {"x": theta0.copy(), "v": float(v0), "g": g0}
    if np.max(np.abs(g0), initial=0.0) <= config.gradient_tolerance or config.max_iterations == 0:
        return OptimizeResult(theta0.copy(), float(v0), 0, bool(np.max(np.abs(g0), initial=0.0)
                                                                <= config.gradient_tolerance))

    def neg(x):
        try:
            v, g = objective(x)
        except FactorizationFailed as exc:
            log.debug("objective failed to factorise at %s: %s", x, exc)
            return np.inf, np.zeros_like(x)
        g = np.asarray(g, dtype=float)
        if not (np.isfinite(v) and np.all(np.isfinite(g))):
            return np.inf, np.zeros_like(x)
        if v > best["v"]:
            best.update(x=np.array(x, copy=True), v=float(v), g=g)
        return -float(v), -g

    n = theta0.size
    outer = [(-np.inf, np.inf)] * n if bounds is None else [
        (-np.inf if lo is None else lo, np.inf if hi is None else hi) for lo, hi in bounds]
    iterations, message, success, on_edge = 0, "", False, False
    for _ in range(config.max_recentres + 1):
        start = best["x"].copy()
        box = outer
        if config.trust_radius is not None:
            r = config.trust_radius
            box = [(max(lo, c - r), min(hi, c + r)) for c, (lo, hi) in zip(start, outer)]
        budget = config.max_iterations - iterations
        if budget <= 0:
            break
        res = minimize(neg, start, jac=True, method="L-BFGS-B", bounds=_finite_or_none(box),
                       options={"maxiter": budget, "maxcor": config.memory_pairs,
                                "gtol": config.gradient_tolerance, "ftol": config.value_tolerance})
        iterations += int(res.nit)
        message = str(res.message)
        success = bool(res.success)
        if config.trust_radius is None:
            break
        x = best["x"]
        on_edge = any((x[i] <= box[i][0] and box[i][0] > outer[i][0]) or
                      (x[i] >= box[i][1] and box[i][1] < outer[i][1]) for i in range(n))
        if not on_edge:
            break
    converged = success and not on_edge
    return OptimizeResult(best["x"], best["v"], iterations, converged, message)


def _finite_or_none(box):
    return [(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None) for lo, hi in box]


def finite_diff_grad(objective: Callable, theta, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient; ``objective`` may return a value or (value, gradient)."""
    if not step > 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=float)

    def f(x):
        v = objective(x)
        v = v[0] if isinstance(v, tuple) else v
        if not np.isfinite(v):
            raise NonFiniteObjective(f"objective is not finite at {x}")
        return float(v)

    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        grad[i] = (f(theta + e) - f(theta - e)) / (2 * step)
    return grad
