"""Inducing-point selection: greedy conditional variance, VIPS, CV, OIPS and fixed size."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from .errors import AllCandidatesDegenerate, ConfigError, NonPositiveSchurComplement
from .gp_exact import RunningMoments, noise_lml
from .kernels import Hyperparams, Kernel, _as_2d
from .linalg import DUPLICATE_TOL, PsdFactor, psd_factor, rank_one_update, tri_solve
from .online_bounds import DENSE_CAP, PosteriorSummary, l_star, lower_bound, upper_bound, vips_threshold

log = logging.getLogger(__name__)

CV_MAX_M = 7000
DEFAULT_DELTA = 0.035


@dataclass(frozen=True)
class VIPS:
    delta: float = DEFAULT_DELTA
    stringent: bool = False
    stride: int = 1
    method = "vips"

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError("VIPS delta must be positive")
        if self.stride < 1:
            raise ConfigError("VIPS stride must be at least 1")


@dataclass(frozen=True)
class CV:
    eta: float
    max_M: int = CV_MAX_M
    method = "cv"

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError("CV eta must be positive")
        if self.max_M < 1:
            raise ConfigError("CV max_M must be at least 1")


@dataclass(frozen=True)
class OIPS:
    rho: float
    method = "oips"

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ConfigError("OIPS rho must lie in (0, 1)")


@dataclass(frozen=True)
class Fixed:
    M: int
    method = "fixed"

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("Fixed M must be at least 1")


SelectionConfig = Union[VIPS, CV, OIPS, Fixed]
_METHODS = {"vips": VIPS, "cv": CV, "oips": OIPS, "fixed": Fixed}


def selection_from_dict(d: dict) -> SelectionConfig:
    d = dict(d)
    name = str(d.pop("method", "vips")).lower()
    if name not in _METHODS:
        raise ConfigError(f"unknown selection method {name!r}")
    try:
        return _METHODS[name](**d)
    except TypeError as exc:
        raise ConfigError(f"bad {name} settings: {exc}") from None


def selection_to_dict(cfg: SelectionConfig) -> dict:
    return {"method": cfg.method, **asdict(cfg)}


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Chosen inducing inputs plus the bound values seen at the stopping point.

    ``bound_at_stop`` is the gap U - L_hat for VIPS and the pooled residual
    trace for CV; NaN for the other methods.
    """

    Z: np.ndarray
    m_added: int
    bound_at_stop: float = math.nan
    threshold_at_stop: float = math.nan
    saturated: bool = False
    l_hat: float = math.nan
    l_star: float = math.nan
    u_hat: float = math.nan
    l_noise: float = math.nan


class GreedyVariance:
    """Incremental greedy conditional-variance selection over a fixed candidate pool.

    Keeps the Cholesky factor of the current inducing set plus the projections
    L^{-1} K(Z, candidates), so each addition costs O(M N).
    """

    def __init__(self, kernel: Kernel, Z0, candidates):
        self.kernel = kernel
        self.candidates = _as_2d(candidates)
        Z0 = np.zeros((0, self.candidates.shape[1])) if Z0 is None else _as_2d(Z0)
        self.Z = Z0
        n = self.candidates.shape[0]
        self.factor = psd_factor(kernel.matrix(Z0)) if Z0.shape[0] else PsdFactor(np.zeros((0, 0)), 0.0, 0.0)
        if Z0.shape[0]:
            self.proj = tri_solve(self.factor, kernel.matrix(Z0, self.candidates))
        else:
            self.proj = np.zeros((0, n))
        self.prior_var = kernel.diag(self.candidates)
        self.resid = self.prior_var - np.sum(self.proj**2, axis=0)
        self.available = np.ones(n, dtype=bool)
        scale = float(np.mean(self.prior_var)) if n else 1.0
        self.floor = self.factor.jitter_used + DUPLICATE_TOL * max(scale, 0.0)
        self.added = []

    @property
    def size(self) -> int:
        return self.Z.shape[0]

    def pooled_trace(self) -> float:
        return float(np.sum(np.where(self.resid > self.floor, self.resid, 0.0)))

    def next_index(self) -> int:
        ok = self.available & (self.resid > self.floor)
        if not np.any(ok):
            raise AllCandidatesDegenerate("every remaining candidate is a numerical duplicate")
        return int(np.argmax(np.where(ok, self.resid, -np.inf)))

    def add(self, i: int) -> None:
        x = self.candidates[i:i + 1]
        col = self.kernel.matrix(self.Z, x)[:, 0] if self.size else np.zeros(0)
        self.factor = rank_one_update(self.factor, col, float(self.kernel.diag(x)[0]))
        row = self.factor.lower[-1, :-1]
        pivot = self.factor.lower[-1, -1]
        new = (self.kernel.matrix(x, self.candidates)[0] - row @ self.proj) / pivot
        self.proj = np.vstack([self.proj, new])
        self.resid = self.resid - new**2
        self.available[i] = False
        self.Z = np.vstack([self.Z, x])
        self.added.append(i)

    def step(self) -> Optional[int]:
        """Add the best remaining candidate; None once every candidate is used or degenerate."""
        while True:
            try:
                i = self.next_index()
            except AllCandidatesDegenerate:
                return None
            try:
                self.add(i)
                return i
            except NonPositiveSchurComplement:
                self.available[i] = False


def greedy_variance_next(candidates, current_factor: PsdFactor, kernel: Kernel, Z=None) -> int:
    """Index of the candidate with the largest conditional prior variance given ``Z``.

    ``current_factor`` must factorise the kernel matrix at ``Z``. Ties go to
    the lowest index; numerical duplicates are skipped.
    """
    candidates = _as_2d(candidates)
    if candidates.shape[0] == 0:
        raise AllCandidatesDegenerate("no candidates")
    prior = kernel.diag(candidates)
    if current_factor.n:
        if Z is None or _as_2d(Z).shape[0] != current_factor.n:
            raise ValueError("the inducing inputs of the factor are required")
        A = tri_solve(current_factor, kernel.matrix(_as_2d(Z), candidates))
        resid = prior - np.sum(A**2, axis=0)
    else:
        resid = prior
    floor = current_factor.jitter_used + DUPLICATE_TOL * max(float(np.mean(prior)), 0.0)
    ok = resid > floor
    if not np.any(ok):
        raise AllCandidatesDegenerate("every candidate is a numerical duplicate")
    return int(np.argmax(np.where(ok, resid, -np.inf)))


def greedy_order(candidates, kernel: Kernel, Z0=None, max_add: Optional[int] = None) -> np.ndarray:
    """Full greedy-variance inclusion order of ``candidates`` after ``Z0``."""
    g = GreedyVariance(kernel, Z0, candidates)
    limit = g.candidates.shape[0] if max_add is None else max_add
    while len(g.added) < limit and g.step() is not None:
        pass
    return np.array(g.added, dtype=int)


def _old_Z(summary: Optional[PosteriorSummary], X) -> np.ndarray:
    return summary.Z if summary is not None else np.zeros((0, _as_2d(X).shape[1]))


def select_vips(summary: Optional[PosteriorSummary], X, y, theta: Hyperparams, config: VIPS,
                moments: RunningMoments, dense_cap: int = DENSE_CAP) -> SelectionResult:
    """Grow the inducing set from the batch until U - L_hat <= delta |U - L_noise|.

    U is the best attainable bound by default, or the upper bound at the
    current inducing set when the stringent flag is set or the batch is too
    large for the dense evaluation.
    """
    X = _as_2d(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    Zo = _old_Z(summary, X)
    l_noise = noise_lml(moments, y)
    use_upper = config.stringent or X.shape[0] + Zo.shape[0] > dense_cap
    ls = math.nan if use_upper else l_star(summary, X, y, theta)

    g = GreedyVariance(theta.kernel, Zo, X)
    if g.size == 0:
        g.step()

    def check():
        lo = lower_bound(summary, X, y, g.Z, theta).total
        up = upper_bound(summary, X, y, g.Z, theta) if use_upper else ls
        alpha = vips_threshold(up, l_noise, config.delta)
        return lo, up, alpha

    lo, up, alpha = check()
    exhausted = False
    while up - lo > alpha:
        for _ in range(config.stride):
            if g.step() is None:
                exhausted = True
                break
        lo, up, alpha = check()
        if exhausted:
            break
    saturated = up - lo > alpha
    if saturated:
        log.info("VIPS used every candidate without meeting the threshold (gap %.3g > %.3g)", up - lo, alpha)
    return SelectionResult(g.Z, g.size - Zo.shape[0], up - lo, alpha, saturated,
                           lo, ls, up, l_noise)


def select_cv(summary: Optional[PosteriorSummary], X, y, theta: Hyperparams, config: CV) -> SelectionResult:
    """Rebuild the inducing set from old inducing inputs plus the batch until the pooled trace <= eta."""
    X = _as_2d(X)
    Zo = _old_Z(summary, X)
    pool = np.vstack([Zo, X])
    g = GreedyVariance(theta.kernel, None, pool)
    g.step()
    trace = g.pooled_trace()
    saturated = False
    while trace > config.eta and g.size < config.max_M:
        if g.step() is None:
            saturated = True
            break
        trace = g.pooled_trace()
    l_hat = lower_bound(summary, X, y, g.Z, theta).total
    return SelectionResult(g.Z, g.size - Zo.shape[0], trace, config.eta, saturated, l_hat)


def select_oips(summary: Optional[PosteriorSummary], X, y, theta: Hyperparams, config: OIPS) -> SelectionResult:
    """Single pass over the batch: keep x when its largest kernel value to the set is below rho k(x, x)."""
    X = _as_2d(X)
    kern = theta.kernel
    Z = _old_Z(summary, X)
    rows = [Z]
    best = kern.matrix(X, Z).max(axis=1) if Z.shape[0] else np.full(X.shape[0], -np.inf)
    thresh = config.rho * kern.diag(X)
    added = 0
    for i in range(X.shape[0]):
        if best[i] < thresh[i]:
            rows.append(X[i:i + 1])
            added += 1
            best = np.maximum(best, kern.matrix(X, X[i:i + 1])[:, 0])
    Z = np.vstack(rows)
    l_hat = lower_bound(summary, X, y, Z, theta).total
    return SelectionResult(Z, added, l_hat=l_hat)


def select_fixed(summary: Optional[PosteriorSummary], X, y, theta: Hyperparams, config: Fixed) -> SelectionResult:
    """Greedy-variance additions from the batch until the set holds ``config.M`` points."""
    X = _as_2d(X)
    Zo = _old_Z(summary, X)
    if config.M < Zo.shape[0]:
        raise ConfigError(f"fixed size {config.M} is below the carried-over {Zo.shape[0]} points")
    g = GreedyVariance(theta.kernel, Zo, X)
    while g.size < config.M and g.step() is not None:
        pass
    l_hat = lower_bound(summary, X, y, g.Z, theta).total
    return SelectionResult(g.Z, g.size - Zo.shape[0], l_hat=l_hat)


def select(summary, X, y, theta: Hyperparams, config: SelectionConfig,
           moments: Optional[RunningMoments] = None, dense_cap: int = DENSE_CAP) -> SelectionResult:
    if isinstance(config, VIPS):
        if moments is None:
            raise ValueError("VIPS needs the running output moments")
        return select_vips(summary, X, y, theta, config, moments, dense_cap)
    if isinstance(config, CV):
        return select_cv(summary, X, y, theta, config)
    if isinstance(config, OIPS):
        return select_oips(summary, X, y, theta, config)
    if isinstance(config, Fixed):
        return select_fixed(summary, X, y, theta, config)
    raise ConfigError(f"unsupported selection config {config!r}")
