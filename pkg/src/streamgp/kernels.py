"""Covariance functions, hyperparameters and their log-space gradients.

Canonical parameter order: kernel parameters in declaration order (variance
before lengthscales; left child before right child for sums), then the noise
variance last.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch

NOISE_FLOOR = 1e-8


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatch(f"inputs must be 2-D, got shape {X.shape}")
    return X


class Kernel:
    """Base class. Subclasses are immutable; updates return new instances."""

    def matrix(self, X, X2=None) -> np.ndarray:
        raise NotImplementedError

    def diag(self, X) -> np.ndarray:
        raise NotImplementedError

    def param_gradients(self, X, X2=None) -> List[np.ndarray]:
        raise NotImplementedError

    def diag_param_gradients(self, X) -> List[np.ndarray]:
        """Derivatives of k(x, x) with respect to each log-parameter."""
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return len(self.log_params())

    def log_params(self) -> np.ndarray:
        raise NotImplementedError

    def with_log_params(self, v) -> "Kernel":
        raise NotImplementedError

    @property
    def total_variance(self) -> float:
        """k(x, x) for a stationary kernel."""
        raise NotImplementedError

    def lengthscales(self) -> np.ndarray:
        return np.zeros(0)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __add__(self, other):
        return Sum(self, other)


def _pair(X, X2):
    X = _as_2d(X)
    X2 = X if X2 is None else _as_2d(X2)
    if X.shape[1] != X2.shape[1]:
        raise DimensionMismatch(f"input dims differ: {X.shape[1]} vs {X2.shape[1]}")
    return X, X2


@dataclass(frozen=True, eq=False)
class _Stationary(Kernel):
    variance: float = 1.0
    lengthscale: object = 1.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        if not self.variance > 0 or np.any(ls <= 0) or ls.ndim != 1:
            raise ValueError("variance and lengthscales must be positive")
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "lengthscale", ls if ls.size > 1 else float(ls[0]))

    @property
    def ard(self) -> bool:
        return np.ndim(self.lengthscale) == 1

    def lengthscales(self) -> np.ndarray:
        return np.atleast_1d(self.lengthscale)

    def _scaled(self, X, X2):
        X, X2 = _pair(X, X2)
        ls = self.lengthscales()
        if ls.size > 1 and ls.size != X.shape[1]:
            raise DimensionMismatch(f"{ls.size} lengthscales for {X.shape[1]}-D inputs")
        return X / ls, X2 / ls

    def _sqdist(self, X, X2):
        A, B = self._scaled(X, X2)
        return cdist(A, B, "sqeuclidean")

    def _per_dim_sqdist(self, X, X2):
        A, B = self._scaled(X, X2)
        return [np.subtract.outer(A[:, d], B[:, d]) ** 2 for d in range(A.shape[1])]

    def diag(self, X) -> np.ndarray:
        X = _as_2d(X)
        self._scaled(X[:1], X[:1])
        return np.full(X.shape[0], self.variance)

    def diag_param_gradients(self, X):
        n = _as_2d(X).shape[0]
        return [np.full(n, self.variance)] + [np.zeros(n)] * self.lengthscales().size

    @property
    def total_variance(self) -> float:
        return self.variance

    def log_params(self) -> np.ndarray:
        return np.log(np.concatenate([[self.variance], self.lengthscales()]))

    def with_log_params(self, v):
        v = np.exp(np.asarray(v, dtype=float))
        ls = v[1:] if self.ard else v[1]
        return type(self)(variance=v[0], lengthscale=ls)

    def to_dict(self) -> dict:
        ls = self.lengthscales().tolist() if self.ard else self.lengthscale
        return {"family": self.family, "variance": self.variance, "lengthscale": ls}


class SquaredExponential(_Stationary):
    family = "se"

    def matrix(self, X, X2=None):
        return self.variance * np.exp(-0.5 * self._sqdist(X, X2))

    def param_gradients(self, X, X2=None):
        r2 = self._sqdist(X, X2)
        K = self.variance * np.exp(-0.5 * r2)
        if not self.ard:
            return [K, K * r2]
        return [K] + [K * d2 for d2 in self._per_dim_sqdist(X, X2)]


class Matern32(_Stationary):
    family = "matern32"

    def matrix(self, X, X2=None):
        s = np.sqrt(3.0 * self._sqdist(X, X2))
        return self.variance * (1.0 + s) * np.exp(-s)

    def param_gradients(self, X, X2=None):
        r2 = self._sqdist(X, X2)
        s = np.sqrt(3.0 * r2)
        e = np.exp(-s)
        K = self.variance * (1.0 + s) * e
        if not self.ard:
            return [K, self.variance * s**2 * e]
        return [K] + [3.0 * self.variance * e * d2 for d2 in self._per_dim_sqdist(X, X2)]


@dataclass(frozen=True, eq=False)
class Constant(Kernel):
    variance: float = 1.0
    family = "constant"

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        object.__setattr__(self, "variance", float(self.variance))

    def matrix(self, X, X2=None):
        X, X2 = _pair(X, X2)
        return np.full((X.shape[0], X2.shape[0]), self.variance)

    def diag(self, X):
        return np.full(_as_2d(X).shape[0], self.variance)

    def param_gradients(self, X, X2=None):
        return [self.matrix(X, X2)]

    def diag_param_gradients(self, X):
        return [self.diag(X)]

    @property
    def total_variance(self):
        return self.variance

    def log_params(self):
        return np.log([self.variance])

    def with_log_params(self, v):
        return Constant(float(np.exp(v[0])))

    def to_dict(self):
        return {"family": self.family, "variance": self.variance}


@dataclass(frozen=True, eq=False)
class Sum(Kernel):
    left: Kernel
    right: Kernel
    family = "sum"

    def matrix(self, X, X2=None):
        return self.left.matrix(X, X2) + self.right.matrix(X, X2)

    def diag(self, X):
        return self.left.diag(X) + self.right.diag(X)

    def param_gradients(self, X, X2=None):
        return self.left.param_gradients(X, X2) + self.right.param_gradients(X, X2)

    def diag_param_gradients(self, X):
        return self.left.diag_param_gradients(X) + self.right.diag_param_gradients(X)

    @property
    def total_variance(self):
        return self.left.total_variance + self.right.total_variance

    def lengthscales(self):
        return np.concatenate([self.left.lengthscales(), self.right.lengthscales()])

    def log_params(self):
        return np.concatenate([self.left.log_params(), self.right.log_params()])

    def with_log_params(self, v):
        n = self.left.n_params
        return Sum(self.left.with_log_params(v[:n]), self.right.with_log_params(v[n:]))

    def to_dict(self):
        return {"family": self.family, "children": [self.left.to_dict(), self.right.to_dict()]}


_FAMILIES = {"se": SquaredExponential, "squared_exponential": SquaredExponential,
             "matern32": Matern32, "constant": Constant}


def kernel_from_dict(spec: dict) -> Kernel:
    family = str(spec.get("family", "se")).lower()
    if family == "sum":
        children = spec.get("children", [])
        if len(children) != 2:
            raise ValueError("a sum kernel needs exactly two children")
        return Sum(kernel_from_dict(children[0]), kernel_from_dict(children[1]))
    if family not in _FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}")
    cls = _FAMILIES[family]
    if cls is Constant:
        return Constant(spec.get("variance", 1.0))
    ls = spec.get("lengthscale", spec.get("lengthscales", 1.0))
    return cls(variance=spec.get("variance", 1.0), lengthscale=ls)


@dataclass(frozen=True, eq=False)
class Hyperparams:
    kernel: Kernel
    noise_variance: float = 1.0

    def __post_init__(self):
        if not self.noise_variance >= NOISE_FLOOR:
            raise ValueError(f"noise variance must be at least {NOISE_FLOOR:g}")
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def n_params(self) -> int:
        return self.kernel.n_params + 1

    def to_vector(self) -> np.ndarray:
        """Log-parameters in canonical order (noise last)."""
        return np.append(self.kernel.log_params(), np.log(self.noise_variance))

    def from_vector(self, v) -> "Hyperparams":
        v = np.asarray(v, dtype=float)
        return Hyperparams(self.kernel.with_log_params(v[:-1]),
                           max(float(np.exp(v[-1])), NOISE_FLOOR))

    def to_dict(self) -> dict:
        return {"kernel": self.kernel.to_dict(), "noise_variance": self.noise_variance}

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(kernel_from_dict(d["kernel"]), d.get("noise_variance", 1.0))


def eval_matrix(kernel: Kernel, X, X2=None) -> np.ndarray:
    return kernel.matrix(X, X2)


def eval_diag(kernel: Kernel, X) -> np.ndarray:
    return kernel.diag(X)


def param_gradients(kernel: Kernel, X, X2=None) -> List[np.ndarray]:
    """dK/d(log param) for every kernel parameter, in canonical order."""
    return kernel.param_gradients(X, X2)
