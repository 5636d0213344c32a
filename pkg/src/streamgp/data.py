"""Datasets, batch plans and synthetic scenario generators."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatch, EmptyFile, InvalidPlan, ParseError, UnknownScenario

log = logging.getLogger(__name__)

TRUE_NOISE_STD = 0.3
CAUCHY_CLIP = (-50.0, 60.0)


def sine_target(x):
    return np.sin(2.0 * x) + np.cos(5.0 * x)


@dataclass(frozen=True)
class SortedByColumn:
    column: int = 0
    n_batches: int = 1
    kind = "sorted"


@dataclass(frozen=True)
class Shuffled:
    n_batches: int = 1
    seed: int = 0
    kind = "shuffled"


@dataclass(frozen=True)
class ByGivenBoundaries:
    """Rows kept in dataset order and cut before each listed start index."""

    boundaries: Tuple[int, ...] = ()
    kind = "boundaries"

    def __post_init__(self):
        object.__setattr__(self, "boundaries", tuple(int(b) for b in self.boundaries))


BatchPlan = Union[SortedByColumn, Shuffled, ByGivenBoundaries]


def plan_from_dict(d: dict) -> BatchPlan:
    d = dict(d)
    kind = d.pop("kind", "sorted")
    try:
        if kind == "sorted":
            return SortedByColumn(**d)
        if kind == "shuffled":
            return Shuffled(**d)
        if kind == "boundaries":
            return ByGivenBoundaries(tuple(d.get("boundaries", ())))
    except TypeError as exc:
        raise InvalidPlan(f"bad {kind} plan: {exc}") from None
    raise InvalidPlan(f"unknown plan kind {kind!r}")


def plan_to_dict(plan: BatchPlan) -> dict:
    if isinstance(plan, SortedByColumn):
        return {"kind": "sorted", "column": plan.column, "n_batches": plan.n_batches}
    if isinstance(plan, Shuffled):
        return {"kind": "shuffled", "n_batches": plan.n_batches, "seed": plan.seed}
    return {"kind": "boundaries", "boundaries": list(plan.boundaries)}


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: Optional[Tuple[str, ...]] = None
    source: str = ""
    plan: Optional[BatchPlan] = None
    test: Optional["Dataset"] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionMismatch("X and y disagree in length")
        if X.shape[0] < 1:
            raise ValueError("a dataset needs at least one row")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.feature_names, self.source)


@dataclass(frozen=True, eq=False)
class Batch:
    X: np.ndarray
    y: np.ndarray
    indices: np.ndarray


def batch_indices(n: int, plan: BatchPlan, X: Optional[np.ndarray] = None) -> List[np.ndarray]:
    """Row indices of each batch for ``n`` rows."""
    if isinstance(plan, ByGivenBoundaries):
        b = list(plan.boundaries)
        if any(not 0 < v < n for v in b) or b != sorted(set(b)):
            raise InvalidPlan("boundaries must be strictly increasing and inside (0, n)")
        return np.split(np.arange(n), b)
    nb = plan.n_batches
    if not isinstance(nb, (int, np.integer)) or nb < 1:
        raise InvalidPlan("n_batches must be a positive integer")
    if nb > n:
        raise InvalidPlan(f"{nb} batches for {n} rows")
    if isinstance(plan, SortedByColumn):
        if X is None or not 0 <= plan.column < X.shape[1]:
            raise InvalidPlan(f"column {plan.column} out of range")
        order = np.argsort(X[:, plan.column], kind="stable")
    elif isinstance(plan, Shuffled):
        order = np.random.default_rng(plan.seed).permutation(n)
    else:
        raise InvalidPlan(f"unsupported plan {plan!r}")
    return np.array_split(order, nb)


def make_batches(dataset: Dataset, plan: Optional[BatchPlan] = None) -> List[Batch]:
    plan = plan if plan is not None else dataset.plan
    if plan is None:
        raise InvalidPlan("no batch plan given")
    return [Batch(dataset.X[i], dataset.y[i], i) for i in batch_indices(dataset.n, plan, dataset.X)]


def load_csv(path, target_column: Union[int, str] = -1, delimiter: str = ",",
             has_header: bool = True) -> Dataset:
    """Parse a numeric CSV; ``target_column`` is an index or (with a header) a name.

    Row numbers in errors are 1-based file lines.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter)]
    header = None
    start = 1
    if has_header and rows:
        header = [h.strip() for h in rows[0]]
        rows = rows[1:]
        start = 2
    body = [(start + i, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not body:
        raise EmptyFile(f"{path} has no data rows")
    width = len(header) if header else len(body[0][1])
    data = np.empty((len(body), width))
    for k, (line, r) in enumerate(body):
        if len(r) != width:
            raise ParseError(line, len(r), f"expected {width} columns, found {len(r)}")
        for j, cell in enumerate(r):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(line, j, f"cannot parse {cell!r} as a number") from None
            if not np.isfinite(v):
                raise ParseError(line, j, f"non-finite value {cell!r}")
            data[k, j] = v
    if isinstance(target_column, str):
        if header is None or target_column not in header:
            raise ParseError(1, target_column, "target column not found in header")
        t = header.index(target_column)
    else:
        if not -width <= int(target_column) < width:
            raise ParseError(1, target_column, "target column index out of range")
        t = int(target_column) % width
    keep = [j for j in range(width) if j != t]
    if not keep:
        raise ParseError(1, t, "no feature columns")
    names = tuple(header[j] for j in keep) if header else None
    ds = Dataset(data[:, keep], data[:, t], names, f"csv:{path}")
    ds.info["target_name"] = header[t] if header else str(t)
    return ds


def save_csv(dataset: Dataset, path, delimiter: str = ",") -> None:
    """Write features then target, with a header; floats are written round-trip exact."""
    d = dataset.X.shape[1]
    names = list(dataset.feature_names or [f"x{j}" for j in range(d)])
    target = dataset.info.get("target_name", "y")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(names + [target])
        for xi, yi in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    n_test = max(1, int(round(test_fraction * dataset.n)))
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return dataset.subset(train), dataset.subset(test)


# synthetic scenarios

SCENARIOS = ("GrowingDomain", "IIDUniform", "OutlierCauchy", "Sine1k", "Large3D_1", "Large3D_2", "Large3D_3")


def _noisy(rng, f):
    return f + TRUE_NOISE_STD * rng.standard_normal(f.shape[0])


def _target(X):
    if X.shape[1] == 1:
        return sine_target(X[:, 0])
    # multi-dimensional variant: average of the 1-D test function over coordinates
    return np.mean(sine_target(X), axis=1)


def _outlier_data(rng, dim, n_inlier, n_outlier, n_batches, outlier_batches):
    outlier_batches = sorted(set(int(b) for b in outlier_batches))
    n_in_batches = n_batches - len(outlier_batches)
    if not outlier_batches or n_in_batches < 1 or outlier_batches[-1] >= n_batches or outlier_batches[0] < 0:
        raise InvalidPlan("outlier batch indices must lie inside the plan and leave inlier batches")
    Xin = rng.uniform(4.0, 6.0, size=(n_inlier, dim))
    raw = 5.0 + rng.standard_cauchy(size=(n_outlier, dim))
    Xout = np.clip(raw, *CAUCHY_CLIP)
    clipped = float(np.mean(np.any(raw != Xout, axis=1)))
    log.info("clipped %.1f%% of outlier inputs to %s", 100 * clipped, CAUCHY_CLIP)
    in_parts = np.array_split(np.arange(n_inlier), n_in_batches)
    out_parts = np.array_split(np.arange(n_outlier), len(outlier_batches))
    blocks, sizes = [], []
    ii = oo = 0
    for b in range(n_batches):
        if b in outlier_batches:
            blocks.append(Xout[out_parts[oo]])
            oo += 1
        else:
            blocks.append(Xin[in_parts[ii]])
            ii += 1
        sizes.append(blocks[-1].shape[0])
    X = np.vstack(blocks)
    plan = ByGivenBoundaries(tuple(np.cumsum(sizes)[:-1]))
    return X, plan, clipped


def gen_synthetic(scenario: str, seed: int, *, n: Optional[int] = None, n_batches: Optional[int] = None,
                  outlier_batches: Optional[Sequence[int]] = None) -> Dataset:
    """Reproducible synthetic stream with its batch plan embedded.

    ``n``/``n_batches`` override the scenario size; for the outlier scenarios
    ``n`` is the inlier count and the outlier count scales with it.
    """
    if scenario not in SCENARIOS:
        raise UnknownScenario(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    rng = np.random.default_rng(seed)
    info = {"scenario": scenario, "seed": seed, "true_noise_std": TRUE_NOISE_STD}
    test = None
    large = scenario.startswith("Large3D")
    dim = 3 if large else 1
    kind = {"Large3D_1": "GrowingDomain", "Large3D_2": "IIDUniform", "Large3D_3": "OutlierCauchy"}.get(scenario, scenario)
    defaults = {
        "GrowingDomain": (50_000, 50) if large else (500, 10),
        "IIDUniform": (50_000, 50) if large else (150, 10),
        "OutlierCauchy": (38_462, 50) if large else (1000, 10),
        "Sine1k": (1000, 4),
    }[kind]
    n = defaults[0] if n is None else int(n)
    nb = defaults[1] if n_batches is None else int(n_batches)
    if n < 1 or nb < 1:
        raise InvalidPlan("sizes must be positive")
    if kind == "OutlierCauchy":
        n_out = int(round(n * 0.3))
        if outlier_batches is None:
            outlier_batches = (5, 8) if nb == 10 else (int(round(0.5 * nb)), int(round(0.8 * nb)))
        X, plan, clipped = _outlier_data(rng, dim, n, n_out, nb, outlier_batches)
        info.update(outlier_batches=list(outlier_batches), cauchy_clip=list(CAUCHY_CLIP),
                    clipped_fraction=clipped)
    else:
        X = rng.uniform(0.0, 10.0, size=(n, dim))
        plan = Shuffled(nb, seed) if kind == "IIDUniform" else SortedByColumn(0, nb)
    y = _noisy(rng, _target(X))
    if kind == "Sine1k":
        Xt = np.linspace(0.0, 10.0, 500)[:, None]
        test = Dataset(Xt, _noisy(rng, _target(Xt)), ("x0",), f"synthetic:{scenario}:test", plan)
    names = tuple(f"x{j}" for j in range(dim))
    return Dataset(X, y, names, f"synthetic:{scenario}:seed={seed}", plan, test, info)
