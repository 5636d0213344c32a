"""Command-line entry points, run configuration and report files.

Commands::

    streamgp run --config run.json --out results/
    streamgp compare --configs a.json b.json --out results/ [--metric rmse_rel_pct --max 10]
    streamgp gen --scenario Sine1k --seed 0 --out sine.csv

``STREAMGP_THREADS`` caps how many runs ``compare`` executes at once.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .data import (
    Dataset,
    SortedByColumn,
    batch_indices,
    gen_synthetic,
    load_csv,
    make_batches,
    plan_from_dict,
    plan_to_dict,
    save_csv,
    train_test_split,
)
from .errors import BatchAborted, CapExceeded, ConfigError, MismatchedDatasets, StreamGPError
from .gp_exact import EXACT_CAP
from .hyperopt import OptimizerConfig
from .kernels import Hyperparams, kernel_from_dict
from .online_bounds import DENSE_CAP
from .selection import selection_from_dict, selection_to_dict
from .stream import (
    BatchReport,
    StreamState,
    evaluate,
    exact_reference,
    fit_exact_hyperparams,
    noise_reference,
    process_batch,
)

log = logging.getLogger(__name__)

CSV_HEADER = ("batch_index,M_before,M_after,l_hat,l_star,u_hat,alpha,rmse,nlpd,rmse_rel_pct,"
              "nlpd_rel_pct,noise_variance,kernel_variance,lengthscale,wall_clock_s")


def _synthetic_defaults(scenario: str) -> dict:
    if scenario.startswith("Large3D"):
        return {"kernel": {"family": "se", "variance": 1.0, "lengthscale": 1.0}, "noise_variance": 0.2}
    return {"kernel": {"family": "se", "variance": 1.0, "lengthscale": 0.5}, "noise_variance": 0.5}


def materialize(raw: dict) -> dict:
    """Fill every default so the echo fully determines a rerun."""
    cfg = copy.deepcopy(raw)
    src = cfg.get("dataset")
    if not isinstance(src, dict) or len([k for k in ("synthetic", "csv") if k in src]) != 1:
        raise ConfigError("dataset must name exactly one source: 'synthetic' or 'csv'")
    if "synthetic" in src:
        syn = src["synthetic"]
        if "scenario" not in syn:
            raise ConfigError("synthetic dataset needs a scenario")
        syn.setdefault("seed", 0)
        for k in ("n", "n_batches", "outlier_batches"):
            syn.setdefault(k, None)
        defaults = _synthetic_defaults(syn["scenario"])
        standardize = False
    else:
        c = src["csv"]
        if "path" not in c:
            raise ConfigError("csv dataset needs a path")
        c.setdefault("target_column", -1)
        c.setdefault("delimiter", ",")
        c.setdefault("has_header", True)
        c.setdefault("test_fraction", 0.1)
        c.setdefault("split_seed", cfg.get("seed", 0))
        defaults = {"kernel": {"family": "se", "variance": 1.0, "lengthscale": 1.0}, "noise_variance": 0.1}
        standardize = True
    cfg.setdefault("name", None)
    cfg.setdefault("seed", 0)
    cfg.setdefault("plan", None)
    cfg.setdefault("kernel", defaults["kernel"])
    cfg.setdefault("noise_variance", defaults["noise_variance"])
    cfg.setdefault("ard", False)
    sel = cfg.setdefault("selection", {"method": "vips"})
    try:
        cfg["selection"] = selection_to_dict(selection_from_dict(sel))
        opt = OptimizerConfig(**cfg.get("optimizer", {}))
    except TypeError as exc:
        raise ConfigError(f"bad optimizer settings: {exc}") from None
    cfg["optimizer"] = dataclasses.asdict(opt)
    cfg.setdefault("optimize_hyperparams", True)
    if cfg.get("standardize_inputs") is None:
        cfg["standardize_inputs"] = standardize
    ex = cfg.setdefault("exact", {})
    ex.setdefault("enabled", True)
    ex.setdefault("cap", EXACT_CAP)
    ex.setdefault("optimize", True)
    cfg.setdefault("dense_cap", DENSE_CAP)
    cfg.setdefault("record_wall_clock", True)
    return cfg


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw, path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None) -> "RunConfig":
        cfg = cls(materialize(raw), Path(base_dir) if base_dir is not None else Path.cwd())
        src = cfg.raw["dataset"]
        if "csv" in src and not cfg.csv_path.exists():
            raise ConfigError(f"dataset file {cfg.csv_path} does not exist")
        return cfg

    @property
    def csv_path(self) -> Path:
        p = Path(self.raw["dataset"]["csv"]["path"])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def label(self) -> str:
        if self.raw.get("name"):
            return str(self.raw["name"])
        s = dict(self.raw["selection"])
        method = s.pop("method")
        key = {"vips": "delta", "cv": "eta", "oips": "rho", "fixed": "M"}[method]
        return f"{method}_{s[key]}"

    def hyperparams(self, dim: int) -> Hyperparams:
        kspec = copy.deepcopy(self.raw["kernel"])
        if self.raw["ard"] and kspec.get("family", "se") in ("se", "squared_exponential", "matern32"):
            ls = np.atleast_1d(kspec.get("lengthscale", 1.0)).astype(float)
            kspec["lengthscale"] = (np.full(dim, ls[0]) if ls.size == 1 else ls).tolist()
        try:
            return Hyperparams(kernel_from_dict(kspec), self.raw["noise_variance"])
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad kernel settings: {exc}") from None

    def load_data(self):
        """Training dataset with its plan, plus an optional test dataset."""
        src = self.raw["dataset"]
        if "synthetic" in src:
            s = src["synthetic"]
            try:
                ds = gen_synthetic(s["scenario"], int(s["seed"]), n=s["n"], n_batches=s["n_batches"],
                                   outlier_batches=s["outlier_batches"])
            except StreamGPError as exc:
                raise ConfigError(str(exc)) from None
            train, test = ds, ds.test
        else:
            c = src["csv"]
            ds = load_csv(self.csv_path, c["target_column"], c["delimiter"], c["has_header"])
            if c["test_fraction"]:
                train, test = train_test_split(ds, float(c["test_fraction"]), int(c["split_seed"]))
            else:
                train, test = ds, None
            nb = 20 if train.n < 12000 else 50
            train = _with_plan(train, SortedByColumn(0, nb))
        if self.raw["plan"] is not None:
            train = _with_plan(train, plan_from_dict(self.raw["plan"]))
        return train, test

    def dataset_key(self) -> str:
        return json.dumps({"dataset": self.raw["dataset"], "plan": self.raw["plan"]}, sort_keys=True)


def _with_plan(ds: Dataset, plan) -> Dataset:
    return Dataset(ds.X, ds.y, ds.feature_names, ds.source, plan, ds.test, ds.info)


def _test_batches(train: Dataset, test: Optional[Dataset]):
    """Test rows per batch, or None when the plan cannot be applied to the test set."""
    if test is None:
        return None
    plan = test.plan if test.plan is not None else train.plan
    try:
        return batch_indices(test.n, plan, test.X)
    except StreamGPError:
        return None


@dataclass
class RunReport:
    config: dict
    batches: List[BatchReport]
    provenance: dict
    total_wall_clock: float
    aborted: Optional[str] = None

    def to_dict(self, record_wall_clock: bool = True) -> dict:
        last = self.batches[-1] if self.batches else None
        return {
            "tool": "streamgp",
            "version": __version__,
            "config": self.config,
            "provenance": self.provenance,
            "batches": [_report_dict(b, record_wall_clock) for b in self.batches],
            "summary": {
                "n_batches": len(self.batches),
                "final_M": last.M_after if last else None,
                "final_rmse": _num(last.rmse) if last else None,
                "final_nlpd": _num(last.nlpd) if last else None,
                "final_rmse_rel_pct": _num(last.rmse_rel_pct) if last else None,
                "final_nlpd_rel_pct": _num(last.nlpd_rel_pct) if last else None,
                "total_wall_clock_s": self.total_wall_clock if record_wall_clock else None,
            },
            "aborted": self.aborted,
        }


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _report_dict(r: BatchReport, record_wall_clock: bool) -> dict:
    return {
        "batch_index": r.batch_index, "M_before": r.M_before, "M_after": r.M_after,
        "l_hat": _num(r.l_hat), "l_star": _num(r.l_star), "u_hat": _num(r.u_hat), "alpha": _num(r.alpha),
        "saturated": r.saturated, "l_noise": _num(r.l_noise), "l_hat_optimized": _num(r.l_hat_optimized),
        "opt_iterations": r.opt_iterations, "converged": r.converged, "n_clamped": r.n_clamped,
        "hyperparams": r.theta_after.to_dict(),
        "rmse": _num(r.rmse), "nlpd": _num(r.nlpd),
        "rmse_rel_pct": _num(r.rmse_rel_pct), "nlpd_rel_pct": _num(r.nlpd_rel_pct),
        "wall_clock_s": r.wall_clock if record_wall_clock else None,
    }


def _fmt(v) -> str:
    return repr(float(v))


def csv_rows(batches: Sequence[BatchReport], record_wall_clock: bool = True) -> List[List[str]]:
    rows = []
    for r in batches:
        k = r.theta_after.kernel
        ls = k.lengthscales()
        rows.append([
            str(r.batch_index), str(r.M_before), str(r.M_after),
            _fmt(r.l_hat), _fmt(r.l_star), _fmt(r.u_hat), _fmt(r.alpha),
            _fmt(r.rmse), _fmt(r.nlpd), _fmt(r.rmse_rel_pct), _fmt(r.nlpd_rel_pct),
            _fmt(r.theta_after.noise_variance), _fmt(k.total_variance),
            ";".join(_fmt(v) for v in ls) if ls.size else "nan",
            _fmt(r.wall_clock) if record_wall_clock else "nan",
        ])
    return rows


def write_batch_csv(path, batches: Sequence[BatchReport], record_wall_clock: bool = True) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        csv.writer(fh, lineterminator="\n").writerows(csv_rows(batches, record_wall_clock))


def execute(config: RunConfig) -> RunReport:
    """Run the whole stream in memory; numerical aborts end the run early with ``aborted`` set."""
    cfg = config.raw
    t0 = time.perf_counter()
    train, test = config.load_data()
    batches = make_batches(train)
    test_parts = _test_batches(train, test)
    theta0 = config.hyperparams(train.X.shape[1])
    state = StreamState.initial(theta0, selection_from_dict(cfg["selection"]), cfg["standardize_inputs"])
    opt = OptimizerConfig(**cfg["optimizer"])
    exact_theta = theta0
    exact_on = bool(cfg["exact"]["enabled"])
    seen = []
    reports: List[BatchReport] = []
    aborted = None
    for i, b in enumerate(batches):
        try:
            state, rep = process_batch(state, b.X, b.y, optimizer=opt,
                                       optimize_hyperparams=cfg["optimize_hyperparams"],
                                       dense_cap=int(cfg["dense_cap"]))
        except BatchAborted as exc:
            log.error("%s", exc)
            aborted = str(exc)
            break
        seen.append(b.indices)
        if test_parts is not None:
            rows = np.concatenate(test_parts[:i + 1])
            Xt, yt = test.X[rows], test.y[rows]
            evaluation = "held_out"
        elif test is not None:
            Xt, yt = test.X, test.y
            evaluation = "held_out_full"
        else:
            rows = np.concatenate(seen)
            Xt, yt = train.X[rows], train.y[rows]
            evaluation = "in_sample"
        ex_ref = nz_ref = None
        if exact_on:
            rows = np.concatenate(seen)
            Xe, ye = state.transform(train.X[rows]), train.y[rows]
            try:
                if cfg["exact"]["optimize"]:
                    exact_theta = fit_exact_hyperparams(Xe, ye, exact_theta, opt, int(cfg["exact"]["cap"]))
                ex_ref = exact_reference(Xe, ye, exact_theta, state.transform(Xt), yt, int(cfg["exact"]["cap"]))
                nz_ref = noise_reference(state.moments, yt)
            except CapExceeded:
                log.info("exact reference skipped at batch %d: cap exceeded", i)
                ex_ref = nz_ref = None
            except StreamGPError as exc:
                log.warning("exact reference failed at batch %d: %s", i, exc)
                ex_ref = nz_ref = None
        rep = rep.with_metrics(evaluate(state, Xt, yt, ex_ref, nz_ref))
        reports.append(rep)
    provenance = {
        "source": train.source, "n_train": train.n, "n_test": test.n if test is not None else 0,
        "dim": train.X.shape[1], "plan": plan_to_dict(train.plan), "evaluation": evaluation if reports else None,
        "standardization": {"inputs": "first_batch_zscore" if cfg["standardize_inputs"] else "none",
                            "outputs": "none",
                            "scaler": state.scaler.to_dict() if state.scaler is not None else None},
        "dataset_info": _jsonable(train.info),
    }
    return RunReport(cfg, reports, provenance, time.perf_counter() - t0, aborted)


def _jsonable(d):
    return json.loads(json.dumps(d, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


def run_stream(config: RunConfig, out_dir) -> RunReport:
    """Execute a run and write ``report.json`` and ``batches.csv`` into ``out_dir``."""
    report = execute(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rwc = bool(config.raw["record_wall_clock"])
    (out / "report.json").write_text(json.dumps(report.to_dict(rwc), indent=2, sort_keys=False) + "\n")
    write_batch_csv(out / "batches.csv", report.batches, rwc)
    return report


def _threads(n_jobs: int) -> int:
    env = os.environ.get("STREAMGP_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError("STREAMGP_THREADS must be a positive integer") from None
    return max(1, min(cap, n_jobs))


@dataclass
class Comparison:
    labels: List[str]
    reports: List[RunReport]
    operating_points: Optional[dict] = None

    def table(self) -> List[dict]:
        n = max(len(r.batches) for r in self.reports)
        rows = []
        for i in range(n):
            row = {"batch_index": i}
            for lab, rep in zip(self.labels, self.reports):
                b = rep.batches[i] if i < len(rep.batches) else None
                for col in ("M_after", "rmse", "nlpd", "rmse_rel_pct", "nlpd_rel_pct"):
                    row[f"{lab}:{col}"] = getattr(b, col) if b is not None else math.nan
            rows.append(row)
        return rows


def operating_points(labels, reports, configs, metric: str, limit: float) -> dict:
    """Per method, the run with the smallest final model whose final ``metric`` is at most ``limit``.

    Ties in model size go to the most lenient setting (largest delta or eta, smallest rho).
    """
    best = {}
    for lab, rep, cfg in zip(labels, reports, configs):
        method = cfg.raw["selection"]["method"]
        if not rep.batches:
            continue
        last = rep.batches[-1]
        value = getattr(last, metric)
        ok = math.isfinite(value) and value <= limit
        cur = best.get(method)
        key = (last.M_after, _strictness(cfg.raw["selection"]))
        if ok and (cur is None or key < cur["_key"]):
            best[method] = {"label": lab, "final_M": last.M_after, metric: value,
                            "selection": cfg.raw["selection"], "_key": key}
    for v in best.values():
        del v["_key"]
    return {"metric": metric, "limit": limit, "selected": best}


def _strictness(sel: dict) -> float:
    # equal model sizes go to the most lenient setting
    return {"vips": -sel.get("delta", 0.0), "cv": -sel.get("eta", 0.0),
            "oips": sel.get("rho", 0.0), "fixed": sel.get("M", 0)}[sel["method"]]


def compare_methods(configs: Sequence[RunConfig], out_dir=None, metric: Optional[str] = None,
                    limit: Optional[float] = None) -> Comparison:
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configs")
    keys = {c.dataset_key() for c in configs}
    if len(keys) != 1:
        raise MismatchedDatasets("configs do not share a dataset and batch plan")
    labels = [c.label for c in configs]
    seen = {}
    for i, lab in enumerate(labels):
        if lab in seen:
            labels[i] = f"{lab}#{i}"
        seen[lab] = i
    with ThreadPoolExecutor(max_workers=_threads(len(configs))) as pool:
        reports = list(pool.map(execute, configs))
    comp = Comparison(labels, reports)
    if metric is not None:
        if metric not in ("rmse", "nlpd", "rmse_rel_pct", "nlpd_rel_pct"):
            raise ConfigError(f"unknown metric {metric!r}")
        comp.operating_points = operating_points(labels, reports, configs, metric,
                                                 math.inf if limit is None else float(limit))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rwc = all(c.raw["record_wall_clock"] for c in configs)
        doc = {"tool": "streamgp", "version": __version__, "runs": {
            lab: rep.to_dict(rwc) for lab, rep in zip(labels, reports)},
            "operating_points": comp.operating_points}
        (out / "comparison.json").write_text(json.dumps(doc, indent=2) + "\n")
        rows = comp.table()
        with (out / "comparison.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (v if isinstance(v, int) else repr(float(v))) for k, v in r.items()})
    return comp


def gen(scenario: str, seed: int, out) -> Dataset:
    ds = gen_synthetic(scenario, seed)
    out = Path(out)
    save_csv(ds, out)
    if ds.test is not None:
        save_csv(ds.test, out.with_name(out.stem + "_test" + out.suffix))
    return ds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamgp", description="Continual sparse GP regression with adaptive model size.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one configured stream")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    c = sub.add_parser("compare", help="run several configs on the same data and align their results")
    c.add_argument("--configs", nargs="+", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--metric", default=None, help="operating-point metric, e.g. rmse_rel_pct")
    c.add_argument("--max", type=float, default=None, dest="limit", help="operating-point threshold")
    g = sub.add_parser("gen", help="write a synthetic scenario to CSV")
    g.add_argument("--scenario", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            rep = run_stream(RunConfig.load(args.config), args.out)
            if rep.aborted:
                print(f"error: {rep.aborted}", file=sys.stderr)
                return 3
            last = rep.batches[-1]
            print(f"{len(rep.batches)} batches, final M = {last.M_after}, final RMSE = {last.rmse:.4g}")
        elif args.command == "compare":
            comp = compare_methods([RunConfig.load(p) for p in args.configs], args.out, args.metric, args.limit)
            for lab, rep in zip(comp.labels, comp.reports):
                last = rep.batches[-1] if rep.batches else None
                print(f"{lab}: final M = {last.M_after if last else 'n/a'}")
            if any(rep.aborted for rep in comp.reports):
                return 3
        else:
            ds = gen(args.scenario, args.seed, args.out)
            print(f"wrote {ds.n} rows to {args.out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StreamGPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0
