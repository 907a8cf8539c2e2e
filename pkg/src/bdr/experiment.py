"""Digit-pair SVM sweeps: SAA, worst-case and blended models per trial."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .bdr_solver import SolverConfig, solve_bdr_coordinate_descent
from .data_io import Dataset, load_mnist, make_binary_task, subsample, synthetic_digits
from .distributions import SamplePoint
from .svm import Formulation, SvmInstance, SvmModel, SvmSweep, accuracy, predict, svm_bdr_problem

DEFAULT_EPSILONS = tuple(sorted(a * 10.0 ** -b for a in range(1, 10) for b in (2, 3, 4)))
DEFAULT_KAPPAS = (0.1, 0.25, 0.5, 0.75)
RESULT_COLUMNS = ("pair", "method", "beta", "epsilon", "kappa", "trial", "seed", "train_acc",
                  "test_acc", "objective")
TIMING_COLUMNS = ("pair", "method", "beta", "epsilon", "kappa", "trial", "wallclock")
INNER_MODES = ("primal_lp", "dual_search", "equal_weight")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    pair: tuple = (1, 7)
    betas: list = field(default_factory=lambda: [0.3])
    epsilons: list = field(default_factory=lambda: list(DEFAULT_EPSILONS))
    bdr_epsilons: Optional[list] = None
    kappas: list = field(default_factory=lambda: [0.25])
    trials: int = 20
    seed: int = 0
    per_class: int = 500
    test_per_class: int = 200
    full_size: bool = False
    train_fraction: float = 0.8
    formulation: str = "eq20"
    solver: str = "lp"
    inner_mode: str = "dual_search"
    max_outer: int = 200
    data: str = "mnist"
    data_dir: Optional[str] = None
    synthetic_per_digit: int = 300
    jobs: int = 1
    out: str = "results"

    def __post_init__(self):
        self.pair = tuple(int(d) for d in self.pair)
        if len(self.pair) != 2 or self.pair[0] == self.pair[1] or \
                not all(0 <= d <= 9 for d in self.pair):
            raise ConfigError("pair must be two distinct digits")
        for name in ("betas", "epsilons", "kappas"):
            v = [float(x) for x in getattr(self, name)]
            if not v:
                raise ConfigError(f"{name} must be nonempty")
            setattr(self, name, v)
        if self.bdr_epsilons is not None:
            self.bdr_epsilons = [float(x) for x in self.bdr_epsilons]
            if not set(self.bdr_epsilons) <= set(self.epsilons):
                raise ConfigError("bdr_epsilons must be a subset of epsilons")
        if not all(0 <= b <= 1 for b in self.betas):
            raise ConfigError("betas must lie in [0, 1]")
        if any(e < 0 for e in self.epsilons) or any(k < 0 for k in self.kappas):
            raise ConfigError("epsilons and kappas must be nonnegative")
        if self.trials < 1 or self.per_class < 1 or self.test_per_class < 1 or self.jobs < 1:
            raise ConfigError("trials, per-class counts and jobs must be positive")
        if not 0 <= self.seed < 2 ** 64 - 2 ** 20:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        try:
            Formulation(self.formulation)
        except ValueError:
            raise ConfigError(f"unknown formulation {self.formulation!r}") from None
        if self.solver not in ("lp", "generic"):
            raise ConfigError("solver must be 'lp' or 'generic'")
        if self.inner_mode not in INNER_MODES:
            raise ConfigError(f"inner mode must be one of {INNER_MODES}")
        if self.data not in ("mnist", "synthetic"):
            raise ConfigError("data must be 'mnist' or 'synthetic'")

    @classmethod
    def from_mapping(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config value: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_mapping(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pair"] = list(self.pair)
        return d

    @property
    def pair_name(self) -> str:
        return f"{self.pair[0]}v{self.pair[1]}"


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data == "synthetic":
        return synthetic_digits(cfg.synthetic_per_digit, cfg.seed, digits=cfg.pair)
    return load_mnist(cfg.data_dir)


def trial_seed(cfg: RunConfig, trial: int) -> int:
    return cfg.seed + trial


def _split(cfg: RunConfig, ds: Dataset, trial: int):
    s = trial_seed(cfg, trial)
    task = make_binary_task(ds, cfg.pair[0], cfg.pair[1], cfg.train_fraction, s)
    if not cfg.full_size:
        task = subsample(task, cfg.per_class, s, cfg.test_per_class)
    return task.arrays(ds)


class _GenericFitter:
    """Coordinate descent on the generic blended problem.

    The grid-based inner modes use the training points and their label
    flips as the finite candidate support.
    """

    def __init__(self, Xtr, ytr, kappa, cfg: RunConfig):
        self.X, self.y, self.kappa = Xtr, ytr, kappa
        self.solver_cfg = SolverConfig(inner_mode=cfg.inner_mode, max_outer=cfg.max_outer)
        self.grid = None
        if cfg.inner_mode != "dual_search":
            self.grid = tuple(SamplePoint(tuple(r), s * int(v))
                              for r, v in zip(Xtr, ytr) for s in (1, -1))

    def solve(self, beta, eps) -> SvmModel:
        prob = svm_bdr_problem(SvmInstance(self.X, self.y, beta, eps, self.kappa))
        if self.grid is not None:
            prob = replace(prob, candidate_grid=self.grid)
        sol = solve_bdr_coordinate_descent(prob, np.zeros(self.X.shape[1]), self.solver_cfg)
        return SvmModel(sol.x_opt, sol.lambda0, np.zeros(0), sol.value, Formulation.EQ20,
                        beta, eps, self.kappa)


def run_trial(cfg: RunConfig, ds: Dataset, trial: int):
    """Rows and timings for one trial, in a fixed order."""
    Xtr, ytr, Xte, yte = _split(cfg, ds, trial)
    s = trial_seed(cfg, trial)
    rows, timings = [], []
    bdr_eps = set(cfg.bdr_epsilons if cfg.bdr_epsilons is not None else cfg.epsilons)
    for kappa in cfg.kappas:
        if cfg.solver == "lp":
            sweep = SvmSweep(Xtr, ytr, kappa, cfg.formulation)
        else:
            sweep = _GenericFitter(Xtr, ytr, kappa, cfg)

        def fit(beta, eps):
            t0 = time.perf_counter()
            model = sweep.solve(beta, eps)
            wall = time.perf_counter() - t0
            return model, wall

        saa, saa_wall = fit(0.0, 0.0)
        saa_acc = (accuracy(predict(saa, Xtr), ytr), accuracy(predict(saa, Xte), yte))
        for eps in cfg.epsilons:
            jobs = [("saa", 0.0, saa, saa_wall, saa_acc)]
            model, wall = fit(1.0, eps)
            jobs.append(("dro", 1.0, model, wall, None))
            if eps in bdr_eps:
                for beta in cfg.betas:
                    model, wall = fit(beta, eps)
                    jobs.append(("bdr", beta, model, wall, None))
            for method, beta, model, wall, acc in jobs:
                if acc is None:
                    acc = (accuracy(predict(model, Xtr), ytr), accuracy(predict(model, Xte), yte))
                rows.append({"pair": cfg.pair_name, "method": method, "beta": beta,
                             "epsilon": eps, "kappa": kappa, "trial": trial, "seed": s,
                             "train_acc": acc[0], "test_acc": acc[1],
                             "objective": float(model.objective)})
                timings.append({"pair": cfg.pair_name, "method": method, "beta": beta,
                                "epsilon": eps, "kappa": kappa, "trial": trial,
                                "wallclock": wall})
    return rows, timings


_WORKER_DS: Optional[Dataset] = None


def _init_worker(ds):
    global _WORKER_DS
    _WORKER_DS = ds


def _worker(args):
    cfg, trial = args
    return run_trial(cfg, _WORKER_DS, trial)


def run_experiment(cfg: RunConfig, ds: Optional[Dataset] = None, progress=None):
    """All trials; results are collected in trial order whatever ``jobs`` is."""
    ds = load_dataset(cfg) if ds is None else ds
    rows, timings = [], []
    if cfg.jobs == 1:
        for t in range(cfg.trials):
            r, tm = run_trial(cfg, ds, t)
            rows += r
            timings += tm
            if progress:
                progress(t)
    else:
        with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(ds,)) as pool:
            for t, (r, tm) in enumerate(pool.map(_worker, [(cfg, t) for t in range(cfg.trials)])):
                rows += r
                timings += tm
                if progress:
                    progress(t)
    return rows, timings


def _mean_std(values):
    v = np.asarray(values, dtype=float)
    mean = math.fsum(v) / v.size
    std = math.sqrt(math.fsum((v - mean) ** 2) / (v.size - 1)) if v.size > 1 else 0.0
    return mean, std


def summarize(rows) -> dict:
    """Mean and sample std of accuracies per (method, beta, epsilon, kappa).

    SAA is reported once per kappa.  For each method and kappa the
    epsilon with the highest mean test accuracy is listed (ties go to the
    smallest epsilon).
    """
    groups = {}
    for r in rows:
        key = (r["method"], float(r["beta"]), float(r["epsilon"]), float(r["kappa"]))
        if r["method"] == "saa":
            key = ("saa", 0.0, 0.0, float(r["kappa"]))
            if key in groups and any(g["trial"] == r["trial"] for g in groups[key]):
                continue
        groups.setdefault(key, []).append(r)
    cells = []
    for key in sorted(groups):
        g = groups[key]
        te_m, te_s = _mean_std([r["test_acc"] for r in g])
        tr_m, tr_s = _mean_std([r["train_acc"] for r in g])
        cells.append({"method": key[0], "beta": key[1], "epsilon": key[2], "kappa": key[3],
                      "trials": len(g), "test_acc_mean": te_m, "test_acc_std": te_s,
                      "train_acc_mean": tr_m, "train_acc_std": tr_s})
    best = []
    for method in ("dro", "bdr"):
        for kappa in sorted({c["kappa"] for c in cells}):
            for beta in sorted({c["beta"] for c in cells if c["method"] == method}):
                cand = [c for c in cells if c["method"] == method and c["kappa"] == kappa
                        and c["beta"] == beta]
                if cand:
                    top = max(cand, key=lambda c: (c["test_acc_mean"], -c["epsilon"]))
                    best.append({"method": method, "beta": beta, "kappa": kappa,
                                 "best_epsilon": top["epsilon"],
                                 "test_acc_mean": top["test_acc_mean"]})
    return {"cells": cells, "best_epsilon": best}
