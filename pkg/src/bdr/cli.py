"""Command-line entry point: ``bdr verify | experiment | stats``.

Exit codes: 0 success, 1 check failure, 2 usage or config error, 3 data error.
Config values come from defaults, then the ``--config`` JSON file, then flags.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from . import stats as st
from .data_io import DataError, write_csv, write_json
from .experiment import (
    INNER_MODES, RESULT_COLUMNS, TIMING_COLUMNS, ConfigError, RunConfig, run_experiment,
    summarize,
)
from .svm import TrainingError
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
STATS_COLUMNS = ("experiment", "n", "beta", "epsilon", "rep", "value", "bias", "seed")
STATS_KINDS = ("bias", "unbiased_beta", "consistency", "clt")


@dataclass
class StatsConfig:
    experiment: str = "bias"
    atoms: list = field(default_factory=lambda: [0.0, 1.0])
    weights: list = field(default_factory=lambda: [0.5, 0.5])
    n: int = 5
    beta: float = 0.0
    epsilon: object = 0.0
    reps: int = 2000
    seed: int = 0
    alpha: float = 1.0
    eps0: float = 0.1
    n_schedule: list = field(default_factory=lambda: [10, 100, 1000])
    tol_se_multiple: float = 3.0
    pilot_reps: int = 1000
    out: str = "results"

    def __post_init__(self):
        if self.experiment not in STATS_KINDS:
            raise ConfigError(f"stats experiment must be one of {STATS_KINDS}")
        if self.reps < 1 or self.n < 1 or not self.n_schedule:
            raise ConfigError("reps, n and n_schedule must be positive and nonempty")
        if self.epsilon != "pilot":
            try:
                self.epsilon = float(self.epsilon)
            except (TypeError, ValueError):
                raise ConfigError("epsilon must be a number or 'pilot'") from None

    @classmethod
    def from_mapping(cls, d: dict) -> "StatsConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown stats config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad stats config value: {exc}") from None


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bdr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--out", type=str, help="output directory")

    v = sub.add_parser("verify", parents=[common], help="run a seeded property suite")
    v.add_argument("suite", choices=sorted(SUITES))
    v.add_argument("--tol", type=float, help="override the suite tolerance")

    e = sub.add_parser("experiment", parents=[common], help="digit-pair SVM sweep")
    e.add_argument("--jobs", type=_positive)
    e.add_argument("--per-class", type=_positive, dest="per_class")
    e.add_argument("--full-size", action="store_true", default=None, dest="full_size")
    e.add_argument("--formulation", choices=("eq20", "exact"))
    e.add_argument("--inner", choices=INNER_MODES, dest="inner_mode")
    e.add_argument("--trials", type=_positive)

    s = sub.add_parser("stats", parents=[common], help="bias, consistency or CLT experiment")
    s.add_argument("--experiment", choices=STATS_KINDS)
    s.add_argument("--reps", type=_positive)
    s.add_argument("--jobs", type=_positive, help="accepted for symmetry; runs are vectorized")
    return p


def _load_json(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return d


def _merge(args, file_cfg: dict, keys) -> dict:
    merged = dict(file_cfg)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    return merged


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_verify(args) -> int:
    cfg = _load_json(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    tol = args.tol if args.tol is not None else cfg.get("tol")
    report = run_suite(args.suite, seed=seed, tol=tol).to_dict()
    report["seed"] = seed
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    out = args.out or cfg.get("out")
    if out:
        (_out_dir(out) / f"verify_{args.suite}.json").write_text(text + "\n")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_experiment(args) -> int:
    keys = ("seed", "out", "jobs", "per_class", "full_size", "formulation", "inner_mode",
            "trials")
    cfg = RunConfig.from_mapping(_merge(args, _load_json(args.config), keys))
    out = _out_dir(cfg.out)
    rows, timings = run_experiment(
        cfg, progress=lambda t: print(f"trial {t + 1}/{cfg.trials} done", file=sys.stderr))
    write_csv(out / "results.csv", RESULT_COLUMNS, rows)
    write_csv(out / "timings.csv", TIMING_COLUMNS, timings)
    summary = summarize(rows)
    # where and how fast it ran is not part of the result
    summary["config"] = {k: v for k, v in cfg.to_dict().items() if k not in ("out", "jobs")}
    write_json(out / "summary.json", summary)
    for b in summary["best_epsilon"]:
        print(f"{b['method']} beta={b['beta']} kappa={b['kappa']}: best epsilon "
              f"{b['best_epsilon']} (mean test accuracy {b['test_acc_mean']:.4f})")
    return EXIT_OK


def _problem(cfg: StatsConfig) -> st.SyntheticProblem:
    try:
        return st.mean_estimation(cfg.atoms, cfg.weights)
    except st.StatsError as exc:
        raise ConfigError(str(exc)) from None


def _epsilon(cfg: StatsConfig, prob) -> float:
    if cfg.epsilon == "pilot":
        # pilot draws use a separate seed so they do not reuse the main samples
        return st.pilot_epsilon(prob, cfg.n, cfg.pilot_reps, cfg.seed ^ 0x9E3779B97F4A7C15)
    return float(cfg.epsilon)


def _rep_rows(kind, n, beta, eps, values, truth, seed):
    return [{"experiment": kind, "n": n, "beta": beta, "epsilon": eps, "rep": r,
             "value": float(v), "bias": float(v - truth), "seed": seed}
            for r, v in enumerate(values)]


def cmd_stats(args) -> int:
    cfg = StatsConfig.from_mapping(_merge(args, _load_json(args.config),
                                          ("seed", "out", "experiment", "reps")))
    prob = _problem(cfg)
    out = _out_dir(cfg.out)
    truth = prob.true_optimum
    summary = {"config": {k: v for k, v in asdict(cfg).items() if k != "out"},
               "true_optimum": truth}
    if cfg.experiment == "bias":
        eps = _epsilon(cfg, prob)
        res = st.bias_experiment(prob, cfg.n, cfg.beta, eps, cfg.reps, cfg.seed)
        rows = _rep_rows("bias", cfg.n, cfg.beta, eps, res.values, truth, cfg.seed)
        summary.update(epsilon=eps, mean_bias=res.mean_bias, std_err=res.std_err,
                       failures=res.failures)
    elif cfg.experiment == "unbiased_beta":
        eps = _epsilon(cfg, prob)
        res = st.find_unbiased_beta(prob, cfg.n, eps, cfg.reps, cfg.tol_se_multiple, cfg.seed)
        vals = st.bias_experiment(prob, cfg.n, res.beta, eps, cfg.reps, cfg.seed).values
        rows = _rep_rows("unbiased_beta", cfg.n, res.beta, eps, vals, truth, cfg.seed)
        summary.update(epsilon=eps, beta=res.beta, beta_bracket=list(res.bracket),
                       bias=res.bias, std_err=res.std_err, bias_ci=list(res.bias_ci),
                       profile=[list(p) for p in res.monotone_profile],
                       profile_monotone=st.profile_is_monotone(res.monotone_profile))
    elif cfg.experiment == "consistency":
        table = st.consistency_experiment(prob, cfg.n_schedule, cfg.alpha, cfg.reps, cfg.seed,
                                          st.default_eps_schedule(cfg.eps0))
        rows = [r for t in table
                for r in _rep_rows("consistency", t.n, t.beta, t.epsilon, t.values, truth,
                                   cfg.seed)]
        summary["table"] = [{"n": t.n, "beta": t.beta, "epsilon": t.epsilon,
                             "mean_abs_error": t.mean_abs_error, "std_err": t.std_err}
                            for t in table]
    else:
        res = st.clt_experiment(prob, cfg.n, cfg.reps, cfg.seed, cfg.alpha, cfg.eps0)
        eps = cfg.eps0 / math.sqrt(cfg.n)
        beta = st.dirichlet_beta(cfg.alpha, cfg.n)
        rows = _rep_rows("clt", cfg.n, beta, eps, res.values, truth, cfg.seed)
        summary.update(ks_statistic=res.ks_statistic, p_value=res.p_value,
                       variance=res.variance)
    write_csv(out / f"stats_{cfg.experiment}.csv", STATS_COLUMNS, rows)
    write_json(out / f"stats_{cfg.experiment}.json", summary)
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, default=str))
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "experiment": cmd_experiment, "stats": cmd_stats}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (st.StatsError, TrainingError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
