"""Seeded property suites shared by the command line and the test-suite.

Each suite generates its own instances from a fixed seed, checks one
property on every instance and returns a :class:`SuiteReport` listing the
failing cases.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    DiscreteDistribution, FiniteMixture, empirical_from_samples, expectation, mean_distribution,
    point,
)
from .phi_divergence import PhiBall, kl_divergence, phi_worst_case
from .stats import mean_estimation, minimize_replications
from .wasserstein import (
    GridInnerMax, WassersteinBall, candidate_support, verify_support_structure, worst_case_dual,
    worst_case_equal_weight, worst_case_primal,
)

MAX_DUMPED = 20


@dataclass
class SuiteReport:
    name: str
    cases: int
    tol: float
    failures: list = field(default_factory=list)
    max_error: float = 0.0
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {"suite": self.name, "passed": self.passed, "cases": self.cases,
                "failed": len(self.failures), "tol": self.tol, "max_error": self.max_error,
                "seconds": round(self.seconds, 3), "failing_cases": self.failures[:MAX_DUMPED]}


class _Recorder:
    def __init__(self, name, tol):
        self.report = SuiteReport(name, 0, tol)
        self._t = time.perf_counter()

    def check(self, case, error, ok=None, **detail):
        r = self.report
        r.cases += 1
        err = float(error)
        if math.isfinite(err):
            r.max_error = max(r.max_error, err)
        if ok is None:
            ok = err <= r.tol
        if not ok:
            r.failures.append({"case": case, "error": err, **detail})

    def done(self) -> SuiteReport:
        self.report.seconds = time.perf_counter() - self._t
        return self.report


def wasserstein_instance(seed: int):
    """Center of at most 5 atoms, at most 25 candidates, h in [0, 10], radius in [0, 2]."""
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(1, 6)), int(rng.integers(1, 3))
    center = DiscreteDistribution(tuple(point(*rng.uniform(0, 1, d)) for _ in range(n)),
                                  rng.dirichlet(np.ones(n)))
    grid = [point(*rng.uniform(0, 1, d)) for _ in range(int(rng.integers(1, 26 - n)))]
    cands = candidate_support(center, grid)
    values = {c: float(rng.uniform(0, 10)) for c in cands}
    return WassersteinBall(center, float(rng.uniform(0, 2))), values.__getitem__, cands


def concave_instance(seed: int):
    """Uniform center on a 1-D grid with a concave piecewise-linear loss."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(5, 26))
    xs = np.round(np.sort(rng.choice(np.arange(0, 101), m, replace=False)) / 100, 2)
    slopes = np.sort(rng.normal(0, 5, m - 1))[::-1]
    ys = np.concatenate([[0.0], np.cumsum(slopes * np.diff(xs))])
    ys = ys - ys.min() + rng.uniform(0, 1)
    h = lambda p: float(np.interp(p.coords[0], xs, ys))
    idx = rng.choice(m, int(rng.integers(1, 6)), replace=True)
    center = empirical_from_samples([point(xs[i]) for i in idx])
    return WassersteinBall(center, float(rng.uniform(0, 0.5))), h, [point(x) for x in xs]


def duality_suite(instances: int = 500, seed: int = 0, tol: float = 1e-6) -> SuiteReport:
    rec = _Recorder("duality", tol)
    for k in range(instances):
        ball, h, cands = wasserstein_instance(seed + k)
        primal = worst_case_primal(ball, h, cands).value
        dual, lam = worst_case_dual(ball, h, GridInnerMax.from_loss(cands, h, ball.metric))
        rec.check(seed + k, abs(primal - dual), primal=primal, dual=dual, lam=lam)
    return rec.done()


def support_suite(instances: int = 500, seed: int = 0, tol: float = 1e-7) -> SuiteReport:
    rec = _Recorder("support", tol)
    for k in range(instances):
        ball, h, cands = wasserstein_instance(seed + k)
        res = worst_case_primal(ball, h, cands)
        ok = verify_support_structure(res, ball.center, tol)
        atoms = int(np.count_nonzero(res.distribution.weights > tol))
        rec.check(seed + k, 0.0 if ok else 1.0, ok, atoms=atoms, center_size=ball.center.size)
    return rec.done()


def equal_weight_suite(instances: int = 200, seed: int = 0, tol: float = 1e-6) -> SuiteReport:
    rec = _Recorder("equal_weight", tol)
    for k in range(instances):
        ball, h, grid = concave_instance(seed + k)
        primal = worst_case_primal(ball, h, candidate_support(ball.center, grid)).value
        relocated, _ = worst_case_equal_weight(ball, h, grid)
        rec.check(seed + k, abs(primal - relocated), primal=primal, equal_weight=relocated)
    return rec.done()


def ordering_suite(reps: int = 1000, seed: int = 0, betas=(0.25, 0.5, 0.75), n: int = 5,
                   eps: float = 0.3, tol: float = 0.0) -> SuiteReport:
    """Per replication: SAA minimum <= blended minimum <= worst-case minimum."""
    rec = _Recorder("ordering", tol)
    prob = mean_estimation([0.0, 1.0], [0.5, 0.5])
    mu = prob.empirical_weights(n, reps, seed)
    for b in betas:
        r = minimize_replications(prob, mu, b, eps)
        gap = np.maximum(r.saa - r.blended, r.blended - r.robust)
        for i in range(reps):
            rec.check(f"beta={b},rep={i}", max(gap[i], 0.0), bool(gap[i] <= tol),
                      saa=float(r.saa[i]), blended=float(r.blended[i]),
                      robust=float(r.robust[i]))
    return rec.done()


def kl_grid_max(center, h, eps, step=1e-3) -> float:
    """Brute force over a grid on the 3-point simplex."""
    s = np.arange(0.0, 1.0 + step / 2, step)
    A, B = np.meshgrid(s, s, indexing="ij")
    keep = A + B <= 1 + step / 2
    M = np.stack([A[keep], B[keep], np.maximum(1 - A[keep] - B[keep], 0.0)], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(M > 0, M * np.log(M / np.asarray(center)[None, :]), 0.0).sum(axis=1)
    return float((M @ np.asarray(h, dtype=float))[kl <= eps].max())


def phi_suite(instances: int = 20, seed: int = 0, tol: float = 1e-3) -> SuiteReport:
    rec = _Recorder("phi", tol)
    for k in range(instances):
        rng = np.random.default_rng(seed + k)
        c = rng.dirichlet(np.ones(3))
        c[-1] = 1 - math.fsum(c[:-1])
        h = rng.uniform(0, 5, 3)
        eps = float(rng.uniform(0.01, 1.0))
        value, mu = phi_worst_case(PhiBall(c, eps), h)
        grid = kl_grid_max(c, h, eps)
        feasible = kl_divergence(mu, c) <= eps + 1e-9
        err = abs(value - grid)
        rec.check(seed + k, err, err <= tol and feasible, value=value, grid=grid)
    return rec.done()


def lemma1_suite(instances: int = 100, seed: int = 0, tol: float = 1e-10) -> SuiteReport:
    """Mixture expectation as a double sum against the collapsed mean distribution."""
    rec = _Recorder("lemma1", tol)
    h = lambda p: math.sin(p.coords[0]) + p.coords[0] ** 2
    for k in range(instances):
        rng = np.random.default_rng(seed + k)
        pool = [point(float(v)) for v in rng.integers(-5, 6, size=8)]
        comps = []
        for _ in range(int(rng.integers(1, 6))):
            idx = rng.choice(len(pool), size=int(rng.integers(1, 6)), replace=False)
            comps.append(DiscreteDistribution(tuple(pool[i] for i in idx),
                                              rng.dirichlet(np.ones(idx.size))))
        w = rng.dirichlet(np.ones(len(comps)))
        w[-1] = 1 - math.fsum(w[:-1])
        double_sum = math.fsum(float(wk) * float(mu) * h(a) for wk, comp in zip(w, comps)
                               for a, mu in zip(comp.atoms, comp.weights))
        collapsed = expectation(mean_distribution(FiniteMixture(tuple(comps), w)), h)
        rec.check(seed + k, abs(double_sum - collapsed), double_sum=double_sum,
                  collapsed=collapsed)
    return rec.done()


SUITES = {
    "duality": duality_suite,
    "support": support_suite,
    "ordering": ordering_suite,
    "phi": phi_suite,
    "lemma1": lemma1_suite,
    "equal_weight": equal_weight_suite,
}


def run_suite(name: str, seed: int = 0, tol=None) -> SuiteReport:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    kw = {"seed": seed}
    if tol is not None:
        kw["tol"] = tol
    return SUITES[name](**kw)
