"""Monte-Carlo harness for bias, consistency and CLT behaviour of the
blended estimator on a synthetic 1-D mean-estimation problem.

Loss ``h(x, xi) = (x - xi)**2 + shift`` with ``xi`` drawn from a finite
``P0``.  The Wasserstein-1 worst case is taken over the finite support
``{support_lo} | atoms | {support_hi}``.  On that support it is computed
exactly through the dual in ``lam``, whose objective is piecewise linear
with breakpoints that depend on ``x`` only.  That makes every replication's
objective cheap to evaluate in a vectorized way.

Replication ``r`` of a run with seed ``s`` draws its sample from the Philox
stream keyed ``(s, r)``.  Runs with the same seed therefore share samples
(common random numbers) across ``beta`` and ``epsilon``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats as sps

from .bdr_solver import LossOracle
from .data_io import SyntheticSampler

GOLDEN = (math.sqrt(5) - 1) / 2
X_TOL = 1e-10
MAX_FAIL_FRACTION = 0.01


class StatsError(ValueError):
    pass


class NoSignChangeError(StatsError):
    pass


class DegenerateVarianceError(StatsError):
    pass


@dataclass(frozen=True)
class BoundSpec:
    sigma: float
    eta: float
    kind: str = "hoeffding"

    def __post_init__(self):
        if self.kind != "hoeffding":
            raise StatsError(f"unsupported bound kind {self.kind!r}")
        if not self.sigma > 0:
            raise StatsError("sigma must be positive")
        if not 0 < self.eta < 1:
            raise StatsError("eta must lie in (0, 1)")


def hoeffding_bound(v_n: float, n: int, spec: BoundSpec) -> float:
    if n < 1:
        raise StatsError("n must be at least 1")
    return v_n + math.sqrt(-2 * spec.sigma ** 2 * math.log(spec.eta) / n)


def bdr_generalization_bound(v_rn: float, g_bound: float, beta: float) -> float:
    if not 0 <= beta <= 1:
        raise StatsError("beta must lie in [0, 1]")
    return beta * v_rn + (1 - beta) * g_bound


def regularized_bounds(v_n: float, beta: float, eps: float, f: float, g: float):
    """(blended bound, robust bound) for the regularized comparison.

    Blended is ``v_n + beta*eps*f + (1-beta)*g``; robust is ``v_n + eps*f``.
    """
    if not 0 <= beta <= 1:
        raise StatsError("beta must lie in [0, 1]")
    return v_n + beta * eps * f + (1 - beta) * g, v_n + eps * f


def dirichlet_beta(alpha: float, n: int) -> float:
    if alpha < 0 or n < 1:
        raise StatsError("need alpha >= 0 and n >= 1")
    return alpha / (alpha + n)


@dataclass(frozen=True)
class SyntheticProblem:
    """Squared-error mean estimation under a finite ``P0``."""

    atoms: tuple
    weights: tuple
    shift: float = 0.0
    support_lo: float = -1.0
    support_hi: float = 2.0
    true_optimum_se: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if a.ndim != 1 or a.shape != w.shape or a.size == 0:
            raise StatsError("atoms and weights must be equal-length 1-D sequences")
        if np.unique(a).size != a.size:
            raise StatsError("atoms must be distinct")
        if np.any(w < 0) or abs(math.fsum(w) - 1) > 1e-12:
            raise StatsError("weights must form a probability vector")
        if not self.support_lo <= a.min() <= a.max() <= self.support_hi:
            raise StatsError("atoms must lie inside the support interval")
        object.__setattr__(self, "atoms", tuple(float(v) for v in a))
        object.__setattr__(self, "weights", tuple(float(v) for v in w))

    @property
    def decision_dim(self) -> int:
        return 1

    @property
    def x0(self) -> float:
        return math.fsum(a * w for a, w in zip(self.atoms, self.weights))

    @property
    def true_optimum(self) -> float:
        m = self.x0
        return math.fsum(w * (a - m) ** 2 for a, w in zip(self.atoms, self.weights)) + self.shift

    @property
    def loss_variance(self) -> float:
        """Variance of ``h(x0, xi)`` under ``P0``."""
        m = self.x0
        h = np.array([(a - m) ** 2 for a in self.atoms])
        w = np.array(self.weights)
        mean = math.fsum(w * h)
        return math.fsum(w * (h - mean) ** 2)

    @property
    def loss(self) -> LossOracle:
        s = self.shift
        return LossOracle(lambda x, xi: (x[0] - xi.coords[0]) ** 2 + s,
                          lambda x, xi: np.array([2 * (x[0] - xi.coords[0])]))

    @property
    def candidates(self) -> np.ndarray:
        return np.unique(np.concatenate([[self.support_lo], self.atoms, [self.support_hi]]))

    def sampler(self, seed: int) -> SyntheticSampler:
        return SyntheticSampler(self.atoms, self.weights, seed)

    def empirical_weights(self, n: int, reps: int, seed: int, first_rep: int = 0) -> np.ndarray:
        """reps x atoms matrix of empirical frequencies, row r from stream r."""
        if n < 1 or reps < 1:
            raise StatsError("need n >= 1 and reps >= 1")
        s = self.sampler(seed)
        m = len(self.atoms)
        out = np.empty((reps, m))
        for r in range(reps):
            out[r] = np.bincount(s.indices(n, stream=first_rep + r), minlength=m) / n
        return out


def mean_estimation(atoms: Sequence[float], weights: Sequence[float], **kw) -> SyntheticProblem:
    return SyntheticProblem(tuple(atoms), tuple(weights), **kw)


class _Evaluator:
    """Exact SAA and worst-case values for many empirical weight vectors."""

    def __init__(self, prob: SyntheticProblem):
        self.atoms = np.asarray(prob.atoms)
        self.cands = prob.candidates
        self.shift = prob.shift
        self.cost = np.abs(self.atoms[:, None] - self.cands[None, :])
        m, k = self.cost.shape
        ii, jj, kk = [], [], []
        for i in range(m):
            for j in range(k):
                for l in range(j + 1, k):
                    if self.cost[i, j] != self.cost[i, l]:
                        ii.append(i)
                        jj.append(j)
                        kk.append(l)
        self._pairs = (np.array(ii, dtype=int), np.array(jj, dtype=int), np.array(kk, dtype=int))

    def parts(self, x: np.ndarray, mu: np.ndarray, eps: np.ndarray):
        """(SAA, worst case) at per-row decisions ``x`` for weights ``mu``."""
        hc = (x[:, None] - self.cands[None, :]) ** 2 + self.shift
        ha = (x[:, None] - self.atoms[None, :]) ** 2 + self.shift
        saa = np.einsum("ri,ri->r", mu, ha)
        ii, jj, kk = self._pairs
        dc = self.cost[ii, jj] - self.cost[ii, kk]
        lam = (hc[:, jj] - hc[:, kk]) / dc[None, :]
        lam = np.concatenate([np.zeros((x.size, 1)), np.maximum(lam, 0.0)], axis=1)
        # g[r, b, i] = max_j h_j - lam_b * cost_ij
        g = (hc[:, None, None, :] - lam[:, :, None, None] * self.cost[None, None, :, :]).max(axis=3)
        g = np.maximum(g, ha[:, None, :])
        F = eps[:, None] * lam + np.einsum("ri,rbi->rb", mu, g)
        # a zero radius ball is the singleton center
        worst = np.where(eps == 0, saa, np.maximum(F.min(axis=1), saa))
        return saa, worst


def blend(saa, worst, beta):
    """``saa + beta*(worst - saa)``, monotone in ``beta`` under rounding."""
    return saa + beta * (worst - saa)


@dataclass
class MinResult:
    saa: np.ndarray
    blended: np.ndarray
    robust: np.ndarray
    x_blended: np.ndarray


def minimize_replications(prob: SyntheticProblem, mu: np.ndarray, beta, eps) -> MinResult:
    """Per-row minima over ``x`` of SAA, blended and worst-case objectives.

    Each objective is minimized by golden-section search over the support
    interval.  All three are then evaluated at all minimizers found (and the
    sample mean) and each keeps its best, so per row the pointwise ordering
    of the objectives carries over to the reported minima.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    R = mu.shape[0]
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (R,))
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (R,))
    if np.any((beta < 0) | (beta > 1)) or np.any(eps < 0):
        raise StatsError("need beta in [0, 1] and eps >= 0")
    ev = _Evaluator(prob)

    def search(b):
        lo = np.full(R, prob.support_lo)
        hi = np.full(R, prob.support_hi)
        c, d = hi - GOLDEN * (hi - lo), lo + GOLDEN * (hi - lo)
        fc, fd = blend(*ev.parts(c, mu, eps), b), blend(*ev.parts(d, mu, eps), b)
        while np.max(hi - lo) > X_TOL:
            left = fc <= fd
            hi = np.where(left, d, hi)
            lo = np.where(left, lo, c)
            p = np.where(left, hi - GOLDEN * (hi - lo), lo + GOLDEN * (hi - lo))
            fp = blend(*ev.parts(p, mu, eps), b)
            c, d, fc, fd = (np.where(left, p, d), np.where(left, c, p),
                            np.where(left, fp, fd), np.where(left, fc, fp))
        return (lo + hi) / 2

    mean_x = mu @ ev.atoms
    xs = [mean_x, search(beta), search(np.ones(R))]
    vals = [ev.parts(x, mu, eps) for x in xs]
    saa = np.min([v[0] for v in vals], axis=0)
    bl = np.stack([blend(s, w, beta) for s, w in vals])
    rob = np.min([blend(s, w, 1.0) for s, w in vals], axis=0)
    k = np.argmin(bl, axis=0)
    return MinResult(saa, bl[k, np.arange(R)], rob, np.stack(xs)[k, np.arange(R)])


def _summary(values: np.ndarray):
    n = values.size
    mean = math.fsum(values) / n
    sd = math.sqrt(math.fsum((values - mean) ** 2) / (n - 1)) if n > 1 else math.nan
    return mean, sd / math.sqrt(n)


def _check_failures(values: np.ndarray):
    bad = int(np.count_nonzero(~np.isfinite(values)))
    if bad > MAX_FAIL_FRACTION * values.size:
        raise StatsError(f"{bad} of {values.size} replications failed")
    return bad


@dataclass
class BiasResult:
    mean_bias: float
    std_err: float
    values: np.ndarray
    beta: float
    epsilon: float
    n: int
    seed: int
    failures: int = 0
    saa: Optional[np.ndarray] = field(default=None, repr=False)
    robust: Optional[np.ndarray] = field(default=None, repr=False)


def bias_experiment(prob: SyntheticProblem, n: int, beta: float, eps: float, reps: int,
                    seed: int, min_reps: int = 30) -> BiasResult:
    """Mean of ``min_x v_b - v(x0)`` over ``reps`` independent samples."""
    if reps < min_reps:
        raise StatsError(f"need at least {min_reps} replications")
    mu = prob.empirical_weights(n, reps, seed)
    res = minimize_replications(prob, mu, beta, eps)
    vals = res.blended
    failures = _check_failures(vals)
    ok = vals[np.isfinite(vals)]
    mean, se = _summary(ok - prob.true_optimum)
    return BiasResult(mean, se, vals, beta, eps, n, seed, failures, res.saa, res.robust)


def w1_to_truth(prob: SyntheticProblem, mu: np.ndarray) -> np.ndarray:
    """Wasserstein-1 distance of each empirical row to ``P0`` on the line."""
    a = np.asarray(prob.atoms)
    order = np.argsort(a)
    gaps = np.diff(a[order])
    diff = np.cumsum(np.atleast_2d(mu)[:, order] - np.asarray(prob.weights)[order], axis=1)
    return np.abs(diff[:, :-1]) @ gaps


def pilot_epsilon(prob: SyntheticProblem, n: int, reps: int, seed: int,
                  quantile: float = 0.95, factor: float = 2.0) -> float:
    """``factor`` times the ``quantile`` of W1(empirical, P0) over a pilot run."""
    d = w1_to_truth(prob, prob.empirical_weights(n, reps, seed))
    return factor * float(np.quantile(d, quantile))


@dataclass
class UnbiasedBeta:
    beta: float
    bracket: tuple
    bias: float
    std_err: float
    bias_ci: tuple
    evaluations: int
    monotone_profile: list


def find_unbiased_beta(prob: SyntheticProblem, n: int, eps: float, reps: int,
                       tol_se_multiple: float = 3.0, seed: int = 0, beta_tol: float = 1e-4,
                       z: float = 1.96, max_iter: int = 60) -> UnbiasedBeta:
    """Bisection on ``beta`` for zero estimated bias using common samples.

    Requires the bias at ``beta=0`` to be negative and at ``beta=1``
    positive, each by ``tol_se_multiple`` standard errors.  Stops once the
    bracket is narrower than ``beta_tol``; the reported interval is the
    bias estimate at the returned ``beta`` plus or minus ``z`` standard errors.
    """
    mu = prob.empirical_weights(n, reps, seed)
    cache = {}

    def bias(b):
        if b not in cache:
            vals = minimize_replications(prob, mu, b, eps).blended
            _check_failures(vals)
            cache[b] = _summary(vals[np.isfinite(vals)] - prob.true_optimum)
        return cache[b]

    profile = [(b, *bias(b)) for b in (0.0, 0.25, 0.5, 0.75, 1.0)]
    (m0, s0), (m1, s1) = bias(0.0), bias(1.0)
    if not (m0 < -tol_se_multiple * s0 and m1 > tol_se_multiple * s1):
        raise NoSignChangeError(
            f"no sign change in bias: beta=0 gives {m0:.3g} (se {s0:.2g}), "
            f"beta=1 gives {m1:.3g} (se {s1:.2g}); epsilon={eps} may be too small")
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        if hi - lo <= beta_tol:
            break
        mid = (lo + hi) / 2
        if bias(mid)[0] < 0:
            lo = mid
        else:
            hi = mid
    b = (lo + hi) / 2
    m, s = bias(b)
    return UnbiasedBeta(b, (lo, hi), m, s, (m - z * s, m + z * s), len(cache), profile)


def profile_is_monotone(profile, se_multiple: float = 2.0) -> bool:
    """Bias estimates nondecreasing in ``beta`` up to ``se_multiple`` errors."""
    for (_, m0, s0), (_, m1, s1) in zip(profile, profile[1:]):
        if m1 < m0 - se_multiple * math.hypot(s0, s1):
            return False
    return True


def default_eps_schedule(eps0: float) -> Callable[[int], float]:
    return lambda n: eps0 / math.sqrt(n)


@dataclass
class ConsistencyRow:
    n: int
    beta: float
    epsilon: float
    mean_abs_error: float
    std_err: float
    values: np.ndarray = field(repr=False)


def consistency_experiment(prob: SyntheticProblem, n_schedule: Sequence[int], alpha: float,
                           reps: int, seed: int = 0,
                           eps_schedule: Optional[Callable[[int], float]] = None) -> list:
    """Mean absolute error of the blended minimum with ``beta_n = alpha/(alpha+n)``."""
    eps_schedule = eps_schedule or default_eps_schedule(0.1)
    rows = []
    for n in n_schedule:
        b, e = dirichlet_beta(alpha, n), float(eps_schedule(n))
        mu = prob.empirical_weights(n, reps, seed)
        vals = minimize_replications(prob, mu, b, e).blended
        _check_failures(vals)
        err = np.abs(vals[np.isfinite(vals)] - prob.true_optimum)
        mean, se = _summary(err)
        rows.append(ConsistencyRow(n, b, e, mean, se, vals))
    return rows


@dataclass
class CltResult:
    ks_statistic: float
    p_value: float
    statistics: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    variance: float = math.nan


def clt_experiment(prob: SyntheticProblem, n: int, reps: int, seed: int = 0,
                   alpha: float = 1.0, eps0: float = 0.1) -> CltResult:
    """KS test of ``sqrt(n)(min v_b - v(x0)) / sqrt(V)`` against N(0, 1)."""
    V = prob.loss_variance
    if not V > 1e-15:
        raise DegenerateVarianceError("loss variance at the true optimum is zero")
    b, e = dirichlet_beta(alpha, n), eps0 / math.sqrt(n)
    vals = minimize_replications(prob, prob.empirical_weights(n, reps, seed), b, e).blended
    _check_failures(vals)
    ok = vals[np.isfinite(vals)]
    z = math.sqrt(n) * (ok - prob.true_optimum) / math.sqrt(V)
    ks = sps.kstest(z, "norm")
    return CltResult(float(ks.statistic), float(ks.pvalue), z, ok, V)
