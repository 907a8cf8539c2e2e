"""Ground metrics, Wasserstein distances and worst-case expectations over
Wasserstein balls around discrete distributions.

Three routes to the worst case are provided:

* ``worst_case_primal``: transport LP over plans from the center atoms to
  a finite candidate support, with a budget on the transport cost.
* ``worst_case_dual``: one-dimensional convex minimization over the
  multiplier of the budget, given an oracle for the per-atom inner
  maximization ``max_xi h(xi) - lam * d(xi, xi_i)**p``.
* ``worst_case_equal_weight``: for uniform centers, relocates each atom to
  a single point under an average-cost budget.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .distributions import (
    DiscreteDistribution, LossEvaluationError, SamplePoint, evaluate_losses,
)
from .lp_core import LinearProgram, LpStatus, solve_lp

MAX_COST_ENTRIES = 10_000_000
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
LAMBDA_TOL = 1e-10
LAMBDA_CEILING = 1e12


class WassersteinError(ValueError):
    pass


class CostMatrixTooLarge(WassersteinError):
    pass


class BallInfeasibleError(WassersteinError):
    """No distribution on the candidate support lies inside the ball."""


class GrowthRateError(WassersteinError):
    """The dual objective kept decreasing as the multiplier grew."""


class MetricKind(enum.Enum):
    EUCLIDEAN = "euclidean"
    INF_NORM_LABEL_FLIP = "inf_norm_label_flip"
    CUSTOM = "custom"


@dataclass(frozen=True)
class GroundMetric:
    kind: MetricKind = MetricKind.EUCLIDEAN
    kappa: float = 0.0
    oracle: Optional[Callable[[SamplePoint, SamplePoint], float]] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MetricKind(self.kind))
        if self.kappa < 0:
            raise WassersteinError("kappa must be nonnegative")
        if self.kind is MetricKind.CUSTOM and self.oracle is None:
            raise WassersteinError("custom metric needs an oracle")

    @classmethod
    def euclidean(cls) -> "GroundMetric":
        return cls(MetricKind.EUCLIDEAN)

    @classmethod
    def inf_norm_label_flip(cls, kappa: float) -> "GroundMetric":
        return cls(MetricKind.INF_NORM_LABEL_FLIP, float(kappa))

    @classmethod
    def custom(cls, oracle) -> "GroundMetric":
        return cls(MetricKind.CUSTOM, 0.0, oracle)

    def __call__(self, a: SamplePoint, b: SamplePoint) -> float:
        return float(self.pairwise([a], [b])[0, 0])

    def pairwise(self, rows: Sequence[SamplePoint], cols: Sequence[SamplePoint]) -> np.ndarray:
        if len(rows) * len(cols) > MAX_COST_ENTRIES:
            raise CostMatrixTooLarge(
                f"{len(rows)} x {len(cols)} cost matrix exceeds {MAX_COST_ENTRIES} entries")
        if self.kind is MetricKind.CUSTOM:
            return np.array([[float(self.oracle(a, b)) for b in cols] for a in rows])
        X = np.array([p.coords for p in rows], dtype=float)
        Y = np.array([p.coords for p in cols], dtype=float)
        if X.shape[1] != Y.shape[1]:
            raise WassersteinError(f"dimension mismatch {X.shape[1]} vs {Y.shape[1]}")
        diff = X[:, None, :] - Y[None, :, :]
        if self.kind is MetricKind.EUCLIDEAN:
            return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        D = np.abs(diff).max(axis=2)
        la = np.array([0 if p.label is None else p.label for p in rows])
        lb = np.array([0 if p.label is None else p.label for p in cols])
        return D + self.kappa * (la[:, None] != lb[None, :])


def check_metric(metric: GroundMetric, points: Sequence[SamplePoint], tol: float = 1e-12) -> bool:
    """Sampled check of identity, symmetry and nonnegativity."""
    D = metric.pairwise(points, points)
    return bool(np.all(np.abs(np.diag(D)) <= tol) and np.all(np.abs(D - D.T) <= tol)
                and np.all(D >= -tol))


@dataclass(frozen=True)
class WassersteinBall:
    center: DiscreteDistribution
    radius: float
    order: float = 1.0
    metric: GroundMetric = field(default_factory=GroundMetric.euclidean)

    def __post_init__(self):
        if not (self.radius >= 0 and math.isfinite(self.radius)):
            raise WassersteinError(f"radius must be finite and nonnegative, got {self.radius}")
        if not self.order >= 1:
            raise WassersteinError(f"order must be >= 1, got {self.order}")

    @property
    def budget(self) -> float:
        return self.radius ** self.order

    def cost_matrix(self, cols: Sequence[SamplePoint]) -> np.ndarray:
        return self.metric.pairwise(self.center.atoms, cols) ** self.order


@dataclass(frozen=True)
class TransportPlan:
    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        P = np.array(self.matrix, dtype=float)
        r = np.array(self.row_marginal, dtype=float)
        c = np.array(self.col_marginal, dtype=float)
        if P.shape != (r.size, c.size):
            raise WassersteinError(f"plan shape {P.shape} does not match marginals")
        if np.any(P < 0):
            raise WassersteinError("plan has negative entries")
        if np.abs(P.sum(axis=1) - r).max(initial=0) > 1e-9 or \
                np.abs(P.sum(axis=0) - c).max(initial=0) > 1e-9:
            raise WassersteinError("plan marginals do not match")
        for a in (P, r, c):
            a.setflags(write=False)
        object.__setattr__(self, "matrix", P)
        object.__setattr__(self, "row_marginal", r)
        object.__setattr__(self, "col_marginal", c)


@dataclass(frozen=True)
class WorstCaseResult:
    value: float
    distribution: DiscreteDistribution
    plan: Optional[TransportPlan]
    dual_lambda0: float
    split_atom_index: Optional[int] = None
    split_fraction: Optional[float] = None


def _clean_plan(P: np.ndarray, row_marginal: np.ndarray) -> np.ndarray:
    """Clip solver round-off and make row sums exact."""
    P = np.where(P < 0, 0.0, P)
    sums = P.sum(axis=1)
    scale = np.divide(row_marginal, sums, out=np.zeros_like(sums), where=sums > 0)
    return P * scale[:, None]


def _plan_split(P: np.ndarray, row_marginal: np.ndarray, tol: float):
    split_rows = [i for i in range(P.shape[0]) if np.count_nonzero(P[i] > tol) > 1]
    if not split_rows:
        return None, None
    i = split_rows[0]
    j = int(np.flatnonzero(P[i] > tol)[0])
    return i, float(P[i, j] / row_marginal[i])


def candidate_support(center: DiscreteDistribution, grid: Sequence[SamplePoint]) -> tuple:
    """Center atoms followed by grid points not already present."""
    seen = set()
    out = []
    for p in list(center.atoms) + list(grid):
        if p not in seen:
            seen.add(p)
            out.append(p)
    return tuple(out)


def wasserstein_distance(a: DiscreteDistribution, b: DiscreteDistribution, p: float = 1.0,
                         metric: Optional[GroundMetric] = None):
    """Order-``p`` distance and an optimal coupling, via the transport LP."""
    if p < 1:
        raise WassersteinError("order must be >= 1")
    metric = metric or GroundMetric.euclidean()
    if a.dim != b.dim:
        raise WassersteinError("distributions live on different spaces")
    C = metric.pairwise(a.atoms, b.atoms) ** p
    n, m = C.shape
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A[n + j, j::m] = 1.0
    lp = LinearProgram(C.ravel(), A, ("=",) * (n + m),
                       np.concatenate([a.weights, b.weights]))
    sol = solve_lp(lp)
    if sol.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"transport LP returned {sol.status}")
    P = np.where(sol.primal.reshape(n, m) < 0, 0.0, sol.primal.reshape(n, m))
    plan = TransportPlan(P, P.sum(axis=1), P.sum(axis=0))
    cost = max(float(sol.value), 0.0)
    return cost ** (1.0 / p), plan


def worst_case_primal(ball: WassersteinBall, h: Callable[[SamplePoint], float],
                      candidate_atoms: Sequence[SamplePoint], tol: float = 1e-9,
                      method: str = "simplex") -> WorstCaseResult:
    """Maximize the expected loss over plans onto ``candidate_atoms``.

    The budget is ``sum_ij d(xi_i, c_j)**p P_ij <= radius**p``.  Returns the
    worst-case distribution on the candidates (column sums of the plan);
    its value is recomputed from ``h`` at those atoms.
    """
    cands = tuple(candidate_atoms)
    if not cands:
        raise WassersteinError("empty candidate set")
    hv = evaluate_losses(DiscreteDistribution(cands, np.full(len(cands), 1.0 / len(cands))), h)
    C = ball.cost_matrix(cands)
    return _primal_from_values(ball, cands, hv, C, tol, method)


def _primal_from_values(ball, cands, hv, C, tol=1e-9, method="simplex") -> WorstCaseResult:
    mu = ball.center.weights
    n, m = C.shape
    A = np.zeros((n + 1, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1.0
    A[n] = C.ravel()
    lp = LinearProgram(-np.tile(hv, n), A, ("=",) * n + ("<=",),
                       np.concatenate([mu, [ball.budget]]))
    sol = solve_lp(lp, tol, method=method)
    if sol.status is LpStatus.INFEASIBLE:
        raise BallInfeasibleError(
            "no plan onto the candidate support fits the budget; include the center atoms")
    if sol.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"worst-case LP returned {sol.status}")
    P = _clean_plan(sol.primal.reshape(n, m), mu)
    cols = P.sum(axis=0)
    cols = cols / math.fsum(cols)
    plan = TransportPlan(P, mu, cols)
    dist = DiscreteDistribution(cands, cols)
    value = math.fsum(cols * hv)
    i0, q = _plan_split(P, mu, 1e-12)
    lam = -float(sol.dual[n]) if sol.dual is not None else float("nan")
    return WorstCaseResult(value, dist, plan, max(lam, 0.0), i0, q)


# --------------------------------------------------------------------------
# dual route


class GridInnerMax:
    """Exact inner maximization over a finite candidate set.

    ``batch(lam, atoms)`` returns ``max_j h_j - lam * d(c_j, atom)**p`` for
    each atom.
    """

    def __init__(self, candidates: Sequence[SamplePoint], h_values, metric: GroundMetric,
                 p: float = 1.0):
        self.candidates = tuple(candidates)
        self.h = np.asarray(h_values, dtype=float)
        if self.h.shape != (len(self.candidates),):
            raise WassersteinError("one loss value per candidate required")
        if not np.all(np.isfinite(self.h)):
            j = int(np.flatnonzero(~np.isfinite(self.h))[0])
            raise LossEvaluationError(j, self.h[j])
        self.metric = metric
        self.p = p
        self._cache_key = None
        self._cost = None

    @classmethod
    def from_loss(cls, candidates, h, metric, p=1.0):
        cands = tuple(candidates)
        return cls(cands, [float(h(c)) for c in cands], metric, p)

    def _costs(self, atoms) -> np.ndarray:
        key = tuple(atoms)
        if key != self._cache_key:
            self._cost = self.metric.pairwise(key, self.candidates) ** self.p
            self._cache_key = key
        return self._cost

    def batch(self, lam: float, atoms) -> np.ndarray:
        return (self.h[None, :] - lam * self._costs(atoms)).max(axis=1)

    def argmax(self, lam: float, atoms) -> list:
        idx = (self.h[None, :] - lam * self._costs(atoms)).argmax(axis=1)
        return [self.candidates[j] for j in idx]

    def __call__(self, lam: float, atom: SamplePoint) -> float:
        return float(self.batch(lam, [atom])[0])

    def lambda_bracket(self, atoms):
        """Multiplier range containing a minimizer when the atoms are candidates."""
        C = self._costs(atoms)
        own = np.array([[a == c for c in self.candidates] for a in atoms])
        h_own = np.where(own, self.h[None, :], -np.inf).max(axis=1)
        if not np.all(np.isfinite(h_own)):
            return 0.0, None
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(C > 0, (self.h[None, :] - h_own[:, None]) / C, 0.0)
        L = max(float(ratio.max(initial=0.0)), 0.0)
        return 0.0, 2.0 * L + 1.0


def dual_objective_value(ball: WassersteinBall, inner_max, lam: float) -> float:
    """``radius**p * lam + sum_i mu_i * inner_max(lam, xi_i)``."""
    atoms = ball.center.atoms
    if hasattr(inner_max, "batch"):
        inner = np.asarray(inner_max.batch(lam, atoms), dtype=float)
    else:
        inner = np.array([inner_max(lam, a) for a in atoms], dtype=float)
    if np.any(np.isposinf(inner)):
        return math.inf
    return ball.budget * lam + math.fsum(ball.center.weights * inner)


def golden_section(f, lo: float, hi: float, tol: float = LAMBDA_TOL, max_iter: int = 500):
    """Minimize a convex scalar function on [lo, hi]; returns (x, f(x))."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    best = min(((fc, c), (fd, d), (f(lo), lo), (f(hi), hi)), key=lambda t: t[0])
    return best[1], best[0]


def worst_case_dual(ball: WassersteinBall, h: Optional[Callable[[SamplePoint], float]],
                    inner_max, lambda_max: Optional[float] = None,
                    lambda_min: Optional[float] = None, probes=None):
    """Minimize the dual objective over the multiplier ``lam >= 0``.

    Returns ``(value, lam)``.  With zero radius the value is the center
    expectation and ``lam`` is ``inf``.  The search bracket comes from the
    arguments, else from ``inner_max.lambda_bracket``, else from a growth
    rate estimate on ``probes``; it is then doubled while the objective is
    still decreasing at its upper end.
    """
    if ball.radius == 0.0:
        if h is None:
            raise WassersteinError("zero radius needs the loss to evaluate the center")
        vals = evaluate_losses(ball.center, h)
        return math.fsum(ball.center.weights * vals), math.inf

    lo, hi = 0.0, None
    if hasattr(inner_max, "lambda_bracket"):
        lo, hi = inner_max.lambda_bracket(ball.center.atoms)
    if lambda_min is not None:
        lo = float(lambda_min)
    if lambda_max is not None:
        hi = float(lambda_max)
    if hi is None and probes is not None and h is not None:
        L = growth_rate_check(h, ball.metric, ball.order, probes) or 0.0
        hi = 2.0 * L + 1.0
    if hi is None:
        hi = lo + 1.0
    hi = max(hi, lo + 1e-12)

    F = lambda lam: dual_objective_value(ball, inner_max, lam)
    while F(2.0 * hi) < F(hi):
        hi *= 2.0
        if hi > LAMBDA_CEILING:
            raise GrowthRateError(
                "dual objective still decreasing at multiplier "
                f"{hi:.3g}; the loss grows faster than the transport cost")
    lam, val = golden_section(F, lo, 2.0 * hi)
    if not math.isfinite(val):
        raise GrowthRateError("dual objective is infinite on the whole bracket")
    return val, lam


def growth_rate_check(h: Callable[[SamplePoint], float], metric: GroundMetric, p: float,
                      probes) -> Optional[float]:
    """Largest observed ``(h(a) - h(b)) / d(a, b)**p`` over probe pairs with d > 0."""
    best = None
    for a, b in probes:
        d = metric(a, b)
        if d <= 0:
            continue
        r = (float(h(a)) - float(h(b))) / d ** p
        best = r if best is None else max(best, r)
    if best is None:
        return None
    return max(best, 0.0)


# --------------------------------------------------------------------------
# equal-weight relocation


def _convex_combo(u: SamplePoint, v: SamplePoint, q: float) -> SamplePoint:
    coords = q * np.asarray(u.coords) + (1.0 - q) * np.asarray(v.coords)
    label = u.label if q >= 0.5 else v.label
    return SamplePoint(tuple(coords), label)


def worst_case_equal_weight(ball: WassersteinBall, h: Callable[[SamplePoint], float],
                            grid: Sequence[SamplePoint], tol: float = 1e-9):
    """Relocate each atom of a uniform center to one point each.

    Maximizes ``mean_i h(xi'_i)`` subject to ``mean_i d(xi_i, xi'_i)**p <=
    radius**p``.  The transport LP over ``grid`` plus the center atoms gives
    a relaxation in which at most one atom is split between two points; that
    atom is then placed either at the convex combination of its two targets
    or at the best single candidate affordable with the leftover budget,
    whichever scores higher.  Returns ``(value, relocations)``.
    """
    center = ball.center
    if not center.is_uniform():
        raise WassersteinError("equal-weight relocation needs a uniform center")
    n = center.size
    if ball.radius == 0.0:
        vals = evaluate_losses(center, h)
        return math.fsum(vals) / n, list(center.atoms)

    cands = candidate_support(center, grid)
    hv = evaluate_losses(DiscreteDistribution(cands, np.full(len(cands), 1.0 / len(cands))), h)
    C = ball.cost_matrix(cands)
    res = _primal_from_values(ball, cands, hv, C, tol)
    P = res.plan.matrix
    relocations = []
    for i in range(n):
        js = np.flatnonzero(P[i] > 1e-12)
        relocations.append(cands[int(js[np.argmax(P[i, js])])])
    i0 = res.split_atom_index
    if i0 is not None:
        js = np.flatnonzero(P[i0] > 1e-12)
        ju, jv = int(js[0]), int(js[1])
        q = float(P[i0, ju] / P[i0].sum())
        spent = sum(C[i, cands.index(relocations[i])] for i in range(n) if i != i0)
        left = n * ball.budget - spent
        options = []
        merged = _convex_combo(cands[ju], cands[jv], q)
        d_merged = ball.metric(center.atoms[i0], merged) ** ball.order
        if d_merged <= left + tol:
            options.append((float(h(merged)), merged))
        afford = np.flatnonzero(C[i0] <= left + tol)
        if afford.size:
            jb = int(afford[np.argmax(hv[afford])])
            options.append((float(hv[jb]), cands[jb]))
        relocations[i0] = max(options, key=lambda t: t[0])[1]
    vals = np.array([float(h(p)) for p in relocations])
    for j, v in enumerate(vals):
        if not math.isfinite(v):
            raise LossEvaluationError(j, v)
    return math.fsum(vals) / n, relocations


# --------------------------------------------------------------------------
# structure check


def verify_support_structure(result: WorstCaseResult, center: DiscreteDistribution,
                             tol: float = 1e-7) -> bool:
    """Check that a worst case has at most n+1 atoms and at most one split weight.

    With a plan, the check is on the plan: rows carry the center weights,
    columns carry the reported distribution, and at most one row sends mass
    to more than one atom (and to at most two).  Without a plan, the
    reported weights must be the center weights with at most one of them
    replaced by a pair summing to it.
    """
    n = center.size
    w = np.asarray(result.distribution.weights)
    if np.count_nonzero(w > tol) > n + 1:
        return False
    if result.plan is None:
        return _weights_match_with_one_split(np.sort(w[w > tol]), np.sort(center.weights), tol)
    P = result.plan.matrix
    if P.shape[0] != n or P.shape[1] != w.size:
        return False
    if np.abs(P.sum(axis=1) - center.weights).max() > tol:
        return False
    if np.abs(P.sum(axis=0) - w).max() > tol:
        return False
    counts = (P > tol).sum(axis=1)
    if np.any(counts > 2) or np.count_nonzero(counts == 2) > 1:
        return False
    return True


def _weights_match_with_one_split(got: np.ndarray, want: np.ndarray, tol: float) -> bool:
    if got.size == want.size:
        return bool(np.all(np.abs(got - want) <= tol))
    if got.size != want.size + 1:
        return False
    # try removing one pair from got that sums to one of want
    for a in range(got.size):
        for b in range(a + 1, got.size):
            rest = np.delete(got, [a, b])
            for k in range(want.size):
                if abs(got[a] + got[b] - want[k]) <= tol:
                    if np.all(np.abs(np.sort(rest) - np.delete(want, k)) <= tol):
                        return True
    return False
