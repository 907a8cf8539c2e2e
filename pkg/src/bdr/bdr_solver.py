"""The blended objective ``beta * worst_case + (1 - beta) * empirical`` and
its minimization over a box.

``dro_part`` is the worst-case expected loss over a Wasserstein ball and
``saa_part`` the empirical mean loss on the training samples.  At ``beta=0``
the problem is sample-average approximation, at ``beta=1`` it is
Wasserstein DRO.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .distributions import (
    DiscreteDistribution, SamplePoint, empirical_from_samples, evaluate_losses,
)
from .wasserstein import (
    GridInnerMax, GroundMetric, WassersteinBall, candidate_support, dual_objective_value,
    golden_section, worst_case_dual, worst_case_equal_weight, worst_case_primal,
)

INNER_MODES = ("primal_lp", "dual_search", "equal_weight")


class BdrError(ValueError):
    pass


class ContractViolation(BdrError):
    pass


@dataclass(frozen=True)
class LossOracle:
    """Loss ``h(x, xi)`` with optional subgradient in ``x``.

    ``inner_max_factory(x)`` may return an exact inner-maximization oracle
    for the dual route (an object with ``batch``/``argmax``/
    ``lambda_bracket``), used instead of a candidate grid.
    """

    evaluate: Callable[[np.ndarray, SamplePoint], float]
    subgradient_x: Optional[Callable[[np.ndarray, SamplePoint], np.ndarray]] = None
    convex_in_x: bool = True
    inner_max_factory: Optional[Callable[[np.ndarray], object]] = None

    def at(self, x) -> Callable[[SamplePoint], float]:
        x = np.asarray(x, dtype=float)
        return lambda xi: self.evaluate(x, xi)


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-6
    max_outer: int = 200
    window: int = 5
    step_a: float = 1.0
    step_b: float = 10.0
    inner_mode: str = "primal_lp"
    lambda0_bracket: Optional[tuple] = None

    def __post_init__(self):
        if self.inner_mode not in INNER_MODES:
            raise BdrError(f"inner_mode must be one of {INNER_MODES}, got {self.inner_mode!r}")
        if self.rel_tol <= 0 or self.max_outer < 1 or self.window < 1:
            raise BdrError("rel_tol must be positive; max_outer and window at least 1")
        if self.lambda0_bracket is not None:
            lo, hi = self.lambda0_bracket
            if not 0 <= lo < hi:
                raise BdrError("lambda0_bracket must satisfy 0 <= lo < hi")
            object.__setattr__(self, "lambda0_bracket", (float(lo), float(hi)))

    @classmethod
    def from_mapping(cls, data: dict) -> "SolverConfig":
        known = {"rel_tol", "max_outer", "lambda0_bracket", "inner_mode", "window",
                 "step_a", "step_b"}
        unknown = set(data) - known
        if unknown:
            raise BdrError(f"unknown solver config keys {sorted(unknown)}")
        kw = dict(data)
        if kw.get("lambda0_bracket") is not None:
            kw["lambda0_bracket"] = tuple(kw["lambda0_bracket"])
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "SolverConfig":
        with open(path) as fh:
            return cls.from_mapping(json.load(fh))


@dataclass(frozen=True)
class BdrProblem:
    loss: LossOracle
    samples: tuple
    beta: float
    ball: WassersteinBall
    decision_dim: int
    candidate_grid: Optional[tuple] = None
    box_lower: Optional[np.ndarray] = None
    box_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise BdrError("samples must be nonempty")
        if not 0.0 <= self.beta <= 1.0:
            raise BdrError(f"beta must lie in [0, 1], got {self.beta}")
        object.__setattr__(self, "samples", samples)
        if self.candidate_grid is not None:
            object.__setattr__(self, "candidate_grid", tuple(self.candidate_grid))
        l = self.decision_dim
        lo = np.full(l, -np.inf) if self.box_lower is None else np.asarray(self.box_lower, float)
        hi = np.full(l, np.inf) if self.box_upper is None else np.asarray(self.box_upper, float)
        if lo.shape != (l,) or hi.shape != (l,) or np.any(lo > hi):
            raise BdrError("box bounds must be length decision_dim with lower <= upper")
        object.__setattr__(self, "box_lower", lo)
        object.__setattr__(self, "box_upper", hi)

    @classmethod
    def empirical(cls, loss, samples, beta, epsilon, decision_dim, *, order=1.0,
                  metric: Optional[GroundMetric] = None, **kw) -> "BdrProblem":
        """Problem whose ball is centered at the empirical distribution."""
        center = empirical_from_samples(samples)
        ball = WassersteinBall(center, epsilon, order, metric or GroundMetric.euclidean())
        return cls(loss, tuple(samples), beta, ball, decision_dim, **kw)

    @property
    def empirical_distribution(self) -> DiscreteDistribution:
        return empirical_from_samples(self.samples)

    def project(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.box_lower, self.box_upper)

    def with_beta(self, beta: float) -> "BdrProblem":
        return replace(self, beta=beta)


@dataclass(frozen=True)
class BdrSolution:
    x_opt: np.ndarray
    value: float
    dro_part: float
    saa_part: float
    lambda0: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class _WorstCase:
    value: float
    lambda0: float
    atoms: tuple
    weights: np.ndarray


def _check_x(prob: BdrProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (prob.decision_dim,):
        raise BdrError(f"decision has shape {x.shape}, expected ({prob.decision_dim},)")
    return x


def _inner_oracle(prob: BdrProblem, x):
    if prob.loss.inner_max_factory is not None:
        return prob.loss.inner_max_factory(x)
    if prob.candidate_grid is None:
        raise BdrError("need a candidate grid or a closed-form inner oracle")
    cands = candidate_support(prob.ball.center, prob.candidate_grid)
    return GridInnerMax.from_loss(cands, prob.loss.at(x), prob.ball.metric, prob.ball.order)


def _worst_case(prob: BdrProblem, x, mode: str, bracket=None) -> _WorstCase:
    ball = prob.ball
    h = prob.loss.at(x)
    if mode == "primal_lp":
        if prob.candidate_grid is None:
            raise BdrError("primal_lp inner mode needs a candidate grid")
        res = worst_case_primal(ball, h, candidate_support(ball.center, prob.candidate_grid))
        return _WorstCase(res.value, res.dual_lambda0, res.distribution.atoms,
                          np.asarray(res.distribution.weights))
    if mode == "equal_weight":
        if prob.candidate_grid is None:
            raise BdrError("equal_weight inner mode needs a candidate grid")
        val, rel = worst_case_equal_weight(ball, h, prob.candidate_grid)
        return _WorstCase(val, math.nan, tuple(rel), np.full(len(rel), 1.0 / len(rel)))
    oracle = _inner_oracle(prob, x)
    lo, hi = (None, None) if bracket is None else bracket
    val, lam = worst_case_dual(ball, h, oracle, lambda_max=hi, lambda_min=lo)
    if math.isinf(lam):
        atoms = ball.center.atoms
    elif hasattr(oracle, "argmax"):
        atoms = tuple(oracle.argmax(lam, ball.center.atoms))
    else:
        atoms = ball.center.atoms
    return _WorstCase(val, lam, tuple(atoms), np.asarray(ball.center.weights))


def saa_value(prob: BdrProblem, x) -> float:
    d = prob.empirical_distribution
    return math.fsum(d.weights * evaluate_losses(d, prob.loss.at(x)))


def bdr_objective(prob: BdrProblem, x, inner_mode: str = "dual_search",
                  lambda0_bracket=None):
    """Returns ``(value, dro_part, saa_part)`` at ``x``."""
    x = _check_x(prob, x)
    saa = saa_value(prob, x)
    wc = _worst_case(prob, x, inner_mode, lambda0_bracket)
    if prob.beta == 0.0:
        return saa, wc.value, saa
    return prob.beta * wc.value + (1.0 - prob.beta) * saa, wc.value, saa


def regularized_form(prob: BdrProblem, x, inner_mode: str = "dual_search"):
    """``(lambda_n, f(x))`` with ``lambda_n = beta / (1 - beta)`` and ``f`` the
    worst-case part, so ``value / (1 - beta) = saa + lambda_n * f``."""
    if prob.beta >= 1.0:
        raise BdrError("regularized form is undefined at beta = 1")
    x = _check_x(prob, x)
    wc = _worst_case(prob, x, inner_mode)
    return prob.beta / (1.0 - prob.beta), wc.value


def bdr_dual_objective(prob: BdrProblem, x, lambda0: float, inner_max=None) -> float:
    """Blended objective with the worst case replaced by its dual at ``lambda0``."""
    if lambda0 < 0:
        raise BdrError("lambda0 must be nonnegative")
    x = _check_x(prob, x)
    saa = saa_value(prob, x)
    if prob.beta == 0.0:
        return saa
    oracle = inner_max if inner_max is not None else _inner_oracle(prob, x)
    dual = dual_objective_value(prob.ball, oracle, lambda0)
    return prob.beta * dual + (1.0 - prob.beta) * saa


def minimize_dual_over_lambda(prob: BdrProblem, x, lam_hi: Optional[float] = None):
    """Golden-section minimum of ``bdr_dual_objective`` over ``lambda0``."""
    x = _check_x(prob, x)
    oracle = _inner_oracle(prob, x)
    lo, hi = 0.0, lam_hi
    if hasattr(oracle, "lambda_bracket"):
        lo, b_hi = oracle.lambda_bracket(prob.ball.center.atoms)
        hi = hi if hi is not None else b_hi
    if hi is None:
        hi = 1.0
    f = lambda lam: bdr_dual_objective(prob, x, lam, oracle)
    while f(2 * hi) < f(hi):
        hi *= 2
    lam, val = golden_section(f, lo, 2 * hi)
    return val, lam


def solve_bdr_coordinate_descent(prob: BdrProblem, x0, cfg: SolverConfig = SolverConfig()
                                 ) -> BdrSolution:
    """Alternate a worst-case solve at fixed ``x`` with a projected
    subgradient step on the blended objective with that worst case frozen.

    Step sizes are ``step_a / (k + step_b)``.  Stops when the fresh objective
    changes by less than ``rel_tol`` (relative) across ``window`` outer
    iterations, or after ``max_outer``.  Returns the best iterate seen; its
    value comes from a fresh inner solve.
    """
    if not prob.loss.convex_in_x:
        raise ContractViolation("coordinate descent requires a loss convex in x")
    if prob.loss.subgradient_x is None:
        raise ContractViolation("coordinate descent requires a subgradient in x")
    x = prob.project(_check_x(prob, x0))
    emp = prob.empirical_distribution
    grad = prob.loss.subgradient_x
    history = []
    best = None
    converged = False
    k = 0
    for k in range(cfg.max_outer):
        saa = math.fsum(emp.weights * evaluate_losses(emp, prob.loss.at(x)))
        wc = _worst_case(prob, x, cfg.inner_mode, cfg.lambda0_bracket)
        value = prob.beta * wc.value + (1.0 - prob.beta) * saa
        if best is None or value < best[1]:
            best = (x.copy(), value, wc.value, saa, wc.lambda0)
        history.append(value)
        if len(history) > cfg.window:
            old = history[-1 - cfg.window]
            if abs(value - old) <= cfg.rel_tol * max(1.0, abs(value)):
                converged = True
                break
        g = np.zeros(prob.decision_dim)
        if prob.beta > 0:
            for q, atom in zip(wc.weights, wc.atoms):
                if q > 0:
                    g += prob.beta * q * np.asarray(grad(x, atom), dtype=float)
        if prob.beta < 1:
            for w, atom in zip(emp.weights, emp.atoms):
                g += (1.0 - prob.beta) * w * np.asarray(grad(x, atom), dtype=float)
        if not np.any(g):
            converged = True
            break
        x = prob.project(x - cfg.step_a / (k + cfg.step_b) * g)
    x_best, value, dro, saa, lam = best
    return BdrSolution(x_best, value, dro, saa, lam, k + 1, converged)

