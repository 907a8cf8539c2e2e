"""Robust linear SVM with hinge loss and an inf-norm metric that charges
``kappa`` for flipping a label.

Two LP formulations are provided:

* ``eq20``: worst-case penalty ``beta * eps * lam0`` plus the mean of
  per-sample epigraph variables that bound both the hinge loss and the
  label-flipped hinge minus ``kappa * lam0``.
* ``exact``: separate epigraph variables for the worst-case part and the
  empirical part, weighted ``beta`` and ``1 - beta``.  Its optimum is the
  minimum of the blended objective for the hinge loss.

Both require ``||x||_1 <= lam0``, which is what makes the inner
maximization over unbounded features finite.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bdr_solver import BdrProblem, LossOracle
from .distributions import SamplePoint, empirical_from_samples
from .lp_core import LinearProgram, LpStatus, solve_lp
from .wasserstein import GroundMetric, WassersteinBall

MAX_LP_ENTRIES = 50_000_000


class SvmError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class Formulation(str, enum.Enum):
    EQ20 = "eq20"
    EXACT = "exact"


@dataclass(frozen=True)
class SvmInstance:
    features: np.ndarray
    labels: np.ndarray
    beta: float
    epsilon: float
    kappa: float

    def __post_init__(self):
        F = np.array(self.features, dtype=float)
        y = np.array(self.labels)
        if F.ndim != 2 or F.shape[0] < 1 or F.shape[1] < 1:
            raise SvmError("features must be a nonempty n x l matrix")
        if y.shape != (F.shape[0],):
            raise SvmError(f"{y.size} labels for {F.shape[0]} rows")
        if not np.all(np.isin(y, (-1, 1))):
            raise SvmError("labels must be -1 or +1")
        if not 0 <= self.beta <= 1 or self.epsilon < 0 or self.kappa < 0:
            raise SvmError("need beta in [0, 1], epsilon >= 0 and kappa >= 0")
        F.setflags(write=False)
        y = y.astype(int)
        y.setflags(write=False)
        object.__setattr__(self, "features", F)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def l(self) -> int:
        return self.features.shape[1]

    def samples(self) -> tuple:
        return tuple(SamplePoint(tuple(r), int(y)) for r, y in zip(self.features, self.labels))


@dataclass(frozen=True)
class SvmModel:
    weights: np.ndarray
    lambda0: float
    lambdas: np.ndarray
    objective: float
    formulation: Formulation
    beta: float = math.nan
    epsilon: float = math.nan
    kappa: float = math.nan

    def to_json(self) -> str:
        return json.dumps({
            "weights": [float(v) for v in self.weights],
            "lambda0": float(self.lambda0),
            "objective": float(self.objective),
            "formulation": Formulation(self.formulation).value,
            "beta": float(self.beta),
            "epsilon": float(self.epsilon),
            "kappa": float(self.kappa),
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SvmModel":
        d = json.loads(text)
        missing = {"weights", "lambda0", "objective", "formulation", "beta", "epsilon",
                   "kappa"} - set(d)
        if missing:
            raise SvmError(f"model JSON lacks {sorted(missing)}")
        return cls(np.array(d["weights"], dtype=float), float(d["lambda0"]), np.zeros(0),
                   float(d["objective"]), Formulation(d["formulation"]), float(d["beta"]),
                   float(d["epsilon"]), float(d["kappa"]))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "SvmModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def hinge_loss(x, xi: SamplePoint) -> float:
    if xi.label is None:
        raise SvmError("hinge loss needs a labelled sample")
    return max(1.0 - xi.label * float(np.dot(x, xi.coords)), 0.0)


def hinge_subgradient(x, xi: SamplePoint) -> np.ndarray:
    if 1.0 - xi.label * float(np.dot(x, xi.coords)) > 0:
        return -xi.label * np.asarray(xi.coords)
    return np.zeros(len(xi.coords))


def svm_metric(a: SamplePoint, b: SamplePoint, kappa: float) -> float:
    if a.dim != b.dim:
        raise SvmError(f"dimension mismatch {a.dim} vs {b.dim}")
    return float(np.max(np.abs(np.subtract(a.coords, b.coords)), initial=0.0)
                 + kappa * (a.label != b.label))


class HingeInnerMax:
    """Closed-form ``sup_xi hinge(x, xi) - lam * d(xi, xi_i)`` for the
    label-flip metric with unbounded features.

    Finite only when ``lam >= ||x||_1``; then the supremum is
    ``max(1 - y<x, I>, 1 + y<x, I> - kappa * lam, 0)``.
    """

    def __init__(self, x, kappa: float):
        self.x = np.asarray(x, dtype=float)
        self.kappa = float(kappa)
        self.norm1 = float(np.abs(self.x).sum())

    def _margins(self, atoms):
        I = np.array([a.coords for a in atoms], dtype=float)
        y = np.array([a.label for a in atoms], dtype=float)
        return y * (I @ self.x)

    def batch(self, lam: float, atoms) -> np.ndarray:
        m = self._margins(atoms)
        if lam < self.norm1 * (1 - 1e-12) - 1e-15:
            return np.full(m.shape, np.inf)
        return np.maximum(np.maximum(1 - m, 1 + m - self.kappa * lam), 0.0)

    def __call__(self, lam, atom):
        return float(self.batch(lam, [atom])[0])

    def argmax(self, lam: float, atoms) -> list:
        m = self._margins(atoms)
        flip = (1 + m - self.kappa * lam) > np.maximum(1 - m, 0.0)
        return [SamplePoint(a.coords, -a.label) if f else a for a, f in zip(atoms, flip)]

    def lambda_bracket(self, atoms):
        lo = self.norm1
        m = self._margins(atoms)
        if self.kappa > 0:
            hi = max(lo, float(((1 + m) / self.kappa).max()))
        else:
            hi = lo
        return lo, max(hi, lo + 1e-9)


def svm_loss_oracle(kappa: float) -> LossOracle:
    return LossOracle(hinge_loss, hinge_subgradient, True,
                      lambda x: HingeInnerMax(x, kappa))


def svm_bdr_problem(inst: SvmInstance) -> BdrProblem:
    """Generic blended problem for the same data, with the closed-form oracle."""
    samples = inst.samples()
    ball = WassersteinBall(empirical_from_samples(samples), inst.epsilon, 1.0,
                           GroundMetric.inf_norm_label_flip(inst.kappa))
    return BdrProblem(svm_loss_oracle(inst.kappa), samples, inst.beta, ball, inst.l)


def _guard(rows: int, cols: int):
    if rows * cols > MAX_LP_ENTRIES:
        raise SvmError(f"dense LP of {rows} x {cols} exceeds {MAX_LP_ENTRIES} entries")


def build_eq20_lp(inst: SvmInstance) -> LinearProgram:
    """Variables ``[x (l, free), lam0, lam_1..lam_n (>= 0), s (l, >= 0)]``."""
    n, l = inst.n, inst.l
    nv = l + 1 + n + l
    nr = 2 * n + 1 + 2 * l
    _guard(nr, nv)
    YI = inst.labels[:, None] * inst.features
    A = np.zeros((nr, nv))
    b = np.zeros(nr)
    lam = l + 1 + np.arange(n)
    s = l + 1 + n + np.arange(l)
    r = np.arange(n)
    A[r, :l] = -YI
    A[r, lam] = -1.0
    b[r] = -1.0
    r2 = n + r
    A[r2, :l] = YI
    A[r2, l] = -inst.kappa
    A[r2, lam] = -1.0
    b[r2] = -1.0
    A[2 * n, s] = 1.0
    A[2 * n, l] = -1.0
    j = np.arange(l)
    A[2 * n + 1 + j, j] = 1.0
    A[2 * n + 1 + j, s] = -1.0
    A[2 * n + 1 + l + j, j] = -1.0
    A[2 * n + 1 + l + j, s] = -1.0
    c = np.zeros(nv)
    c[l] = inst.beta * inst.epsilon
    c[lam] = 1.0 / n
    lower = np.concatenate([np.full(l, -np.inf), np.zeros(1 + n + l)])
    return LinearProgram(c, A, ("<=",) * nr, b, lower, np.full(nv, np.inf))


def build_exact_epigraph_lp(inst: SvmInstance) -> LinearProgram:
    """Variables ``[x (l, free), lam0, w (n), e (n), s (l)]``, all but x >= 0.

    ``w_i`` bounds the per-sample worst case and ``e_i`` the hinge loss.
    """
    n, l = inst.n, inst.l
    nv = l + 1 + 2 * n + l
    nr = 3 * n + 1 + 2 * l
    _guard(nr, nv)
    YI = inst.labels[:, None] * inst.features
    A = np.zeros((nr, nv))
    b = np.zeros(nr)
    w = l + 1 + np.arange(n)
    e = l + 1 + n + np.arange(n)
    s = l + 1 + 2 * n + np.arange(l)
    r = np.arange(n)
    A[r, :l] = -YI
    A[r, w] = -1.0
    b[r] = -1.0
    A[n + r, :l] = YI
    A[n + r, l] = -inst.kappa
    A[n + r, w] = -1.0
    b[n + r] = -1.0
    A[2 * n + r, :l] = -YI
    A[2 * n + r, e] = -1.0
    b[2 * n + r] = -1.0
    A[3 * n, s] = 1.0
    A[3 * n, l] = -1.0
    j = np.arange(l)
    A[3 * n + 1 + j, j] = 1.0
    A[3 * n + 1 + j, s] = -1.0
    A[3 * n + 1 + l + j, j] = -1.0
    A[3 * n + 1 + l + j, s] = -1.0
    c = np.zeros(nv)
    c[l] = inst.beta * inst.epsilon
    c[w] = inst.beta / n
    c[e] = (1.0 - inst.beta) / n
    lower = np.concatenate([np.full(l, -np.inf), np.zeros(1 + 2 * n + l)])
    return LinearProgram(c, A, ("<=",) * nr, b, lower, np.full(nv, np.inf))


def train(inst: SvmInstance, formulation=Formulation.EQ20, method: str = "simplex",
          tol: float = 1e-9) -> SvmModel:
    """Solve the chosen LP; ``method`` selects the LP backend."""
    form = Formulation(formulation)
    lp = build_eq20_lp(inst) if form is Formulation.EQ20 else build_exact_epigraph_lp(inst)
    sol = solve_lp(lp, tol, method=method)
    if sol.status is not LpStatus.OPTIMAL:
        raise TrainingError(
            f"{form.value} LP is {sol.status.value} (n={inst.n}, l={inst.l}, "
            f"beta={inst.beta}, epsilon={inst.epsilon}, kappa={inst.kappa})")
    z = sol.primal
    l, n = inst.l, inst.n
    return SvmModel(np.array(z[:l]), float(z[l]), np.array(z[l + 1:l + 1 + n]),
                    float(sol.value), form, inst.beta, inst.epsilon, inst.kappa)


def predict(model: SvmModel, features) -> np.ndarray:
    F = np.atleast_2d(np.asarray(features, dtype=float))
    if F.shape[1] != model.weights.size:
        raise SvmError(f"features have {F.shape[1]} columns, model has {model.weights.size}")
    return np.where(F @ model.weights >= 0, 1, -1)


def accuracy(predictions, truth) -> float:
    p = np.asarray(predictions)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise SvmError(f"length mismatch {p.shape} vs {t.shape}")
    return float(np.mean(p == t))


def dro_value_closed_form(x, features, labels, epsilon: float, kappa: float) -> float:
    """Worst-case mean hinge at ``x``: minimum over lam0 >= ||x||_1 of the
    dual, evaluated at ``||x||_1`` and at every breakpoint of the flip term."""
    x = np.asarray(x, dtype=float)
    m = np.asarray(labels) * (np.asarray(features) @ x)
    lo = float(np.abs(x).sum())
    lams = [lo]
    if kappa > 0:
        bps = (1 + m - np.maximum(1 - m, 0.0)) / kappa
        lams.extend(float(v) for v in bps[bps > lo])
    best = math.inf
    for lam in lams:
        inner = np.maximum(np.maximum(1 - m, 1 + m - kappa * lam), 0.0)
        best = min(best, epsilon * lam + float(inner.mean()))
    return best


class SvmSweep:
    """Repeated solves of one formulation on fixed data and ``kappa``.

    Across ``(beta, epsilon)`` only objective coefficients change, so the
    HiGHS simplex is warm-started from the previous basis.  Intended for
    desk-scale sweeps where the dense simplex would be too slow.
    """

    def __init__(self, features, labels, kappa: float, formulation=Formulation.EQ20):
        import highspy
        from scipy import sparse

        self.form = Formulation(formulation)
        base = SvmInstance(features, labels, 0.0, 0.0, kappa)
        builder = build_eq20_lp if self.form is Formulation.EQ20 else build_exact_epigraph_lp
        lp = builder(base)
        self._n, self._l, self._kappa = base.n, base.l, kappa
        A = sparse.csc_matrix(lp.A)
        inf = highspy.kHighsInf
        model = highspy.HighsLp()
        model.num_col_ = lp.num_vars
        model.num_row_ = lp.num_rows
        model.col_cost_ = np.asarray(lp.c)
        model.col_lower_ = np.where(np.isfinite(lp.lower), lp.lower, -inf)
        model.col_upper_ = np.full(lp.num_vars, inf)
        model.row_lower_ = np.full(lp.num_rows, -inf)
        model.row_upper_ = np.asarray(lp.b)
        model.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        model.a_matrix_.start_ = A.indptr
        model.a_matrix_.index_ = A.indices
        model.a_matrix_.value_ = A.data
        self._highs = highspy.Highs()
        self._highs.setOptionValue("output_flag", False)
        self._highs.setOptionValue("random_seed", 0)
        self._highs.passModel(model)
        self._ok = highspy.HighsModelStatus.kOptimal

    def _costs(self, beta: float, epsilon: float) -> np.ndarray:
        n, l = self._n, self._l
        if self.form is Formulation.EQ20:
            c = np.zeros(l + 1 + n + l)
            c[l] = beta * epsilon
            c[l + 1:l + 1 + n] = 1.0 / n
        else:
            c = np.zeros(l + 1 + 2 * n + l)
            c[l] = beta * epsilon
            c[l + 1:l + 1 + n] = beta / n
            c[l + 1 + n:l + 1 + 2 * n] = (1.0 - beta) / n
        return c

    def solve(self, beta: float, epsilon: float) -> SvmModel:
        if not 0 <= beta <= 1 or epsilon < 0:
            raise SvmError("need beta in [0, 1] and epsilon >= 0")
        c = self._costs(beta, epsilon)
        idx = np.arange(c.size, dtype=np.int32)
        self._highs.changeColsCost(c.size, idx, c)
        self._highs.run()
        status = self._highs.getModelStatus()
        if status != self._ok:
            raise TrainingError(f"{self.form.value} LP: {self._highs.modelStatusToString(status)}"
                                f" (beta={beta}, epsilon={epsilon}, kappa={self._kappa})")
        z = np.asarray(self._highs.getSolution().col_value)
        l, n = self._l, self._n
        return SvmModel(z[:l].copy(), float(z[l]), z[l + 1:l + 1 + n].copy(), float(c @ z),
                        self.form, beta, epsilon, self._kappa)
