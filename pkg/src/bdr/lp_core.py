"""Dense linear programming: a two-phase revised simplex with Bland's rule.

Problems are stated as::

    minimize    c . z
    subject to  A[i] . z  (<= | = | >=)  b[i]
                lower <= z <= upper

Bounds may be infinite (``-inf`` lower, ``+inf`` upper). Internally every
variable is shifted/split to be nonnegative, finite upper bounds become
explicit rows, and the phase-1 problem starts from an all-slack/artificial
basis.  The basis inverse is kept explicitly and updated with rank-one
(eta) updates, refactorized periodically.

``dual`` in a solution is the sensitivity of the optimal value with respect
to each right-hand side, so a ``<=`` row of a minimization gets a
nonpositive multiplier and a ``>=`` row a nonnegative one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FEAS_TOL = 1e-9
REFACTOR_EVERY = 64


class LpError(Exception):
    pass


class LpStructureError(LpError, ValueError):
    """Dimension or bound inconsistency detected before solving."""


class LpIterationLimit(LpError):
    pass


class Relation(str, enum.Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    relations: tuple
    b: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        c = _frozen(self.c)
        if c.ndim != 1:
            raise LpStructureError("objective must be a vector")
        nvar = c.shape[0]
        A = np.array(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, nvar)
        if A.ndim != 2 or A.shape[1] != nvar:
            raise LpStructureError(
                f"constraint matrix has shape {A.shape}, expected (*, {nvar})")
        b = _frozen(self.b)
        if b.ndim != 1 or b.shape[0] != A.shape[0]:
            raise LpStructureError(
                f"rhs has {b.shape[0] if b.ndim == 1 else b.shape} entries "
                f"for {A.shape[0]} rows")
        rels = tuple(Relation(r) for r in self.relations)
        if len(rels) != A.shape[0]:
            raise LpStructureError(
                f"{len(rels)} relations for {A.shape[0]} rows")
        lower = np.zeros(nvar) if self.lower is None else np.array(self.lower, dtype=float)
        upper = np.full(nvar, np.inf) if self.upper is None else np.array(self.upper, dtype=float)
        if lower.shape != (nvar,) or upper.shape != (nvar,):
            raise LpStructureError("bounds must have one entry per variable")
        if np.any(lower > upper):
            raise LpStructureError("lower bound exceeds upper bound")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(lower == np.inf) \
                or np.any(upper == -np.inf):
            raise LpStructureError("invalid bound values")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise LpStructureError("objective, matrix and rhs must be finite")
        A.setflags(write=False)
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "relations", rels)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def num_vars(self) -> int:
        return self.c.shape[0]

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_blocks(cls, c, *, A_ub=None, b_ub=None, A_eq=None, b_eq=None,
                    A_ge=None, b_ge=None, lower=None, upper=None) -> "LinearProgram":
        """Stack ``<=``, ``=`` and ``>=`` blocks into one program."""
        nvar = len(c)
        blocks, rhs, rels = [], [], []
        for M, v, rel in ((A_ub, b_ub, Relation.LE), (A_eq, b_eq, Relation.EQ),
                          (A_ge, b_ge, Relation.GE)):
            if M is None:
                continue
            M = np.atleast_2d(np.asarray(M, dtype=float))
            blocks.append(M)
            rhs.append(np.asarray(v, dtype=float).ravel())
            rels.extend([rel] * M.shape[0])
        A = np.vstack(blocks) if blocks else np.zeros((0, nvar))
        b = np.concatenate(rhs) if rhs else np.zeros(0)
        return cls(c, A, tuple(rels), b, lower, upper)


@dataclass(frozen=True)
class LpSolution:
    status: LpStatus
    value: float
    primal: Optional[np.ndarray]
    dual: Optional[np.ndarray]
    reduced_costs: Optional[np.ndarray] = None
    certificate: Optional[np.ndarray] = None
    iterations: int = 0
    backend: str = "simplex"

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def check_feasible(lp: LinearProgram, z, tol: float = FEAS_TOL) -> bool:
    z = np.asarray(z, dtype=float)
    if z.shape != (lp.num_vars,):
        raise LpStructureError(f"point has shape {z.shape}, expected ({lp.num_vars},)")
    if np.any(z < lp.lower - tol) or np.any(z > lp.upper + tol):
        return False
    if lp.num_rows == 0:
        return True
    lhs = lp.A @ z
    for val, rel, rhs in zip(lhs, lp.relations, lp.b):
        if rel is Relation.LE and val > rhs + tol:
            return False
        if rel is Relation.GE and val < rhs - tol:
            return False
        if rel is Relation.EQ and abs(val - rhs) > tol:
            return False
    return True


def dual_objective(lp: LinearProgram, dual, tol: float = FEAS_TOL) -> float:
    """Lagrangian dual value ``b.y`` plus the bound-multiplier terms.

    Bound multipliers are read off the reduced costs ``c - A^T y``: a
    positive reduced cost prices the lower bound, a negative one the upper
    bound.  Returns ``-inf`` when a reduced cost has the wrong sign for an
    infinite bound.  Reduced costs within ``tol`` of zero are treated as zero.
    """
    y = np.asarray(dual, dtype=float)
    r = lp.c - lp.A.T @ y if lp.num_rows else lp.c.copy()
    r = np.where(np.abs(r) <= tol * (1.0 + np.abs(lp.c)), 0.0, r)
    total = float(lp.b @ y) if lp.num_rows else 0.0
    for rj, lo, up in zip(r, lp.lower, lp.upper):
        if rj > 0:
            if not np.isfinite(lo):
                return -np.inf
            total += lo * rj
        elif rj < 0:
            if not np.isfinite(up):
                return -np.inf
            total += up * rj
    return total


def dual_feasible(lp: LinearProgram, dual, tol: float = FEAS_TOL) -> bool:
    y = np.asarray(dual, dtype=float)
    for yi, rel in zip(y, lp.relations):
        if rel is Relation.LE and yi > tol:
            return False
        if rel is Relation.GE and yi < -tol:
            return False
    r = lp.c - lp.A.T @ y if lp.num_rows else lp.c
    scale = 1.0 + np.abs(lp.c)
    bad_low = (r > tol * scale) & ~np.isfinite(lp.lower)
    bad_up = (r < -tol * scale) & ~np.isfinite(lp.upper)
    return not (np.any(bad_low) or np.any(bad_up))


# --------------------------------------------------------------------------
# standard-form conversion


@dataclass
class _StandardForm:
    A: np.ndarray            # rows x cols, equality system
    b: np.ndarray            # nonnegative rhs
    c: np.ndarray
    T: np.ndarray            # original = offset + T @ z[:n_struct]
    offset: np.ndarray
    n_struct: int
    row_sign: np.ndarray     # +1/-1 applied to each row
    n_orig_rows: int
    slack_of_row: dict = field(default_factory=dict)  # row -> slack column with +1


def _standardize(lp: LinearProgram) -> _StandardForm:
    n = lp.num_vars
    cols = []          # columns of T (as (orig index, coefficient))
    offset = np.zeros(n)
    bound_rows = []    # (struct col, rhs) for finite ranges
    for j in range(n):
        lo, up = lp.lower[j], lp.upper[j]
        if np.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(up):
                bound_rows.append((len(cols) - 1, up - lo))
        elif np.isfinite(up):
            offset[j] = up
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    ns = len(cols)
    T = np.zeros((n, ns))
    for k, (j, s) in enumerate(cols):
        T[j, k] = s

    m0 = lp.num_rows
    rels = list(lp.relations)
    A_rows = lp.A @ T if m0 else np.zeros((0, ns))
    b_rows = lp.b - lp.A @ offset if m0 else np.zeros(0)
    if bound_rows:
        extra = np.zeros((len(bound_rows), ns))
        for r, (k, _) in enumerate(bound_rows):
            extra[r, k] = 1.0
        A_rows = np.vstack([A_rows, extra])
        b_rows = np.concatenate([b_rows, [u for _, u in bound_rows]])
        rels += [Relation.LE] * len(bound_rows)
    m = A_rows.shape[0]
    n_slack = sum(1 for r in rels if r is not Relation.EQ)
    A = np.zeros((m, ns + n_slack))
    A[:, :ns] = A_rows
    slack_col = {}
    k = ns
    for i, r in enumerate(rels):
        if r is Relation.LE:
            A[i, k] = 1.0
            slack_col[i] = k
            k += 1
        elif r is Relation.GE:
            A[i, k] = -1.0
            slack_col[i] = k
            k += 1
    sign = np.where(b_rows < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b_rows * sign
    usable = {i: col for i, col in slack_col.items() if A[i, col] > 0}
    c = np.zeros(A.shape[1])
    c[:ns] = T.T @ lp.c
    return _StandardForm(A, b, c, T, offset, ns, sign, m0, usable)


# --------------------------------------------------------------------------
# revised simplex core


class _Tableau:
    """Basis bookkeeping for the revised simplex on ``A z = b, z >= 0``."""

    def __init__(self, A, b, basis, tol):
        self.A = A
        self.b = b
        self.basis = list(basis)
        self.tol = tol
        self.refactor()

    def refactor(self):
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B) if B.size else np.zeros((0, 0))
        self.xB = self.Binv @ self.b
        self.xB[np.abs(self.xB) < self.tol * 1e-3] = 0.0
        self.since_refactor = 0

    def pivot(self, r, j, u):
        piv = u[r]
        self.Binv[r] /= piv
        self.xB[r] /= piv
        others = np.arange(len(self.basis)) != r
        self.Binv[others] -= np.outer(u[others], self.Binv[r])
        self.xB[others] -= u[others] * self.xB[r]
        self.basis[r] = j
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self.refactor()
        else:
            self.xB[np.abs(self.xB) < self.tol * 1e-3] = 0.0

    def drop_row(self, r):
        keep = [i for i in range(len(self.basis)) if i != r]
        self.A = self.A[keep]
        self.b = self.b[keep]
        del self.basis[r]
        self.refactor()
        return keep


def _run_simplex(tab: _Tableau, c, allowed, tol, max_iter, start_iter=0):
    """Bland-rule primal simplex. Returns (status, entering_col, iterations)."""
    it = start_iter
    n = tab.A.shape[1]
    while True:
        if it >= max_iter:
            raise LpIterationLimit(f"simplex exceeded {max_iter} iterations")
        cB = c[tab.basis]
        y = cB @ tab.Binv
        d = c - y @ tab.A
        in_basis = np.zeros(n, dtype=bool)
        in_basis[tab.basis] = True
        cand = np.flatnonzero(allowed & ~in_basis & (d < -tol))
        if cand.size == 0:
            return "optimal", None, it
        j = int(cand[0])
        u = tab.Binv @ tab.A[:, j]
        pos = u > tol
        if not np.any(pos):
            return "unbounded", (j, u), it
        ratios = np.full(u.shape, np.inf)
        ratios[pos] = np.maximum(tab.xB[pos], 0.0) / u[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * 1e-3 * (1.0 + best))
        r = int(min(ties, key=lambda i: tab.basis[i]))
        tab.pivot(r, j, u)
        it += 1


def solve_lp(lp: LinearProgram, tol: float = FEAS_TOL, *,
             max_iterations: Optional[int] = None, method: str = "simplex") -> LpSolution:
    """Solve ``lp``; ``method`` is ``"simplex"`` (default) or ``"highs"``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if method == "highs":
        return _solve_highs(lp, tol)
    if method != "simplex":
        raise ValueError(f"unknown LP method {method!r}")

    sf = _standardize(lp)
    m, ncols = sf.A.shape
    if max_iterations is None:
        max_iterations = 50 * (m + ncols)

    # phase 1: artificial for each row without a usable +1 slack
    basis, art_cols = [], []
    A1 = sf.A
    extra = []
    for i in range(m):
        if i in sf.slack_of_row:
            basis.append(sf.slack_of_row[i])
        else:
            extra.append(i)
    if extra:
        art = np.zeros((m, len(extra)))
        for k, i in enumerate(extra):
            art[i, k] = 1.0
        A1 = np.hstack([sf.A, art])
    basis = []
    ai = 0
    for i in range(m):
        if i in sf.slack_of_row:
            basis.append(sf.slack_of_row[i])
        else:
            basis.append(ncols + ai)
            art_cols.append(ncols + ai)
            ai += 1
    total_cols = A1.shape[1]
    tab = _Tableau(A1, sf.b.copy(), basis, tol)
    iters = 0
    if art_cols:
        c1 = np.zeros(total_cols)
        c1[art_cols] = 1.0
        allowed = np.ones(total_cols, dtype=bool)
        _, _, iters = _run_simplex(tab, c1, allowed, tol, max_iterations)
        infeas = float(c1[tab.basis] @ tab.xB)
        if infeas > tol * max(1.0, float(np.abs(sf.b).max(initial=0.0))):
            y1 = c1[tab.basis] @ tab.Binv
            cert = np.zeros(lp.num_rows)
            cert[:] = (y1 * sf.row_sign)[:lp.num_rows]
            return LpSolution(LpStatus.INFEASIBLE, np.nan, None, None,
                              certificate=cert, iterations=iters)
        # drive artificials out of the basis, dropping redundant rows
        kept_rows = list(range(m))
        r = 0
        while r < len(tab.basis):
            if tab.basis[r] >= ncols:
                row = tab.Binv[r] @ tab.A[:, :ncols]
                in_basis = set(tab.basis)
                cand = [j for j in np.flatnonzero(np.abs(row) > tol) if j not in in_basis]
                if cand:
                    j = int(cand[0])
                    u = tab.Binv @ tab.A[:, j]
                    tab.pivot(r, j, u)
                    r += 1
                else:
                    keep = tab.drop_row(r)
                    kept_rows = [kept_rows[i] for i in keep]
            else:
                r += 1
        tab.A = tab.A[:, :ncols]
        tab.refactor()
    else:
        kept_rows = list(range(m))

    allowed = np.ones(ncols, dtype=bool)
    status, info, iters = _run_simplex(tab, sf.c, allowed, tol, max_iterations, iters)
    if status == "unbounded":
        j, u = info
        dz = np.zeros(ncols)
        dz[j] = 1.0
        for k, bj in enumerate(tab.basis):
            dz[bj] = -u[k]
        ray = sf.T @ dz[:sf.n_struct]
        return LpSolution(LpStatus.UNBOUNDED, -np.inf, None, None,
                          certificate=ray, iterations=iters)

    z = np.zeros(ncols)
    z[tab.basis] = tab.xB
    z = np.maximum(z, 0.0)
    x = sf.offset + sf.T @ z[:sf.n_struct]
    # snap onto bounds that are within tolerance
    x = np.where(np.abs(x - lp.lower) <= tol, lp.lower, x)
    x = np.where(np.abs(x - lp.upper) <= tol, lp.upper, x)
    y_kept = sf.c[tab.basis] @ tab.Binv
    y_std = np.zeros(m)
    y_std[kept_rows] = y_kept
    y = (y_std * sf.row_sign)[:lp.num_rows]
    red = lp.c - lp.A.T @ y if lp.num_rows else lp.c.copy()
    value = float(lp.c @ x)
    return LpSolution(LpStatus.OPTIMAL, value, _frozen(x), _frozen(y),
                      reduced_costs=_frozen(red), iterations=iters)


def _solve_highs(lp: LinearProgram, tol: float) -> LpSolution:
    """HiGHS interior point with crossover, on a sparse copy of the rows."""
    from scipy import sparse
    from scipy.optimize import linprog

    le = [i for i, r in enumerate(lp.relations) if r is Relation.LE]
    ge = [i for i, r in enumerate(lp.relations) if r is Relation.GE]
    eq = [i for i, r in enumerate(lp.relations) if r is Relation.EQ]
    A_ub = sparse.csr_matrix(np.vstack([lp.A[le], -lp.A[ge]])) if (le or ge) else None
    b_ub = np.concatenate([lp.b[le], -lp.b[ge]]) if (le or ge) else None
    A_eq = sparse.csr_matrix(lp.A[eq]) if eq else None
    b_eq = lp.b[eq] if eq else None
    bounds = np.column_stack([np.where(np.isfinite(lp.lower), lp.lower, -np.inf),
                              np.where(np.isfinite(lp.upper), lp.upper, np.inf)])
    res = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs-ipm",
                  options={"primal_feasibility_tolerance": max(tol, 1e-10),
                           "dual_feasibility_tolerance": max(tol, 1e-10)})
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, np.nan, None, None, backend="highs")
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, -np.inf, None, None, backend="highs")
    if res.status != 0:
        raise LpError(f"HiGHS failed: {res.message}")
    y = np.zeros(lp.num_rows)
    if le or ge:
        marg = res.ineqlin.marginals
        y[le] = marg[:len(le)]
        y[ge] = -marg[len(le):]
    if eq:
        y[eq] = res.eqlin.marginals
    x = np.asarray(res.x, dtype=float)
    red = lp.c - lp.A.T @ y if lp.num_rows else lp.c.copy()
    return LpSolution(LpStatus.OPTIMAL, float(lp.c @ x), _frozen(x), _frozen(y),
                      reduced_costs=_frozen(red), iterations=int(res.nit), backend="highs")


def enumerate_vertices_min(lp: LinearProgram, tol: float = 1e-9) -> float:
    """Brute-force minimum over basic feasible points (small problems only).

    Every vertex of the feasible polyhedron is the unique solution of some
    choice of ``num_vars`` active constraints (rows or finite bounds).  Used
    as an independent oracle; assumes the feasible set is bounded.
    """
    from itertools import combinations

    n = lp.num_vars
    rows, rhs, must = [], [], []
    for i in range(lp.num_rows):
        rows.append(lp.A[i])
        rhs.append(lp.b[i])
        must.append(lp.relations[i] is Relation.EQ)
    for j in range(n):
        for bound in (lp.lower[j], lp.upper[j]):
            if np.isfinite(bound):
                e = np.zeros(n)
                e[j] = 1.0
                rows.append(e)
                rhs.append(bound)
                must.append(False)
    rows = np.array(rows)
    rhs = np.array(rhs)
    forced = [i for i, f in enumerate(must) if f]
    free = [i for i, f in enumerate(must) if not f]
    best = np.inf
    k = n - len(forced)
    if k < 0:
        k = 0
    for extra in combinations(free, k):
        idx = forced + list(extra)
        M = rows[idx]
        if M.shape[0] != n or abs(np.linalg.det(M)) < 1e-12:
            if M.shape[0] > n:
                sol, *_ = np.linalg.lstsq(M, rhs[idx], rcond=None)
            else:
                continue
        else:
            sol = np.linalg.solve(M, rhs[idx])
        if check_feasible(lp, sol, tol * 100):
            best = min(best, float(lp.c @ sol))
    return best


__all__: Sequence[str] = [
    "LinearProgram", "LpSolution", "LpStatus", "Relation", "LpError",
    "LpStructureError", "LpIterationLimit", "solve_lp", "check_feasible",
    "dual_objective", "dual_feasible", "enumerate_vertices_min", "FEAS_TOL",
]
