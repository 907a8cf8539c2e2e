import numpy as np
import pytest

from bdr.lp_core import (
    LinearProgram, LpIterationLimit, LpStatus, LpStructureError, check_feasible,
    dual_feasible, dual_objective, enumerate_vertices_min, solve_lp,
)


def bounded_lp():
    return LinearProgram([1.0], [[1.0]], [">="], [3.0], upper=[10.0])


def random_bounded_lp(seed, max_vars=6, max_rows=6):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(1, max_rows + 1))
    A = rng.normal(size=(m, n)).round(1)
    b = rng.normal(size=m).round(1)
    rels = rng.choice(["<=", ">=", "="], size=m, p=[0.5, 0.3, 0.2])
    lower = rng.choice([0.0, -1.0, -3.0], size=n)
    upper = rng.choice([2.0, 3.0], size=n)
    return LinearProgram(rng.normal(size=n), A, rels, b, lower, upper)


class TestExamples:
    def test_single_variable_bound(self):
        sol = solve_lp(bounded_lp())
        assert sol.status is LpStatus.OPTIMAL
        assert sol.value == pytest.approx(3.0)
        np.testing.assert_allclose(sol.primal, [3.0])

    def test_diagonal_vertex(self):
        lp = LinearProgram([-1.0, -1.0], [[1.0, 1.0]], ["<="], [1.0])
        sol = solve_lp(lp)
        assert sol.value == pytest.approx(-1.0)
        assert sol.primal.sum() == pytest.approx(1.0)
        assert sol.dual[0] == pytest.approx(-1.0)

    def test_unbounded_ray(self):
        lp = LinearProgram([-1.0, 0.0], [[1.0, -1.0]], ["<="], [1.0])
        sol = solve_lp(lp)
        assert sol.status is LpStatus.UNBOUNDED
        ray = sol.certificate
        assert lp.c @ ray < 0
        assert lp.A[0] @ ray <= 1e-12 and np.all(ray >= -1e-12)

    def test_infeasible_certificate(self):
        lp = LinearProgram([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]], [">=", "<="], [3.0, 2.0])
        sol = solve_lp(lp)
        assert sol.status is LpStatus.INFEASIBLE
        y = sol.certificate
        # Farkas: sign-feasible y with A^T y <= 0 on nonnegative vars and b.y > 0
        assert y[0] >= 0 and y[1] <= 0
        assert np.all(lp.A.T @ y <= 1e-12)
        assert lp.b @ y > 0

    def test_free_variables(self):
        inf = np.inf
        lp = LinearProgram([1.0, 1.0], [[1.0, 1.0]], [">="], [3.0], [-inf, -inf], [inf, inf])
        sol = solve_lp(lp)
        assert sol.value == pytest.approx(3.0)

    def test_redundant_equalities(self):
        lp = LinearProgram([1.0, 2.0], [[1, 1], [2, 2]], ["=", "="], [3.0, 6.0])
        sol = solve_lp(lp)
        assert sol.value == pytest.approx(3.0)
        assert dual_objective(lp, sol.dual) == pytest.approx(3.0)


class TestCheckFeasible:
    def test_boundary_point(self):
        assert check_feasible(bounded_lp(), [3.0], 1e-9)

    def test_violated_bound(self):
        assert not check_feasible(bounded_lp(), [2.9], 1e-9)

    def test_within_tolerance(self):
        lp = LinearProgram([-1.0, -1.0], [[1.0, 1.0]], ["<="], [1.0])
        assert check_feasible(lp, [0.5, 0.5 + 1e-12], 1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(LpStructureError):
            check_feasible(bounded_lp(), [1.0, 2.0])


class TestStructure:
    def test_column_mismatch(self):
        with pytest.raises(LpStructureError):
            LinearProgram([1.0, 2.0], [[1.0]], ["<="], [1.0])

    def test_rhs_mismatch(self):
        with pytest.raises(LpStructureError):
            LinearProgram([1.0], [[1.0]], ["<="], [1.0, 2.0])

    def test_crossed_bounds(self):
        with pytest.raises(LpStructureError):
            LinearProgram([1.0], [[1.0]], ["<="], [1.0], lower=[2.0], upper=[1.0])

    def test_immutable(self):
        lp = bounded_lp()
        with pytest.raises(ValueError):
            lp.c[0] = 5.0

    def test_iteration_limit(self):
        lp = LinearProgram([-1.0, -1.0], [[1.0, 0.0], [0.0, 1.0]], ["<=", "<="], [1.0, 1.0])
        with pytest.raises(LpIterationLimit):
            solve_lp(lp, max_iterations=1)

    def test_nonpositive_tol(self):
        with pytest.raises(ValueError):
            solve_lp(bounded_lp(), 0.0)


def test_vertex_enumeration_oracle_five_by_four():
    for seed in range(200):
        rng = np.random.default_rng(10_000 + seed)
        A = rng.normal(size=(4, 5))
        b = rng.uniform(0.5, 2.0, size=4)
        lp = LinearProgram(rng.normal(size=5), A, ["<="] * 4, b, np.zeros(5), np.full(5, 2.0))
        sol = solve_lp(lp)
        assert sol.value == pytest.approx(enumerate_vertices_min(lp), abs=1e-8)


def test_random_lps_match_oracle_and_certify_duality():
    mismatches = []
    for seed in range(1000):
        lp = random_bounded_lp(seed)
        sol = solve_lp(lp)
        oracle = enumerate_vertices_min(lp)
        if sol.status is LpStatus.OPTIMAL:
            ok = (abs(sol.value - oracle) <= 1e-8
                  and check_feasible(lp, sol.primal, 1e-9)
                  and abs(lp.c @ sol.primal - sol.value) <= 1e-9
                  and dual_feasible(lp, sol.dual)
                  and abs(dual_objective(lp, sol.dual) - sol.value) <= 1e-8)
        else:
            ok = sol.status is LpStatus.INFEASIBLE and oracle == np.inf
        if not ok:
            mismatches.append(seed)
    assert mismatches == []


def test_simplex_agrees_with_highs_on_free_variable_lps():
    for seed in range(200):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        A = np.vstack([rng.normal(size=(m, n)), np.eye(n), -np.eye(n)])
        b = np.concatenate([rng.normal(size=m), np.full(2 * n, 2.0)])
        rels = list(rng.choice(["<=", ">=", "="], size=m, p=[0.5, 0.3, 0.2])) + ["<="] * (2 * n)
        lp = LinearProgram(rng.normal(size=n), A, rels, b, np.full(n, -np.inf), np.full(n, np.inf))
        ours, ref = solve_lp(lp), solve_lp(lp, method="highs")
        assert ours.status is ref.status
        if ours.optimal:
            assert ours.value == pytest.approx(ref.value, abs=1e-8)
            assert dual_objective(lp, ours.dual) == pytest.approx(ours.value, abs=1e-8)


def test_deterministic_bit_identical():
    lp = random_bounded_lp(7)
    a, b = solve_lp(lp), solve_lp(lp)
    assert a.status is b.status
    assert a.value == b.value
    assert np.array_equal(a.primal, b.primal) and np.array_equal(a.dual, b.dual)
