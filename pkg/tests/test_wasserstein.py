from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdr.distributions import (
    DiscreteDistribution, LossEvaluationError, SamplePoint, dirac, empirical_from_samples,
    expectation, point,
)
from bdr.wasserstein import (
    BallInfeasibleError, CostMatrixTooLarge, GridInnerMax, GroundMetric, GrowthRateError,
    TransportPlan, WassersteinBall, WassersteinError, WorstCaseResult, candidate_support,
    check_metric, growth_rate_check, verify_support_structure, wasserstein_distance,
    worst_case_dual, worst_case_equal_weight, worst_case_primal,
)

UNIT_GRID = [point(round(0.01 * k, 2)) for k in range(101)]


def ident(p):
    return p.coords[0]


def random_instance(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(1, 6)), int(rng.integers(1, 3))
    center = DiscreteDistribution(tuple(point(*rng.uniform(0, 1, d)) for _ in range(n)),
                                  rng.dirichlet(np.ones(n)))
    grid = [point(*rng.uniform(0, 1, d)) for _ in range(int(rng.integers(1, 26 - n)))]
    cands = candidate_support(center, grid)
    values = {c: rng.uniform(0, 10) for c in cands}
    return WassersteinBall(center, rng.uniform(0, 2)), values.__getitem__, cands


def two_atom_bruteforce(center_pt, grid, h, eps):
    """Best q*h(u) + (1-q)*h(v) with q*d(c,u) + (1-q)*d(c,v) <= eps over grid pairs."""
    x = np.array([g.coords[0] for g in grid])
    hv = np.array([h(g) for g in grid])
    d = np.abs(x - center_pt)
    best, arg = -np.inf, None
    for a in range(len(x)):
        for b in range(len(x)):
            # objective and cost are linear in q; check the feasible q-interval ends
            qs = [0.0, 1.0]
            if d[a] != d[b]:
                qs.append((eps - d[b]) / (d[a] - d[b]))
            for q in qs:
                if 0 <= q <= 1 and q * d[a] + (1 - q) * d[b] <= eps + 1e-12:
                    val = q * hv[a] + (1 - q) * hv[b]
                    if val > best + 1e-12:
                        best, arg = val, (x[a], x[b], q)
    return best, arg


class TestMetric:
    def test_inf_norm_label_flip_values(self):
        m = GroundMetric.inf_norm_label_flip(0.25)
        assert m(SamplePoint((0.0, 1.0), 1), SamplePoint((0.0, 1.0), 1)) == 0.0
        assert m(SamplePoint((0.0, 1.0), 1), SamplePoint((0.0, 1.0), -1)) == 0.25
        assert m(SamplePoint((0.0, 1.0), 1), SamplePoint((0.5, 0.2), 1)) == pytest.approx(0.8)

    def test_custom_metric_checked(self):
        m = GroundMetric.custom(lambda a, b: abs(a.coords[0] - b.coords[0]) ** 0.5)
        assert check_metric(m, [point(v) for v in (0.0, 0.3, 2.0)])
        bad = GroundMetric.custom(lambda a, b: a.coords[0] - b.coords[0] + 1)
        assert not check_metric(bad, [point(0.0), point(1.0)])

    def test_size_guard(self):
        rows = [point(0.0)] * 4000
        cols = [point(1.0)] * 2501
        with pytest.raises(CostMatrixTooLarge):
            GroundMetric.euclidean().pairwise(rows, cols)


class TestDistance:
    def test_identical(self):
        a = empirical_from_samples([point(0.0), point(2.0)])
        assert wasserstein_distance(a, a)[0] == pytest.approx(0.0, abs=1e-12)

    def test_half_split(self):
        a = empirical_from_samples([point(0.0), point(1.0)])
        w, plan = wasserstein_distance(a, dirac(point(0.5)))
        assert w == pytest.approx(0.5)
        np.testing.assert_allclose(plan.matrix, [[0.5], [0.5]])

    def test_matches_transport_vertex_enumeration(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            a = DiscreteDistribution(tuple(point(v) for v in rng.normal(size=3)),
                                     rng.dirichlet(np.ones(3)))
            b = DiscreteDistribution(tuple(point(v) for v in rng.normal(size=4)),
                                     rng.dirichlet(np.ones(4)))
            C = np.abs(a.coords()[:, 0][:, None] - b.coords()[:, 0][None, :])
            A = np.zeros((7, 12))
            for i in range(3):
                A[i, 4 * i:4 * i + 4] = 1
            for j in range(4):
                A[3 + j, j::4] = 1
            rhs = np.concatenate([a.weights, b.weights])
            best = np.inf
            for basis in combinations(range(12), 6):
                z = np.zeros(12)
                sol, *_ = np.linalg.lstsq(A[:, basis], rhs, rcond=None)
                z[list(basis)] = sol
                if np.all(z >= -1e-12) and np.allclose(A @ z, rhs, atol=1e-10):
                    best = min(best, float(C.ravel() @ z))
            assert wasserstein_distance(a, b)[0] == pytest.approx(best, abs=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), p=st.sampled_from([1.0, 2.0]))
    def test_triangle_inequality(self, seed, p):
        rng = np.random.default_rng(seed)
        ds = [DiscreteDistribution(tuple(point(*rng.normal(size=2)) for _ in range(k)),
                                   rng.dirichlet(np.ones(k))) for k in rng.integers(1, 5, size=3)]
        ab = wasserstein_distance(ds[0], ds[1], p)[0]
        bc = wasserstein_distance(ds[1], ds[2], p)[0]
        ac = wasserstein_distance(ds[0], ds[2], p)[0]
        assert ac <= ab + bc + 1e-7


class TestPrimal:
    def test_zero_radius_returns_center(self):
        center = empirical_from_samples([point(0.2), point(0.7)])
        ball = WassersteinBall(center, 0.0)
        res = worst_case_primal(ball, ident, candidate_support(center, UNIT_GRID))
        assert res.value == pytest.approx(expectation(center, ident), abs=1e-12)
        assert verify_support_structure(res, center)

    def test_dirac_linear(self):
        ball = WassersteinBall(dirac(point(0.0)), 0.3)
        res = worst_case_primal(ball, ident, UNIT_GRID)
        oracle, (u, v, q) = two_atom_bruteforce(0.0, UNIT_GRID, ident, 0.3)
        assert oracle == pytest.approx(0.3)
        assert res.value == pytest.approx(oracle, abs=1e-9)
        assert verify_support_structure(res, ball.center, 1e-7)
        if res.split_atom_index is not None:
            P = res.plan.matrix[0]
            js = np.flatnonzero(P > 1e-12)
            cost = sum(P[j] * UNIT_GRID[j].coords[0] for j in js)
            assert cost == pytest.approx(0.3)

    def test_uniform_pair_linear(self):
        center = empirical_from_samples([point(0.0), point(1.0)])
        res = worst_case_primal(WassersteinBall(center, 0.2), ident, UNIT_GRID)
        x = np.array([g.coords[0] for g in UNIT_GRID])
        # every atom relocation pair within the average budget
        cost = 0.5 * np.abs(x[:, None] - 0.0) + 0.5 * np.abs(x[None, :] - 1.0)
        val = 0.5 * x[:, None] + 0.5 * x[None, :]
        oracle = val[cost <= 0.2 + 1e-12].max()
        assert oracle == pytest.approx(0.7)
        assert res.value == pytest.approx(oracle, abs=1e-9)

    def test_value_matches_distribution(self):
        ball, h, cands = random_instance(5)
        res = worst_case_primal(ball, h, cands)
        assert res.value == pytest.approx(expectation(res.distribution, h), abs=1e-8)

    def test_nonfinite_candidate(self):
        ball = WassersteinBall(dirac(point(0.0)), 0.1)
        with pytest.raises(LossEvaluationError):
            worst_case_primal(ball, lambda p: np.inf if p.coords[0] > 0.5 else 0.0, UNIT_GRID)

    def test_empty_candidates(self):
        with pytest.raises(WassersteinError):
            worst_case_primal(WassersteinBall(dirac(point(0.0)), 0.1), ident, [])

    def test_unreachable_support(self):
        ball = WassersteinBall(dirac(point(0.0)), 0.5)
        with pytest.raises(BallInfeasibleError):
            worst_case_primal(ball, ident, [point(1.0)])


class TestDual:
    def test_zero_radius(self):
        center = empirical_from_samples([point(0.2), point(0.7)])
        ball = WassersteinBall(center, 0.0)
        val, lam = worst_case_dual(ball, ident, GridInnerMax.from_loss(UNIT_GRID, ident, ball.metric))
        assert val == pytest.approx(0.45)
        assert lam == np.inf

    def test_dirac_linear_against_scan(self):
        ball = WassersteinBall(dirac(point(0.0)), 0.3)
        val, lam = worst_case_dual(ball, ident, GridInnerMax.from_loss(UNIT_GRID, ident, ball.metric))
        x = np.array([g.coords[0] for g in UNIT_GRID])
        lams = np.arange(0, 10 + 1e-12, 1e-4)
        F = 0.3 * lams + (x[None, :] - lams[:, None] * x[None, :]).max(axis=1)
        assert F.min() == pytest.approx(0.3, abs=1e-12)
        assert val == pytest.approx(F.min(), abs=1e-8)
        assert lam == pytest.approx(lams[F.argmin()], abs=1e-6)

    def test_huge_radius_gives_max(self):
        rng = np.random.default_rng(1)
        hv = {g: rng.uniform(0, 3) for g in UNIT_GRID}
        center = empirical_from_samples([UNIT_GRID[10], UNIT_GRID[40]])
        ball = WassersteinBall(center, 50.0)
        val, lam = worst_case_dual(ball, hv.__getitem__,
                                   GridInnerMax.from_loss(UNIT_GRID, hv.__getitem__, ball.metric))
        assert val == pytest.approx(max(hv.values()))
        assert lam == pytest.approx(0.0, abs=1e-9)

    def test_unbounded_dual_flags_growth(self):
        ball = WassersteinBall(dirac(point(0.0)), 0.5)
        with pytest.raises(GrowthRateError):
            worst_case_dual(ball, ident, GridInnerMax.from_loss([point(1.0)], ident, ball.metric))

    def test_probe_bracket_without_oracle_bracket(self):
        ball = WassersteinBall(dirac(point(0.0)), 0.3)
        grid = GridInnerMax.from_loss(UNIT_GRID, ident, ball.metric)
        plain = lambda lam, atom: grid(lam, atom)
        probes = [(UNIT_GRID[i], UNIT_GRID[i + 1]) for i in range(100)]
        val, _ = worst_case_dual(ball, ident, plain, probes=probes)
        assert val == pytest.approx(0.3, abs=1e-8)


class TestEqualWeight:
    def test_zero_radius(self):
        center = empirical_from_samples([point(0.2), point(0.7)])
        val, rel = worst_case_equal_weight(WassersteinBall(center, 0.0), ident, UNIT_GRID)
        assert rel == list(center.atoms)
        assert val == pytest.approx(0.45)

    def test_pair_linear(self):
        center = empirical_from_samples([point(0.0), point(1.0)])
        val, _ = worst_case_equal_weight(WassersteinBall(center, 0.2), ident, UNIT_GRID)
        primal = worst_case_primal(WassersteinBall(center, 0.2), ident, UNIT_GRID).value
        assert val == pytest.approx(0.7, abs=1e-9)
        assert val == pytest.approx(primal, abs=1e-9)

    def test_concave_quadratic(self):
        center = empirical_from_samples([point(0.2), point(0.8)])
        ball = WassersteinBall(center, 0.1)
        h = lambda p: -(p.coords[0] - 0.5) ** 2
        val, _ = worst_case_equal_weight(ball, h, UNIT_GRID)
        primal = worst_case_primal(ball, h, candidate_support(center, UNIT_GRID)).value
        assert val == pytest.approx(primal, abs=1e-6)

    def test_split_atom_merged_off_grid(self):
        # odd budget forces a split; merged point keeps the value for linear h
        center = empirical_from_samples([point(0.0), point(0.5)])
        ball = WassersteinBall(center, 0.123)
        grid = [point(round(0.1 * k, 1)) for k in range(11)]
        val, rel = worst_case_equal_weight(ball, ident, grid)
        primal = worst_case_primal(ball, ident, candidate_support(center, grid)).value
        assert val == pytest.approx(primal, abs=1e-9)
        cost = np.mean([abs(r.coords[0] - c.coords[0]) for r, c in zip(rel, center.atoms)])
        assert cost <= 0.123 + 1e-9

    def test_nonuniform_rejected(self):
        center = DiscreteDistribution((point(0.0), point(1.0)), [0.3, 0.7])
        with pytest.raises(WassersteinError):
            worst_case_equal_weight(WassersteinBall(center, 0.1), ident, UNIT_GRID)

    def test_continuous_nonconcave_gap(self):
        # a bump beyond reach of a single relocation: splitting wins
        h = lambda p: float(np.clip(10 * (abs(p.coords[0]) - 0.9), 0, 1))
        grid = [point(round(-1 + 0.01 * k, 2)) for k in range(201)]
        ball = WassersteinBall(dirac(point(0.0)), 0.5)
        assert worst_case_primal(ball, h, grid).value == pytest.approx(0.5)
        assert worst_case_equal_weight(ball, h, grid)[0] == pytest.approx(0.0)


class TestSupportStructure:
    def test_zero_radius_no_split(self):
        center = empirical_from_samples([point(0.1), point(0.6)])
        res = worst_case_primal(WassersteinBall(center, 0.0), ident,
                                candidate_support(center, UNIT_GRID))
        assert res.split_atom_index is None
        assert verify_support_structure(res, center)

    def test_fake_two_splits_rejected(self):
        center = empirical_from_samples([point(0.0), point(1.0)])
        atoms = (point(0.0), point(0.5), point(1.0), point(1.5))
        P = np.array([[0.25, 0.25, 0.0, 0.0], [0.0, 0.0, 0.25, 0.25]])
        plan = TransportPlan(P, [0.5, 0.5], P.sum(axis=0))
        fake = WorstCaseResult(1.0, DiscreteDistribution(atoms, P.sum(axis=0)), plan, 0.0)
        assert not verify_support_structure(fake, center)
        no_plan = WorstCaseResult(1.0, fake.distribution, None, 0.0)
        assert not verify_support_structure(no_plan, center)

    def test_one_split_without_plan(self):
        center = empirical_from_samples([point(0.0), point(1.0)])
        d = DiscreteDistribution((point(0.0), point(0.5), point(1.0)), [0.2, 0.3, 0.5])
        assert verify_support_structure(WorstCaseResult(0.0, d, None, 0.0), center)


class TestProperties:
    def test_duality_and_structure_on_random_instances(self):
        for seed in range(100):
            ball, h, cands = random_instance(seed)
            res = worst_case_primal(ball, h, cands)
            val, _ = worst_case_dual(ball, h, GridInnerMax.from_loss(cands, h, ball.metric))
            assert abs(res.value - val) <= 1e-6
            assert verify_support_structure(res, ball.center, 1e-7)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_monotone_in_radius_and_sandwich(self, seed):
        ball, h, cands = random_instance(seed)
        base = expectation(ball.center, h)
        prev = -np.inf
        for eps in (0.0, 0.05, 0.2, 0.6, 1.5):
            v = worst_case_primal(WassersteinBall(ball.center, eps), h, cands).value
            assert v >= prev - 1e-9
            assert v >= base - 1e-9
            if eps == 0.0:
                assert v == pytest.approx(base, abs=1e-9)
            prev = v


class TestGrowthRate:
    def test_constant(self):
        probes = [(point(0.0), point(1.0)), (point(2.0), point(-1.0))]
        assert growth_rate_check(lambda p: 3.0, GroundMetric.euclidean(), 1.0, probes) == 0.0

    def test_identity_slope(self):
        probes = [(point(a), point(b)) for a, b in [(0, 1), (1, 0), (2, 5), (0.3, 0.1)]]
        assert growth_rate_check(ident, GroundMetric.euclidean(), 1.0, probes) == pytest.approx(1.0)

    def test_hinge_bounded_by_l1_norm(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=4)
        hinge = lambda p: max(1 - p.label * float(np.dot(x, p.coords)), 0.0)
        probes = []
        for _ in range(10_000):
            y = int(rng.choice([-1, 1]))
            probes.append((SamplePoint(tuple(rng.normal(size=4)), y),
                           SamplePoint(tuple(rng.normal(size=4)), y)))
        L = growth_rate_check(hinge, GroundMetric.inf_norm_label_flip(0.25), 1.0, probes)
        assert L <= np.abs(x).sum() + 1e-12

    def test_no_distinct_pairs(self):
        assert growth_rate_check(ident, GroundMetric.euclidean(), 1.0,
                                 [(point(1.0), point(1.0))]) is None
