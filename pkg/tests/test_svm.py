import numpy as np
import pytest

from bdr.bdr_solver import SolverConfig, bdr_objective, solve_bdr_coordinate_descent
from bdr.distributions import SamplePoint
from bdr.svm import (
    Formulation, HingeInnerMax, SvmError, SvmInstance, SvmModel, SvmSweep, TrainingError,
    accuracy, build_eq20_lp, build_exact_epigraph_lp, dro_value_closed_form, hinge_loss,
    predict, svm_bdr_problem, svm_metric, train,
)
from oracles import hinge_l2_vertex_min, svm_blend_scan


def random_instance(seed, beta, n_max=10, l_max=4):
    rng = np.random.default_rng(seed)
    n, l = int(rng.integers(1, n_max + 1)), int(rng.integers(1, l_max + 1))
    return SvmInstance(rng.normal(size=(n, l)), rng.choice([-1, 1], n), beta,
                       float(rng.uniform(0, 1)), float(rng.uniform(0.05, 1)))


class TestHinge:
    def test_zero_weights(self):
        assert hinge_loss(np.zeros(2), SamplePoint((3.0, -1.0), 1)) == 1.0

    def test_correct_side(self):
        assert hinge_loss(np.array([1.0, 0.0]), SamplePoint((2.0, 0.0), 1)) == 0.0

    def test_wrong_side(self):
        assert hinge_loss(np.array([1.0, 0.0]), SamplePoint((2.0, 0.0), -1)) == 3.0

    def test_missing_label(self):
        with pytest.raises(SvmError):
            hinge_loss(np.zeros(1), SamplePoint((1.0,)))


class TestMetric:
    def test_identical(self):
        a = SamplePoint((0.2, 0.3), 1)
        assert svm_metric(a, a, 0.25) == 0.0

    def test_flip_only(self):
        assert svm_metric(SamplePoint((0.2,), 1), SamplePoint((0.2,), -1), 0.25) == 0.25

    def test_inf_norm(self):
        assert svm_metric(SamplePoint((0.0, 1.0), 1), SamplePoint((0.5, 0.2), 1), 0.25) == \
            pytest.approx(0.8)

    def test_dimension_mismatch(self):
        with pytest.raises(SvmError):
            svm_metric(SamplePoint((0.0,), 1), SamplePoint((0.0, 1.0), 1), 0.1)


class TestLpStructure:
    def test_sizes_one_by_one(self):
        lp = build_eq20_lp(SvmInstance([[1.0]], [1], 0.5, 0.1, 0.25))
        assert lp.num_vars == 4 and lp.num_rows == 5

    def test_exact_sizes(self):
        lp = build_exact_epigraph_lp(SvmInstance([[1.0, 2.0]] * 3, [1, -1, 1], 0.5, 0.1, 0.25))
        assert lp.num_vars == 2 + 1 + 6 + 2 and lp.num_rows == 9 + 1 + 4

    def test_invalid_instance(self):
        with pytest.raises(SvmError):
            SvmInstance([[1.0]], [0], 0.5, 0.1, 0.25)


class TestEndpoints:
    def test_formulations_agree_at_beta_zero_and_one(self):
        for seed in range(50):
            for beta in (0.0, 1.0):
                inst = random_instance(seed, beta)
                a = train(inst, Formulation.EQ20).objective
                b = train(inst, Formulation.EXACT).objective
                assert a == pytest.approx(b, abs=1e-7)

    def test_beta_zero_equals_saa_hinge_min(self):
        rng = np.random.default_rng(4)
        F = rng.normal(size=(10, 2))
        y = np.where(F[:, 0] + 0.5 * rng.normal(size=10) > 0, 1, -1)
        oracle = hinge_l2_vertex_min(F, y)
        for form in Formulation:
            assert train(SvmInstance(F, y, 0.0, 0.3, 0.25), form).objective == \
                pytest.approx(oracle, abs=1e-5)

    def test_beta_one_matches_grid_scan(self):
        rng = np.random.default_rng(2)
        F = rng.normal(size=(3, 2))
        y = np.array([1, -1, 1])
        inst = SvmInstance(F, y, 1.0, 0.2, 0.5)
        scan, _ = svm_blend_scan(F, y, 1.0, 0.2, 0.5, np.round(np.arange(-2, 2.005, 0.01), 2), 2)
        assert train(inst).objective == pytest.approx(scan, abs=2e-3)

    def test_exact_half_beta_matches_scan(self):
        rng = np.random.default_rng(8)
        F = rng.normal(size=(3, 1))
        y = np.array([1, 1, -1])
        inst = SvmInstance(F, y, 0.5, 0.3, 0.25)
        scan, _ = svm_blend_scan(F, y, 0.5, 0.3, 0.25, np.round(np.arange(-3, 3.0005, 1e-3), 3), 1)
        assert train(inst, Formulation.EXACT).objective == pytest.approx(scan, abs=2e-3)

    def test_eq20_is_dro_with_scaled_radius(self):
        for seed in range(20):
            inst = random_instance(seed, 0.4)
            scaled = SvmInstance(inst.features, inst.labels, 1.0, 0.4 * inst.epsilon, inst.kappa)
            assert train(inst).objective == pytest.approx(train(scaled).objective, abs=1e-9)


class TestGenericCrossCheck:
    def test_dro_lp_matches_generic_solver(self):
        for seed in range(50):
            inst = random_instance(seed, 1.0)
            model = train(inst)
            prob = svm_bdr_problem(inst)
            generic = bdr_objective(prob, model.weights, "dual_search")[0]
            assert generic == pytest.approx(model.objective, abs=1e-6)

    def test_coordinate_descent_not_below_lp(self):
        inst = random_instance(3, 1.0)
        model = train(inst)
        sol = solve_bdr_coordinate_descent(svm_bdr_problem(inst), np.zeros(inst.l),
                                           SolverConfig(inner_mode="dual_search", max_outer=50))
        assert sol.value >= model.objective - 1e-6

    def test_huge_radius_cap(self):
        rng = np.random.default_rng(0)
        F, y = rng.normal(size=(6, 2)), rng.choice([-1, 1], 6)
        model = train(SvmInstance(F, y, 1.0, 1e3, 0.25))
        # with a huge budget the best is x = 0, every loss equals 1
        np.testing.assert_allclose(model.weights, 0.0, atol=1e-9)
        assert model.objective == pytest.approx(
            dro_value_closed_form(model.weights, F, y, 1e3, 0.25), abs=1e-9)
        assert model.objective == pytest.approx(1.0)


class TestInvariants:
    def test_epigraph_bounds_at_optimum(self):
        for seed in range(20):
            inst = random_instance(seed, 0.6)
            m = train(inst)
            margins = inst.labels * (inst.features @ m.weights)
            need = np.maximum(np.maximum(1 - margins, 1 + margins - inst.kappa * m.lambda0), 0)
            assert np.all(m.lambdas >= need - 1e-8)
            assert np.abs(m.weights).sum() <= m.lambda0 + 1e-8
            assert np.all(m.lambdas >= -1e-10)

    @pytest.mark.parametrize("form", list(Formulation))
    def test_duplicating_points_keeps_optimum(self, form):
        inst = random_instance(9, 0.5)
        dup = SvmInstance(np.vstack([inst.features] * 2), np.concatenate([inst.labels] * 2),
                          inst.beta, inst.epsilon, inst.kappa)
        assert train(inst, form).objective == pytest.approx(train(dup, form).objective, abs=1e-8)

    def test_separable_pair(self):
        inst = SvmInstance([[1.0], [-1.0]], [1, -1], 0.0, 0.5, 0.25)
        m = train(inst)
        assert m.objective == pytest.approx(0.0, abs=1e-12)
        assert accuracy(predict(m, inst.features), inst.labels) == 1.0


class TestSweep:
    @pytest.mark.parametrize("form", list(Formulation))
    def test_matches_dense_simplex(self, form):
        rng = np.random.default_rng(5)
        F, y = rng.normal(size=(8, 3)), rng.choice([-1, 1], 8)
        sweep = SvmSweep(F, y, 0.25, form)
        for beta, eps in ((0.0, 0.1), (1.0, 0.3), (0.3, 0.05), (1.0, 0.001)):
            ref = train(SvmInstance(F, y, beta, eps, 0.25), form)
            assert sweep.solve(beta, eps).objective == pytest.approx(ref.objective, abs=1e-7)


class TestInnerOracle:
    def test_infinite_below_norm(self):
        o = HingeInnerMax(np.array([1.0, -2.0]), 0.25)
        assert np.isinf(o(2.9, SamplePoint((0.0, 0.0), 1)))
        assert np.isfinite(o(3.0, SamplePoint((0.0, 0.0), 1)))

    def test_argmax_flips_label_when_cheaper(self):
        o = HingeInnerMax(np.array([1.0]), 0.25)
        atom = SamplePoint((2.0,), 1)
        assert o.argmax(1.0, [atom])[0].label == -1
        assert o.argmax(100.0, [atom])[0].label == 1


class TestPredictAccuracy:
    def test_positive(self):
        m = SvmModel(np.array([1.0, 0.0]), 1.0, np.zeros(1), 0.0, Formulation.EQ20)
        assert predict(m, [[2.0, 0.0]]).tolist() == [1]
        assert predict(m, [[-2.0, 0.0]]).tolist() == [-1]

    def test_zero_weights_all_positive(self):
        m = SvmModel(np.zeros(3), 0.0, np.zeros(1), 0.0, Formulation.EQ20)
        assert predict(m, np.random.default_rng(0).normal(size=(5, 3))).tolist() == [1] * 5

    def test_dimension_mismatch(self):
        m = SvmModel(np.zeros(3), 0.0, np.zeros(1), 0.0, Formulation.EQ20)
        with pytest.raises(SvmError):
            predict(m, [[1.0, 2.0]])

    def test_accuracy_values(self):
        assert accuracy([1, -1, 1], [1, -1, 1]) == 1.0
        assert accuracy([1, -1], [-1, 1]) == 0.0
        assert accuracy([1, 1, -1, -1], [1, -1, -1, 1]) == 0.5
        with pytest.raises(SvmError):
            accuracy([1], [1, 1])


def test_model_json_round_trip(tmp_path):
    inst = random_instance(1, 0.3)
    m = train(inst, Formulation.EXACT)
    path = tmp_path / "model.json"
    m.save(path)
    back = SvmModel.load(path)
    np.testing.assert_array_equal(back.weights, m.weights)
    assert back.formulation is Formulation.EXACT
    assert (back.beta, back.epsilon, back.kappa) == (m.beta, m.epsilon, m.kappa)
    assert back.objective == m.objective and back.lambda0 == m.lambda0


def test_infeasible_training_reports(monkeypatch):
    from bdr import svm as svm_mod
    from bdr.lp_core import LpSolution, LpStatus

    monkeypatch.setattr(svm_mod, "solve_lp",
                        lambda *a, **k: LpSolution(LpStatus.UNBOUNDED, -np.inf, None, None))
    with pytest.raises(TrainingError, match="unbounded"):
        train(random_instance(0, 0.5))
