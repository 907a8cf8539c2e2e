import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdr.phi_divergence import PhiBall, PhiDivergenceError, kl_divergence, phi_worst_case
from oracles import kl_simplex_grid_max


def test_zero_radius_returns_center():
    c = np.array([0.2, 0.5, 0.3])
    v, mu = phi_worst_case(PhiBall(c, 0.0), [1.0, 2.0, 5.0])
    assert v == pytest.approx(0.2 + 1.0 + 1.5)
    np.testing.assert_array_equal(mu, c)


@pytest.mark.parametrize("eps", [0.0, 0.3, 5.0])
def test_constant_losses(eps):
    v, _ = phi_worst_case(PhiBall(np.ones(4) / 4, eps), [2.5] * 4)
    assert v == 2.5


def test_uniform_three_atoms_against_grid():
    c = np.ones(3) / 3
    v, mu = phi_worst_case(PhiBall(c, 0.1), [0.0, 1.0, 2.0])
    assert v == pytest.approx(kl_simplex_grid_max(c, [0, 1, 2], 0.1), abs=1e-3)
    assert kl_divergence(mu, c) <= 0.1 + 1e-9


def test_large_radius_concentrates_on_argmax_set():
    c = np.array([0.1, 0.2, 0.3, 0.4])
    v, mu = phi_worst_case(PhiBall(c, 10.0), [0.0, 3.0, 1.0, 3.0])
    assert v == pytest.approx(3.0)
    np.testing.assert_allclose(mu, [0.0, 1 / 3, 0.0, 2 / 3])


def test_errors():
    with pytest.raises(PhiDivergenceError):
        PhiBall([0.5, 0.5], -0.1)
    with pytest.raises(PhiDivergenceError):
        PhiBall([1.0, 0.0], 0.1)
    with pytest.raises(PhiDivergenceError):
        phi_worst_case(PhiBall([0.5, 0.5], 0.1), [1.0, np.nan])


def test_kl_zero_log_zero():
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_sandwich_feasibility_and_monotonicity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    c = rng.dirichlet(np.ones(n))
    c = c / math.fsum(c)
    if np.any(c <= 0) or abs(math.fsum(c) - 1) > 1e-12:
        return
    h = rng.normal(size=n)
    prev = -np.inf
    for eps in (0.0, 0.01, 0.1, 0.5, 2.0, 50.0):
        v, mu = phi_worst_case(PhiBall(c, eps), h)
        assert float(c @ h) - 1e-12 <= v <= h.max() + 1e-12
        assert kl_divergence(mu, c) <= eps + 1e-9
        assert abs(math.fsum(mu) - 1) <= 1e-12
        assert v >= prev - 1e-12
        prev = v
    assert prev == pytest.approx(h.max(), abs=1e-6)
