import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from kel.entropy import QuadraticTestFunction, dv_lower_bound, dv_objective, golden_section_max, knn_kl
from kel.errors import ValidationError
from kel.gaussian import GaussianState, gaussian_kl


def gaussian_pair(seed, n):
    g = np.random.default_rng(seed)
    return g.normal(size=(n, 2)) + [1.0, 0.0], g.normal(size=(n, 2))


def test_knn_same_law_is_near_zero():
    g = np.random.default_rng(0)
    est = knn_kl(g.normal(size=(10_000, 2)), g.normal(size=(10_000, 2)))
    assert est.value <= 0.05 and abs(est.metadata["raw"]) <= 0.05


def test_knn_mean_shift():
    P, Q = gaussian_pair(1, 20_000)
    est = knn_kl(P, Q, k=5)
    assert abs(est.value - 0.5) <= 0.08
    assert 0 < est.uncertainty < 0.05


def test_knn_rotation_invariant():
    P, Q = gaussian_pair(2, 800)
    R = special_ortho_group.rvs(2, random_state=3)
    a, b = knn_kl(P, Q), knn_kl(P @ R.T, Q @ R.T)
    assert a.metadata["raw"] == pytest.approx(b.metadata["raw"], abs=1e-9)


def test_knn_threads_do_not_change_result():
    P, Q = gaussian_pair(3, 1500)
    assert knn_kl(P, Q, threads=1).value == knn_kl(P, Q, threads=3).value


def test_knn_preconditions():
    P = np.random.default_rng(4).normal(size=(5, 2))
    with pytest.raises(ValidationError):
        knn_kl(P, P + 1, k=5)
    with pytest.raises(ValidationError):
        knn_kl(P, np.zeros((6, 3)), k=1)


def test_knn_duplicates_are_jittered():
    P = np.repeat(np.random.default_rng(5).normal(size=(50, 2)), 2, axis=0)
    with pytest.warns(RuntimeWarning, match="duplicate"):
        est = knn_kl(P, np.random.default_rng(6).normal(size=(100, 2)), k=3)
    assert np.isfinite(est.value)


def test_dv_trivial_test_function():
    P, Q = gaussian_pair(7, 500)
    one = QuadraticTestFunction(np.zeros((2, 2)), np.zeros(2))
    assert dv_objective(one, P, Q) == pytest.approx(0.0, abs=1e-12)
    assert dv_lower_bound(P, Q, family=[one]).value == 0.0


def test_dv_linear_optimum_recovers_half_shift_squared():
    P, Q = gaussian_pair(8, 20_000)
    f = QuadraticTestFunction(np.zeros((2, 2)), [1.0, 0.0])
    est = dv_lower_bound(P, Q, family=[f])
    assert abs(est.value - 0.5) <= max(3 * est.uncertainty, 0.03)


def test_dv_linear_search_finds_the_shift():
    P, Q = gaussian_pair(9, 5000)
    est = dv_lower_bound(P, Q, quadratic=False, budget=600)
    assert est.metadata["l"] == pytest.approx([1.0, 0.0], abs=0.15)
    assert est.value == pytest.approx(0.5, abs=0.08)


@settings(max_examples=6)
@given(st.integers(0, 10**6))
def test_dv_is_a_lower_bound_on_gaussians(seed):
    g = np.random.default_rng(seed)
    A = g.normal(size=(2, 2)) * 0.3 + np.eye(2)
    mp = g.normal(size=2) * 0.7
    P = g.normal(size=(3000, 2)) @ A.T + mp
    Q = g.normal(size=(3000, 2))
    truth = gaussian_kl(GaussianState(mp, A @ A.T), GaussianState(np.zeros(2), np.eye(2)))
    est = dv_lower_bound(P, Q, budget=800, restarts=1, seed=seed)
    assert est.value <= truth + 3 * est.uncertainty + 1e-9
    assert est.value >= 0


def test_integrability_guard():
    f = QuadraticTestFunction(0.6 * np.eye(2), np.zeros(2))
    assert not f.integrable_under(np.eye(2))
    assert f.integrable_under(0.5 * np.eye(2))
    with pytest.raises(ValidationError):
        QuadraticTestFunction(np.eye(1), [np.nan])


def test_golden_section_on_parabola():
    x, v = golden_section_max(lambda t: -(t - 0.3) ** 2 + 2, -5, 5, iters=60)
    assert x == pytest.approx(0.3, abs=1e-7) and v == pytest.approx(2.0)
