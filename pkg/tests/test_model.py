import itertools

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kel.errors import NonPositiveForm, NotControllable, RateNotPositive, ValidationError
from kel.model import (BlockModel, MeasureSummary, ProbePlan, chain, check_dissipativity,
                       condition_report, equivalence_constant, granular, granular_thetas,
                       kalman_index, kappa, kinetic_ou, preset, twisted_constants,
                       twisted_form_matrix, twisted_metric)

mp.mp.dps = 30
betas = st.floats(0.05, 20.0)


def mp_kappa(beta, th1, th2):
    beta, th1, th2 = mp.mpf(beta), mp.mpf(th1), mp.mpf(th2)
    return 2 * (beta - th1 - th2) / (2 + 2 * beta + beta**2 + mp.sqrt(beta**4 + 4))


def mp_thetas(theta, alpha, beta):
    theta, alpha, beta = mp.mpf(theta), mp.mpf(alpha), mp.mpf(beta)
    root = mp.sqrt(2 + 2 * beta + beta**2)
    return theta * (mp.mpf(1) / 2 + root), theta / 2 * root + alpha * (beta + 1) / (2 * beta)


# closed forms against high-precision evaluation

def test_kappa_reference_values():
    assert kappa(1, 0, 0) == pytest.approx(0.2763932, abs=1e-7)
    assert kappa(1, 0, 0) == pytest.approx(float(2 / (5 + mp.sqrt(5))), abs=1e-14)
    # the literal 0.2487524 quoted for this case is off by 1.5e-6 from 3.6 / (10 + sqrt 20)
    assert kappa(2, 0.1, 0.1) == pytest.approx(0.2487524, abs=2e-6)
    assert kappa(2, 0.1, 0.1) == pytest.approx(float(mp.mpf("3.6") / (10 + mp.sqrt(20))), abs=1e-14)


def test_kappa_not_positive():
    with pytest.raises(RateNotPositive):
        kappa(1, 0.6, 0.5)


def test_thetas_and_chained_kappa():
    th = granular_thetas(0.05, 0.02, 1)
    ref = mp_thetas(0.05, 0.02, 1)
    assert th == pytest.approx((0.1368034, 0.0759017), abs=1e-7)
    assert th[0] == pytest.approx(float(ref[0]), abs=1e-14)
    assert th[1] == pytest.approx(float(ref[1]), abs=1e-14)
    assert granular_thetas(0, 0, 1) == (0.0, 0.0)
    assert kappa(1, *th) == pytest.approx(0.2176031, abs=1e-6)
    assert kappa(1, *th) == pytest.approx(float(mp_kappa(1, *ref)), abs=1e-14)


def test_twisted_constants_values():
    a, r = twisted_constants(1.0)
    assert (a, r) == pytest.approx((1.2247449, 0.4082483), abs=1e-7)
    assert a * r == pytest.approx(0.5, abs=1e-15)


@given(betas)
def test_twisted_identities(beta):
    a, r = twisted_constants(beta)
    assert abs(a * a - beta - r * a) <= 1e-12 * max(1, beta)
    assert abs(1 - r * a - beta / (1 + beta)) <= 1e-12
    assert abs(r * a * beta - beta / (1 + beta)) <= 1e-12 * max(1, beta)
    assert 0 < r < 1


@given(betas, st.floats(0, 5), st.floats(0, 0.5))
def test_kappa_matches_high_precision(beta, theta, alpha):
    th = granular_thetas(theta, alpha, beta)
    ref = mp_thetas(theta, alpha, beta)
    assert th[0] == pytest.approx(float(ref[0]), rel=1e-13, abs=1e-15)
    if th[0] + th[1] < beta:
        assert kappa(beta, *th) == pytest.approx(float(mp_kappa(beta, *th)), rel=1e-11, abs=1e-15)


@given(betas)
def test_kappa_decreasing_in_theta_sum(beta):
    grid = np.linspace(0, 0.99 * beta, 25)
    vals = [kappa(beta, s, 0.0) for s in grid]
    assert np.all(np.diff(vals) < 0)
    assert all(v > 0 for v in vals)


# Kalman index

def test_kalman_examples():
    assert kalman_index(np.zeros((2, 2)), np.eye(2)) == 0
    assert kalman_index([[0, 1], [0, 0]], [[0], [1]]) == 1
    with pytest.raises(NotControllable):
        kalman_index(np.zeros((2, 2)), np.zeros((2, 2)))


def brute_index(A, B):
    d1 = A.shape[0]
    for k in range(d1):
        M = np.hstack([np.linalg.matrix_power(A, j) @ B for j in range(k + 1)])
        if np.linalg.matrix_rank(M) == d1:
            return k
    return None


@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_kalman_matches_brute_force(d1, d2, seed):
    g = np.random.default_rng(seed)
    A = g.integers(-2, 3, (d1, d1)).astype(float)
    B = g.integers(-1, 2, (d1, d2)).astype(float)
    want = brute_index(A, B)
    if want is None:
        with pytest.raises(NotControllable):
            kalman_index(A, B)
    else:
        assert kalman_index(A, B) == want


# dissipativity

def _with_b(b, d=2):
    m = kinetic_ou(d)
    m.b = b
    return m


def test_dissipativity_zero_b():
    plan = ProbePlan(n_states=200, n_dirs=20)
    res = check_dissipativity(kinetic_ou(2), 0.3, plan)
    assert res.passed
    assert res.worst_margin == pytest.approx(0.3, rel=1e-12)  # |B^T v| = 1 for unit v, B = I


def test_dissipativity_sine_passes():
    m = _with_b(lambda x, s=None: 0.1 * np.sin(x[..., 2:]))
    res = check_dissipativity(m, 0.2, ProbePlan(n_states=2000, n_dirs=50))
    assert res.passed
    assert res.delta_min <= 0.1 + 1e-6


def test_dissipativity_violated_with_witness():
    m = _with_b(lambda x, s=None: -x[..., 2:])
    res = check_dissipativity(m, 0.5, ProbePlan(n_states=200, n_dirs=20))
    assert not res.passed
    assert res.worst_margin == pytest.approx(-0.5, rel=1e-6)
    assert res.witness_x.shape == (4,) and res.witness_v.shape == (2,)
    assert res.dissipativity_delta == "violated"


def test_dissipativity_delta_range():
    with pytest.raises(ValidationError):
        check_dissipativity(kinetic_ou(), 1.0)


# twisted metric

def test_twisted_metric_examples():
    assert twisted_metric([1.0, 2.0], [1.0, 2.0], 1.0, np.eye(1)) == 0.0
    a, _ = twisted_constants(1.0)
    assert twisted_metric([1.0, 0.0], [0.0, 0.0], 1.0, np.eye(1)) == pytest.approx(a, abs=1e-15)


def test_twisted_metric_negative_radicand(monkeypatch):
    import kel.model

    # valid constants keep the form positive definite; an r above 1 breaks it
    monkeypatch.setattr(kel.model, "twisted_constants", lambda beta: (1.0, 2.0))
    with pytest.raises(NonPositiveForm):
        twisted_metric([1.0, -1.0], [0.0, 0.0], 1.0, np.eye(1))


@given(betas, st.integers(0, 2**31 - 1))
def test_twisted_metric_bounds_and_axioms(beta, seed):
    g = np.random.default_rng(seed)
    d = 2
    B = np.eye(d) + 0.3 * g.standard_normal((d, d))
    x, y, z = g.standard_normal((3, 50, 2 * d))
    psi = twisted_metric(x, y, beta, B)
    assert np.array_equal(psi, twisted_metric(y, x, beta, B))
    assert np.all(twisted_metric(x, z, beta, B) <= psi + twisted_metric(y, z, beta, B) + 1e-10)
    C = equivalence_constant(beta, B)
    e = np.linalg.norm(x - y, axis=1)
    assert np.all(e / C <= psi * (1 + 1e-12)) and np.all(psi <= C * e * (1 + 1e-12))
    # largest eigenvalue of the form with B = I is the closed-form constant
    top = np.linalg.eigvalsh(twisted_form_matrix(beta, np.eye(d)))[-1]
    assert top == pytest.approx((2 + 2 * beta + beta**2 + np.sqrt(beta**4 + 4)) / (2 * (1 + beta)),
                                rel=1e-12)
    eu = np.linalg.norm(x - y, axis=1)
    psi_I = twisted_metric(x, y, beta, np.eye(d))
    assert np.all(psi_I**2 <= top * eu**2 * (1 + 1e-12))


# presets and reports

def test_condition_report_granular():
    rep = condition_report(granular(1.0, 0.05, 0.02))
    assert rep.kalman_index == 0 and rep.dissipativity_delta == 0.0
    assert rep.kappa == pytest.approx(0.2176031, abs=1e-6)
    assert rep.twisted_a ** 2 - rep.beta - rep.twisted_r * rep.twisted_a == pytest.approx(0, abs=1e-12)


def test_condition_report_no_kappa_when_not_contractive():
    rep = condition_report(granular(1.0, 0.4, 0.0))
    assert rep.kappa is None


def test_chain_preset():
    m = chain()
    assert kalman_index(m.A, m.B) == 1
    assert np.all(np.linalg.eigvals(np.array([[0, 1, 0], [0, 0, 1], [-1, -2, -2]])).real < 0)


def test_preset_lookup_and_errors():
    assert preset("kinetic-ou").name == "kinetic-ou"
    with pytest.raises(ValidationError):
        preset("nope")
    with pytest.raises(ValidationError):
        granular(beta=-1)
    with pytest.raises(ValidationError):
        granular(theta=0.1).Z(0.0, np.zeros((1, 2)), None)


def test_granular_theta_audit():
    m = granular(1.0, 0.05)
    assert m.mean_field.audit_theta(1, 1) <= 0.05 + 1e-12


def test_granular_sigma_lipschitz_in_mean():
    alpha = 0.3
    m = granular(1.0, 0.0, alpha)
    g = np.random.default_rng(0)
    for _ in range(50):
        X, Y = g.normal(size=(2, 100, 2)) + g.normal(size=(2, 1, 2)) * 2
        sx = m.sigma_at(0, MeasureSummary(X))
        sy = m.sigma_at(0, MeasureSummary(Y))
        # W2 between the clouds is at least the distance of their means
        mean_gap = np.linalg.norm(X.mean(0) - Y.mean(0))
        assert np.sum((sx - sy) ** 2) <= alpha * mean_gap**2 + 1e-15


def test_singular_sigma_rejected():
    m = BlockModel(1, 1, [[0.0]], [[1.0]], lambda t, x, s=None: -x[..., 1:], sigma=[[0.0]])
    with pytest.raises(ValidationError):
        m.sigma_at(0.0)
