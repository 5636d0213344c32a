import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as O
from conftest import sine, two_step_instance
from streamgp.errors import DimensionMismatch
from streamgp.gp_exact import exact_lml
from streamgp.kernels import Constant, Hyperparams, Matern32, SquaredExponential
from streamgp.linalg import gauss_kl, psd_factor
from streamgp.online_bounds import (
    PosteriorSummary,
    l_star,
    lower_bound,
    lower_bound_and_grad,
    next_summary,
    upper_bound,
    vips_threshold,
)
from streamgp.selection import greedy_order
from streamgp.svgp import optimal_qb


def first_batch(seed, n=50):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 10, size=(n, 1))
    y = sine(X[:, 0]) + 0.3 * rng.standard_normal(n)
    return X, y, Hyperparams(SquaredExponential(1.0, 0.5), 0.2)


def test_empty_summary_saturated_is_exact():
    X, y, th = first_batch(0)
    b = lower_bound(None, X, y, X, th)
    lml = exact_lml(X, y, th)
    assert abs(b.total - lml) <= 1e-6 * abs(lml)
    assert b.trace_f == 0.0 and b.trace_a == 0.0 and b.delta == 0.0


def test_breakdown_sums_to_total():
    s, X, y, th = two_step_instance(0)
    b = lower_bound(s, X, y, np.vstack([s.Z, X[:5]]), th)
    assert abs(b.fit_term + b.delta + b.trace_a + b.trace_f - b.total) <= 1e-12 * max(1, abs(b.total))
    assert b.trace_f <= 0 and b.trace_a <= 0


@pytest.mark.parametrize("seed", range(4))
def test_matches_naive_dense(seed):
    s, X, y, th = two_step_instance(seed, n2=30, m_a=4)
    Z = np.vstack([s.Z, X[:6]])
    b = lower_bound(s, X, y, Z, th)
    total, fit, delta, ta, tf = O.lower_bound_dense(s, X, y, Z, th)
    assert b.total == pytest.approx(total, abs=1e-8)
    assert b.fit_term == pytest.approx(fit, abs=1e-8)
    assert b.delta == pytest.approx(delta, abs=1e-8)
    assert b.trace_a == pytest.approx(ta, abs=1e-8)
    assert b.trace_f == pytest.approx(tf, abs=1e-8)


def test_lower_bound_without_old_inducing_points():
    s, X, y, th = two_step_instance(7)
    Z = X[:8]
    assert lower_bound(s, X, y, Z, th).total == pytest.approx(O.lower_bound_dense(s, X, y, Z, th)[0], abs=1e-8)


def test_empty_inducing_set_rejected():
    X, y, th = first_batch(1)
    with pytest.raises(DimensionMismatch):
        lower_bound(None, X, y, np.zeros((0, 1)), th)


def test_l_star_cases():
    X, y, th = first_batch(2, n=20)
    assert l_star(None, X, y, th) == pytest.approx(exact_lml(X, y, th), rel=1e-10)
    h = Hyperparams(SquaredExponential(1.0, 1.0), 1.0)
    assert l_star(None, np.zeros((1, 1)), [0.0], h) == pytest.approx(-0.5 * np.log(4 * np.pi))


@pytest.mark.parametrize("seed", range(4))
def test_l_star_consistency(seed):
    s, X, y, th = two_step_instance(seed)
    ls = l_star(s, X, y, th)
    assert ls == pytest.approx(lower_bound(s, X, y, np.vstack([s.Z, X]), th).total, abs=1e-8)
    assert ls == pytest.approx(O.l_star_dense(s, X, y, th), abs=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_upper_bound_matches_dense(seed):
    X, y, th = first_batch(seed, n=20)
    assert upper_bound(None, X, y, X[:5], th) == pytest.approx(O.upper_bound_dense(None, X, y, X[:5], th), abs=1e-8)
    s, X, y, th = two_step_instance(seed)
    Zu = np.vstack([s.Z, X[:7]])
    assert upper_bound(s, X, y, Zu, th) == pytest.approx(O.upper_bound_dense(s, X, y, Zu, th), abs=1e-8)


def test_upper_bound_at_full_set_is_l_star():
    s, X, y, th = two_step_instance(3)
    assert upper_bound(s, X, y, np.vstack([s.Z, X]), th) == pytest.approx(l_star(s, X, y, th), abs=1e-8)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), m_a=st.integers(1, 8), n2=st.integers(5, 40))
def test_sandwich_along_greedy_path(seed, m_a, n2):
    s, X, y, th = two_step_instance(seed, n2=n2, m_a=m_a)
    ls = l_star(s, X, y, th)
    order = greedy_order(X, th.kernel, s.Z)
    prev = -np.inf
    for k in range(len(order) + 1):
        Z = np.vstack([s.Z, X[order[:k]]])
        lo = lower_bound(s, X, y, Z, th).total
        up = upper_bound(s, X, y, Z, th)
        assert lo <= ls + 1e-8
        assert ls <= up + 1e-8
        assert lo >= prev - 1e-6
        prev = lo


@pytest.mark.parametrize("seed", range(3))
def test_kl_identity(seed):
    s, X, y, th = two_step_instance(seed, n2=25, m_a=5, kernel=SquaredExponential(1.0, 0.15))
    ls = l_star(s, X, y, th)
    for k in (0, 6, 15):
        Z = np.vstack([s.Z, X[:k]])
        q = optimal_qb(s, X, y, Z, th)
        m0, c0 = O.q_n_on(s, X, Z, th, q.m, q.S)
        m1, c1 = O.q_star_on(s, X, y, th)
        gap = ls - lower_bound(s, X, y, Z, th).total
        assert gap == pytest.approx(gauss_kl(m0, c0, m1, c1), abs=1e-6)


@pytest.mark.parametrize("kernel", [SquaredExponential(1.3, 0.4), Matern32(0.8, 0.6),
                                    Constant(2.0) + Matern32(0.8, 0.6)])
def test_gradient_matches_finite_differences(kernel):
    s, X, y, _ = two_step_instance(11)
    th = Hyperparams(kernel, 0.15)
    Z = np.vstack([s.Z, X[:8]])
    _, g = lower_bound_and_grad(s, X, y, Z, th)
    v = th.to_vector()
    for i in range(len(v)):
        e = np.zeros_like(v)
        e[i] = 1e-5
        fd = (lower_bound(s, X, y, Z, th.from_vector(v + e)).total
              - lower_bound(s, X, y, Z, th.from_vector(v - e)).total) / 2e-5
        assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_threshold():
    assert vips_threshold(-100.0, -300.0, 0.05) == pytest.approx(10.0)
    assert vips_threshold(-100.0, -300.0, 0.0) == 0.0
    assert vips_threshold(-300.0, -100.0, 0.05) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        vips_threshold(1.0, 0.0, -0.1)


def test_summary_reconstruction_and_pseudo_data():
    s, X, y, th = two_step_instance(4)
    m, S = s.reconstruct()
    np.testing.assert_allclose(m, s.mean, atol=1e-6)
    np.testing.assert_allclose(S, s.cov, atol=1e-6)
    D, ya, delta = O.pseudo(s)
    np.testing.assert_allclose(s.pseudo_targets, ya, atol=1e-8)
    np.testing.assert_allclose(s.pseudo_noise, D, rtol=1e-6)
    assert s.delta == pytest.approx(delta, abs=1e-8)
    np.testing.assert_allclose(s.m_tilde, np.linalg.solve(s.prior_cov, s.mean), atol=1e-8)


def test_summary_from_moments_matches_solved_form():
    s, X, y, th = two_step_instance(5)
    raw = PosteriorSummary.build(s.Z, s.mean, s.cov, th, prior_cov=s.prior_cov)
    np.testing.assert_allclose(raw.precision_gain, s.precision_gain, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(raw.natural_mean, s.natural_mean, rtol=1e-6)
    assert raw.log_det_ratio == pytest.approx(s.log_det_ratio, abs=1e-8)
    assert raw.delta == pytest.approx(s.delta, abs=1e-6)


def test_uninformative_summary_is_clamped():
    Z = np.linspace(0, 1, 3)[:, None]
    th = Hyperparams(SquaredExponential(1.0, 1.0), 0.1)
    K = psd_factor(th.kernel.matrix(Z)).matrix()
    s = PosteriorSummary.build(Z, np.zeros(3), K, th, prior_cov=K)
    assert s.n_clamped == 3
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, size=(10, 1))
    y = rng.standard_normal(10)
    # no information carried: the bound equals the batch-only bound
    b0 = lower_bound(None, X, y, X[:4], th).total
    b1 = lower_bound(s, X, y, X[:4], th).total
    assert b1 == pytest.approx(b0, abs=1e-6)


def test_next_summary_chains():
    s, X, y, th = two_step_instance(6)
    Z = np.vstack([s.Z, X[:5]])
    nxt = next_summary(s, X, y, Z, th)
    q = optimal_qb(s, X, y, Z, th)
    np.testing.assert_allclose(nxt.mean, q.m)
    np.testing.assert_allclose(nxt.cov, q.S)
    m, S = nxt.reconstruct()
    np.testing.assert_allclose(m, q.m, atol=1e-6)
    np.testing.assert_allclose(S, q.S, atol=1e-6)
