import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamgp.errors import DimensionMismatch
from streamgp.kernels import (
    Constant,
    Hyperparams,
    Matern32,
    SquaredExponential,
    Sum,
    eval_diag,
    eval_matrix,
    kernel_from_dict,
    param_gradients,
)
from streamgp.linalg import psd_factor

FAMILIES = [
    SquaredExponential(1.3, 0.7),
    Matern32(0.8, 1.1),
    Constant(2.0),
    Sum(Constant(0.5), Matern32(1.5, 0.4)),
    SquaredExponential(1.0, np.array([0.5, 2.0])),
    Matern32(2.0, np.array([0.3, 0.9])),
]


def scalar_se(x, x2, v, ls):
    return v * np.exp(-0.5 * np.sum(((x - x2) / ls) ** 2))


def scalar_m32(x, x2, v, ls):
    r = np.sqrt(np.sum(((x - x2) / ls) ** 2))
    return v * (1 + np.sqrt(3) * r) * np.exp(-np.sqrt(3) * r)


def test_se_diagonal_and_closed_form():
    k = SquaredExponential(1.0, 1.0)
    X = np.array([[0.0], [np.sqrt(2.0)]])
    K = eval_matrix(k, X, X)
    np.testing.assert_allclose(np.diag(K), 1.0)
    assert K[0, 1] == pytest.approx(np.exp(-1.0))


def test_constant_plus_matern_grid():
    k = Constant(500.0) + Matern32(2.0, 0.7)
    X = np.array([[0.0, 0.0], [0.3, -0.2], [1.5, 2.0]])
    K = eval_matrix(k, X, X)
    for i in range(3):
        for j in range(3):
            assert K[i, j] == pytest.approx(500.0 + scalar_m32(X[i], X[j], 2.0, 0.7), rel=1e-14)


def test_ard_matches_scalar():
    k = SquaredExponential(1.7, np.array([0.5, 2.0]))
    rng = np.random.default_rng(0)
    X, X2 = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
    K = k.matrix(X, X2)
    ref = [[scalar_se(a, b, 1.7, np.array([0.5, 2.0])) for b in X2] for a in X]
    np.testing.assert_allclose(K, ref, rtol=1e-13)


def test_diag_values():
    assert np.all(eval_diag(SquaredExponential(2.5, 1.0), np.zeros((4, 1))) == 2.5)
    assert np.all(eval_diag(SquaredExponential(1.0, 1.0) + Constant(3.0), np.zeros((4, 1))) == 4.0)


@pytest.mark.parametrize("k", FAMILIES)
def test_diag_consistent_with_matrix(k):
    X = np.random.default_rng(1).standard_normal((7, 2))
    np.testing.assert_allclose(eval_diag(k, X), np.diag(eval_matrix(k, X)), atol=1e-12)
    assert np.allclose(eval_diag(k, X), k.total_variance)


def test_dimension_mismatch():
    k = SquaredExponential(1.0, np.array([1.0, 2.0]))
    with pytest.raises(DimensionMismatch):
        k.matrix(np.zeros((2, 3)))
    with pytest.raises(DimensionMismatch):
        SquaredExponential().matrix(np.zeros((2, 1)), np.zeros((2, 2)))


def test_invalid_parameters():
    with pytest.raises(ValueError):
        SquaredExponential(-1.0, 1.0)
    with pytest.raises(ValueError):
        Matern32(1.0, np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        Hyperparams(SquaredExponential(), 1e-12)


def test_se_gradient_identities():
    k = SquaredExponential(1.3, 0.6)
    X = np.random.default_rng(2).standard_normal((5, 1))
    g = param_gradients(k, X, X)
    np.testing.assert_allclose(g[0], k.matrix(X))
    np.testing.assert_allclose(np.diag(g[1]), 0.0)


@pytest.mark.parametrize("k", FAMILIES)
def test_gradients_match_finite_differences(k):
    rng = np.random.default_rng(3)
    X, X2 = rng.standard_normal((8, 2)), rng.standard_normal((8, 2))
    grads = param_gradients(k, X, X2)
    v = k.log_params()
    assert len(grads) == len(v) == k.n_params
    for i in range(len(v)):
        e = np.zeros_like(v)
        e[i] = 1e-5
        fd = (k.with_log_params(v + e).matrix(X, X2) - k.with_log_params(v - e).matrix(X, X2)) / 2e-5
        assert np.linalg.norm(grads[i] - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)
        dg = k.diag_param_gradients(X)[i]
        fdd = (k.with_log_params(v + e).diag(X) - k.with_log_params(v - e).diag(X)) / 2e-5
        np.testing.assert_allclose(dg, fdd, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 100), seed=st.integers(0, 2**31 - 1), fam=st.sampled_from(FAMILIES[:2]))
def test_matrix_psd(n, seed, fam):
    X = np.random.default_rng(seed).uniform(-5, 5, size=(n, 2))
    f = psd_factor(fam.matrix(X))
    assert f.jitter_used <= 1e-6 * fam.variance


@pytest.mark.parametrize("k", FAMILIES)
def test_dict_roundtrip(k):
    h = Hyperparams(k, 0.3)
    h2 = Hyperparams.from_dict(h.to_dict())
    np.testing.assert_allclose(h2.to_vector(), h.to_vector())
    X = np.random.default_rng(5).standard_normal((4, 2))
    np.testing.assert_allclose(h2.kernel.matrix(X), k.matrix(X))


def test_vector_roundtrip_noise_last():
    h = Hyperparams(SquaredExponential(2.0, 0.5), 0.1)
    v = h.to_vector()
    assert v[-1] == pytest.approx(np.log(0.1))
    assert h.from_vector(v).noise_variance == pytest.approx(0.1)
    assert h.from_vector(np.append(v[:-1], -40.0)).noise_variance == pytest.approx(1e-8)


def test_kernel_from_dict_errors():
    with pytest.raises(ValueError):
        kernel_from_dict({"family": "rbfish"})
    with pytest.raises(ValueError):
        kernel_from_dict({"family": "sum", "children": [{"family": "se"}]})
