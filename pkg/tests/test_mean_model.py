import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from iee import Custom, Linear, LogisticRandomIntercept, NonFiniteMean
from iee.mean_model import evaluate_jacobian, evaluate_mean, fd_step
from oracles import central_difference, logistic_ri_mean_oracle


def test_linear_mean():
    X = np.array([[1.0, 2.0], [1.0, 3.0]])
    assert np.array_equal(evaluate_mean(Linear(), X, [0.5, 1.0]), [2.5, 3.5])


def test_linear_jacobian_is_x():
    X = np.random.default_rng(0).normal(size=(4, 3))
    for beta in ([0, 0, 0], [5, -1, 2]):
        assert np.array_equal(evaluate_jacobian(Linear(), X, beta), X)


def test_logistic_sigma_zero_at_zero_is_half():
    X = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    mu = evaluate_mean(LogisticRandomIntercept(sigma=0.0), X, [0.0, 3.0])
    assert np.allclose(mu, 0.5, atol=1e-15)


def test_logistic_matches_adaptive_integration():
    X = np.array([[1.0, 2.0]])
    mu = evaluate_mean(LogisticRandomIntercept(sigma=1.0), X, [0.0, 1.0])
    assert abs(mu[0] - logistic_ri_mean_oracle(2.0, 1.0)) < 1e-8


@pytest.mark.parametrize("eta,sigma", [(-4.0, 0.5), (0.3, 1.0), (6.0, 1.0), (-10.0, 1.0), (9.0, 0.2)])
def test_logistic_default_order_accuracy(eta, sigma):
    X = np.array([[1.0]])
    mu = evaluate_mean(LogisticRandomIntercept(sigma=sigma), X, [eta])
    assert abs(mu[0] - logistic_ri_mean_oracle(eta, sigma)) < 1e-8


@pytest.mark.parametrize("eta,sigma", [(0.3, 2.0), (6.0, 3.0), (-10.0, 3.0)])
def test_logistic_large_sigma_needs_more_nodes(eta, sigma):
    # the logistic function has poles at +-i*pi, so the rule converges
    # slowly once sigma is large; 20 nodes are only good to about 1e-5 here
    X = np.array([[1.0]])
    ref = logistic_ri_mean_oracle(eta, sigma)
    coarse = evaluate_mean(LogisticRandomIntercept(sigma=sigma), X, [eta])[0]
    fine = evaluate_mean(LogisticRandomIntercept(sigma=sigma, quadrature_order=120), X, [eta])[0]
    assert abs(coarse - ref) < 1e-4
    assert abs(fine - ref) < 1e-8


def test_logistic_jacobian_sigma_zero_chain_rule():
    X = np.array([[1.0, 0.7], [1.0, -1.2]])
    beta = np.array([0.3, 0.8])
    eta = X @ beta
    h = expit(eta)
    expected = (h * (1 - h))[:, None] * X
    J = evaluate_jacobian(LogisticRandomIntercept(sigma=0.0), X, beta)
    assert np.allclose(J, expected, rtol=1e-14, atol=0)


def test_logistic_validation():
    with pytest.raises(ValueError):
        LogisticRandomIntercept(sigma=-1.0)
    with pytest.raises(ValueError):
        LogisticRandomIntercept(sigma=float("inf"))
    with pytest.raises(ValueError):
        LogisticRandomIntercept(quadrature_order=0)


def test_custom_finite_difference_matches_central_differences():
    fns = {
        1: lambda x, b: np.exp(b[0] + b[1] * x[0, 1]),
        2: lambda x, b: b[0] * np.sin(b[1] * x[1, 1]),
    }
    model = Custom(fns)
    X = np.array([[1.0, 0.4], [1.0, -0.9]])
    beta = np.array([0.2, 1.3])
    visits = np.array([1, 2])
    J = evaluate_jacobian(model, X, beta, visits)
    ref = central_difference(lambda b: evaluate_mean(model, X, b, visits), beta)
    assert np.allclose(J, ref, rtol=1e-5, atol=1e-9)


def test_custom_with_derivatives_used():
    fns = {1: lambda x, b: b[0] ** 2}
    ders = {1: lambda x, b: np.array([2 * b[0]])}
    J = evaluate_jacobian(Custom(fns, ders), np.ones((1, 1)), [3.0], [1])
    assert np.array_equal(J, [[6.0]])


def test_custom_non_finite_raises():
    model = Custom({1: lambda x, b: np.exp(b[0])})
    with np.errstate(over="ignore"), pytest.raises(NonFiniteMean):
        evaluate_mean(model, np.ones((1, 1)), [1e4], [1])


def test_fd_step_scales_with_beta():
    eps3 = np.finfo(float).eps ** (1 / 3)
    assert np.allclose(fd_step(np.array([0.1, -20.0])), [eps3, 20 * eps3])


# ---------------------------------------------------------------- properties

finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(finite, finite, st.floats(0, 3), st.floats(-2, 2))
def test_logistic_jacobian_second_order_consistent(b0, b1, sigma, x):
    model = LogisticRandomIntercept(sigma=sigma)
    X = np.array([[1.0, x]])
    beta = np.array([b0, b1])
    J = evaluate_jacobian(model, X, beta)
    errs = []
    for h in (1e-2, 5e-3):
        ref = central_difference(lambda b: evaluate_mean(model, X, b), beta, h)
        errs.append(np.max(np.abs(J - ref)))
    assert errs[0] < 1e-4
    # second order: halving the step cuts the error about fourfold
    assert errs[1] <= errs[0] / 3 + 1e-12


@settings(max_examples=60, deadline=None)
@given(finite, finite, st.floats(0, 3), st.floats(-3, 3))
def test_logistic_mean_in_unit_interval_and_monotone(b0, b1, sigma, x):
    model = LogisticRandomIntercept(sigma=sigma)
    X = np.array([[1.0, x]])
    lo = evaluate_mean(model, X, [b0, b1])[0]
    hi = evaluate_mean(model, X, [b0 + 0.5, b1])[0]
    assert 0.0 < lo < 1.0
    assert hi >= lo


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3), finite)
def test_linear_additive_homogeneous(a, b, c):
    X = np.random.default_rng(1).normal(size=(4, 3))
    a, b = np.array(a), np.array(b)
    m = Linear()
    assert np.allclose(m.mean(X, a + b), m.mean(X, a) + m.mean(X, b), atol=1e-12)
    assert np.allclose(m.mean(X, c * a), c * m.mean(X, a), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(finite, finite)
def test_custom_fd_jacobian_first_order(b0, b1):
    model = Custom({1: lambda x, b: np.tanh(b[0] + b[1] * x[0, 1]) + b[1] ** 3})
    X = np.array([[1.0, 0.6]])
    beta = np.array([b0, b1])
    J = evaluate_jacobian(model, X, beta, [1])
    t = np.tanh(b0 + b1 * 0.6)
    exact = np.array([[1 - t * t, 0.6 * (1 - t * t) + 3 * b1 * b1]])
    assert np.allclose(J, exact, rtol=1e-5, atol=1e-7)
