import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iee import (
    CovarianceSet,
    GeeOptions,
    IndefiniteCovariance,
    Linear,
    LogisticRandomIntercept,
    NewtonDiverged,
    NewtonSingular,
    SingularInformation,
    blue_linear,
    build_dataset,
    estimating_function,
    exact_blue_covariance,
    generate,
    model_based_covariance,
    ols_linear,
    solve_gee,
)
from iee.simulation import ScenarioSpec
from oracles import ols_pinv_oracle, random_dataset, random_pd_set, stacked, wls_oracle


def test_scalar_case():
    ds = build_dataset([(1, 1, 3.0, 1.0)])
    V = CovarianceSet.from_matrices(ds, [np.array([[2.0]])])
    assert blue_linear(ds, V)[0] == pytest.approx(3.0, abs=1e-15)


def test_two_subjects_explicit_inversion():
    rows = [
        ("a", 1, 1.0, 1.0, 0.5), ("a", 2, 2.5, 1.0, -1.0),
        ("b", 1, -0.3, 1.0, 2.0), ("b", 2, 0.8, 1.0, 1.5),
    ]
    ds = build_dataset(rows)
    Va = np.array([[2.0, 0.5], [0.5, 1.0]])
    Vb = np.array([[1.0, -0.3], [-0.3, 3.0]])
    V = CovarianceSet.from_matrices(ds, {"a": Va, "b": Vb})

    def inv2(M):
        (a, b), (c, d) = M
        return np.array([[d, -b], [-c, a]]) / (a * d - b * c)

    A = np.zeros((2, 2))
    r = np.zeros(2)
    for sid, Vi in (("a", Va), ("b", Vb)):
        s = ds[sid]
        W = inv2(Vi)
        A += s.X.T @ W @ s.X
        r += s.X.T @ W @ s.y
    expected = inv2(A) @ r
    assert np.max(np.abs(blue_linear(ds, V) - expected)) <= 1e-12


def test_identity_matches_normal_equations():
    ds = random_dataset(np.random.default_rng(11), n=15, p=3)
    X, y = stacked(ds)
    expected = np.linalg.solve(X.T @ X, X.T @ y)
    got = solve_gee(ds, Linear(), CovarianceSet.identity(ds), beta0=np.full(3, 7.0))
    assert np.max(np.abs(got - expected)) <= 1e-12


def test_ols_is_blue_with_identity():
    ds = random_dataset(np.random.default_rng(12))
    assert np.array_equal(ols_linear(ds), blue_linear(ds, CovarianceSet.identity(ds)))


def test_intercept_only_is_grand_mean():
    ds = random_dataset(np.random.default_rng(13), p=1)
    _, y = stacked(ds)
    assert ols_linear(ds)[0] == pytest.approx(y.mean(), abs=1e-13)


def test_three_subject_pinv():
    ds = random_dataset(np.random.default_rng(14), n=3, p=2, b=4, min_visits=2)
    assert np.max(np.abs(ols_linear(ds) - ols_pinv_oracle(ds))) <= 1e-12


def test_singular_information():
    rows = [(i, j, float(i * j), 1.0, 2.0) for i in range(1, 4) for j in (1, 2)]
    ds = build_dataset(rows)
    with pytest.raises(SingularInformation):
        blue_linear(ds, CovarianceSet.identity(ds))
    with pytest.raises(NewtonSingular):
        solve_gee(ds, Linear(), CovarianceSet.identity(ds))
    beta = solve_gee(ds, Linear(), CovarianceSet.identity(ds), opts=GeeOptions(ridge=1e-6))
    assert np.all(np.isfinite(beta))


def test_covariance_set_validation():
    ds = build_dataset([(1, 1, 0.0, 1.0), (1, 2, 0.0, 1.0)])
    with pytest.raises(ValueError, match="symmetric"):
        CovarianceSet.from_matrices(ds, [np.array([[1.0, 0.1], [0.2, 1.0]])])
    with pytest.raises(ValueError, match="shape"):
        CovarianceSet.from_matrices(ds, [np.eye(3)])
    bad = CovarianceSet.from_matrices(ds, [np.array([[1.0, 2.0], [2.0, 1.0]])])
    with pytest.raises(IndefiniteCovariance, match="subject 1"):
        blue_linear(ds, bad)


def logistic_data(n, seed, sigma=1.0, beta=(-0.5, 0.8)):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        x = rng.normal()
        u = sigma * rng.normal()
        for j in (1, 2, 3):
            if j > 1 and rng.random() < 0.2:
                continue
            p = 1 / (1 + np.exp(-(beta[0] + beta[1] * x + u)))
            rows.append((i, j, float(rng.random() < p), 1.0, x))
    return build_dataset(rows, intercept=True)


def test_logistic_estimating_function_vanishes():
    ds = logistic_data(200, 5)
    model = LogisticRandomIntercept(sigma=1.0)
    V = CovarianceSet.identity(ds).scaled(0.25)
    beta = solve_gee(ds, model, V)
    assert np.max(np.abs(estimating_function(ds, model, beta, V))) < 1e-8
    assert abs(beta[1] - 0.8) < 0.5


def test_logistic_newton_budget():
    ds = logistic_data(50, 6)
    with pytest.raises(NewtonDiverged) as err:
        solve_gee(ds, LogisticRandomIntercept(), CovarianceSet.identity(ds), opts=GeeOptions(max_newton_iters=1))
    assert err.value.last_beta is not None


def test_gee_options_validation():
    with pytest.raises(ValueError):
        GeeOptions(max_newton_iters=0)
    with pytest.raises(ValueError):
        GeeOptions(beta_tol=0)
    with pytest.raises(ValueError):
        GeeOptions(ridge=-1)


def test_model_based_covariance_classical_ols():
    rng = np.random.default_rng(21)
    rows = [(i, j, float(rng.normal()), 1.0, float(rng.normal())) for i in range(10) for j in (1, 2, 3)]
    ds = build_dataset(rows)
    sigma2 = 2.5
    X, _ = stacked(ds)
    cov = model_based_covariance(ds, Linear(), np.zeros(2), CovarianceSet.identity(ds).scaled(sigma2))
    assert np.allclose(cov, sigma2 * np.linalg.inv(X.T @ X), rtol=1e-12, atol=0)


def test_model_based_covariance_matches_blue_covariance():
    ds, true_V = generate(ScenarioSpec.for_case(1, 1))
    a = model_based_covariance(ds, Linear(), np.array([3.0, -1.0]), true_V)
    b = exact_blue_covariance(ds, true_V)
    assert np.max(np.abs(a - b)) <= 1e-12


# ---------------------------------------------------------------- properties

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_linear_solve_equals_blue_and_oracle(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng)
    V = random_pd_set(ds, rng)
    try:
        ref = wls_oracle(ds, V)
        blue = blue_linear(ds, V)
    except (SingularInformation, np.linalg.LinAlgError):
        return
    assert np.array_equal(solve_gee(ds, Linear(), V, beta0=rng.normal(size=ds.p)), blue)
    assert np.max(np.abs(blue - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0.01, 100))
def test_weight_invariance_and_response_scaling(seed, c):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n=12, p=2)
    V = random_pd_set(ds, rng)
    try:
        base = blue_linear(ds, V)
    except SingularInformation:
        return
    scale = max(1.0, np.max(np.abs(base)))
    assert np.max(np.abs(blue_linear(ds, V.scaled(c)) - base)) <= 1e-14
    assert np.allclose(blue_linear(ds.scaled(c), V), c * base, rtol=1e-10, atol=1e-12 * c * scale)
    assert np.allclose(ols_linear(ds.scaled(c)), c * ols_linear(ds), rtol=1e-10, atol=1e-12 * c * scale)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_model_based_covariance_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng)
    V = random_pd_set(ds, rng)
    try:
        cov = model_based_covariance(ds, Linear(), None, V)
    except SingularInformation:
        return
    assert np.array_equal(cov, cov.T)
    assert np.linalg.eigvalsh(cov)[0] >= 0
