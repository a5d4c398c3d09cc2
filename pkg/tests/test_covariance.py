import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iee import (
    IndefiniteCovariance,
    Linear,
    MissingGroup,
    NoPartition,
    RepairPolicy,
    build_dataset,
    build_grouping,
    detect_partition,
    estimate_componentwise,
    estimate_matrixwise,
    matrixwise_by_visit_set,
    repair_pd,
)
from oracles import componentwise_loop_oracle, random_dataset


def design(visit_sets, rng, p=2):
    rows = []
    for i, vs in enumerate(visit_sets, start=1):
        x = rng.normal()
        for j in vs:
            rows.append((i, j, float(rng.normal(scale=2.0)), 1.0, x + 0.1 * j))
    return build_dataset(rows, intercept=True)


def example2(n, rng):
    k = int(np.ceil(0.4 * n))
    return design([(1, 3, 5)] * k + [(2, 4)] * (n - k), rng)


def test_zero_residuals():
    ds = build_dataset([(i, j, 2.0, 1.0) for i in range(3) for j in (1, 2)])
    g = build_grouping(ds)
    est = estimate_componentwise(ds, g, Linear(), [2.0])
    assert np.array_equal(est.v, np.zeros(g.R))
    assert all(est.repaired.values())
    for M in est.assembled.matrices():
        assert np.allclose(M, 1e-8 * np.eye(2), rtol=1e-12, atol=0)
    with pytest.raises(IndefiniteCovariance) as err:
        estimate_componentwise(ds, g, Linear(), [2.0], RepairPolicy(mode="error"))
    assert err.value.subject == 0


def test_balanced_matches_pooled_outer_product():
    rng = np.random.default_rng(1)
    ds = design([(1, 2, 3)] * 9, rng)
    beta = np.array([0.3, -0.2])
    g = build_grouping(ds)
    est = estimate_componentwise(ds, g, Linear(), beta)
    R = np.stack([s.y - s.X @ beta for s in ds.subjects])
    pooled = R.T @ R / ds.n
    for (j, k, _), val in zip(g.keys, est.v):
        assert val == pytest.approx(pooled[j - 1, k - 1], rel=1e-14, abs=1e-15)


def test_toy_brute_force():
    rows = [
        (1, 1, 1.5, 1.0), (1, 2, -0.5, 1.0), (1, 3, 2.0, 1.0),
        (2, 1, 0.25, 1.0), (2, 3, -1.0, 1.0),
        (3, 2, 3.0, 1.0), (3, 3, 0.75, 1.0),
    ]
    ds = build_dataset(rows)
    g = build_grouping(ds)
    beta = np.array([0.5])
    est = estimate_componentwise(ds, g, Linear(), beta)
    ref = componentwise_loop_oracle(ds, g, lambda s: s.y - s.X @ beta)
    assert np.max(np.abs(est.v - ref)) <= 1e-14
    # spot check by hand: v(1,3) averages subjects 1 and 2
    assert est.as_dict()[(1, 3, 1)] == pytest.approx(((1.0 * 1.5) + (-0.25 * -1.5)) / 2, abs=1e-15)


def test_matrixwise_example2_blocks():
    rng = np.random.default_rng(2)
    ds = example2(10, rng)
    beta = np.array([0.1, 0.2])
    est = estimate_matrixwise(ds, None, Linear(), beta)
    for block in ((1, 3, 5), (2, 4)):
        members = [s for s in ds.subjects if tuple(s.visits) == block]
        R = np.stack([s.y - s.X @ beta for s in members])
        avg = R.T @ R / len(members)
        for s in members:
            assert np.allclose(est.assembled[s.subject_id], avg, rtol=1e-14, atol=1e-15)


def test_matrixwise_single_subject_rank_one():
    rng = np.random.default_rng(3)
    ds = design([(1, 2, 3), (4, 5)], rng)
    beta = np.zeros(2)
    per_set = matrixwise_by_visit_set(ds, Linear(), beta)
    for s in ds.subjects:
        n, M = per_set[tuple(int(j) for j in s.visits)]
        assert n == 1
        assert np.array_equal(M, np.outer(s.y, s.y))
        assert np.linalg.matrix_rank(M) == 1


def test_matrixwise_requires_partition():
    ds = design([(1, 2), (1, 3)], np.random.default_rng(4))
    with pytest.raises(NoPartition):
        estimate_matrixwise(ds, None, Linear(), np.zeros(2))


def test_grouping_must_match_dataset():
    rng = np.random.default_rng(5)
    a = design([(1, 2), (1, 3)], rng)
    b = design([(1, 2), (2, 3)], rng)
    with pytest.raises(MissingGroup):
        estimate_componentwise(b, build_grouping(a), Linear(), np.zeros(2))


def test_repair_no_op_is_bit_identical():
    V = np.array([[2.0, 0.3], [0.3, 1.0]])
    out = repair_pd(V)
    assert np.array_equal(out, V)


def test_repair_indefinite_example():
    V = np.array([[1.0, 2.0], [2.0, 1.0]])
    out = repair_pd(V, RepairPolicy(pd_floor=1e-8))
    w = np.linalg.eigvalsh(out)
    assert np.array_equal(out, out.T)
    assert w[0] == pytest.approx(3e-8, rel=1e-6)
    assert w[1] == pytest.approx(3.0, rel=1e-12)
    # oracle: rebuild from the eigendecomposition by hand
    q = np.array([[1.0, -1.0], [1.0, 1.0]]) / np.sqrt(2)
    assert np.allclose(out, q @ np.diag([3.0, 3e-8]) @ q.T, atol=1e-14)


def test_repair_zero_matrix():
    out = repair_pd(np.zeros((3, 3)))
    assert np.allclose(out, 1e-8 * np.eye(3), rtol=1e-12, atol=0)


def test_repair_error_mode():
    with pytest.raises(IndefiniteCovariance):
        repair_pd(np.array([[1.0, 2.0], [2.0, 1.0]]), RepairPolicy(mode="error"))
    V = np.eye(2)
    assert repair_pd(V, RepairPolicy(mode="error")) is V


def test_repair_policy_validation():
    with pytest.raises(ValueError):
        RepairPolicy(pd_floor=1.0)
    with pytest.raises(ValueError):
        RepairPolicy(mode="shrink")


# ---------------------------------------------------------------- properties

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_componentwise_equals_matrixwise_on_partition(seed):
    rng = np.random.default_rng(seed)
    ds = example2(int(rng.integers(5, 40)), rng)
    assert detect_partition(ds) is not None
    beta = rng.normal(size=2)
    comp = estimate_componentwise(ds, build_grouping(ds), Linear(), beta)
    mat = estimate_matrixwise(ds, detect_partition(ds), Linear(), beta)
    for a, b in zip(comp.assembled.matrices(), mat.assembled.matrices()):
        assert np.max(np.abs(a - b)) <= 1e-14


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_componentwise_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng)
    beta = rng.normal(size=ds.p)
    g = build_grouping(ds)
    est = estimate_componentwise(ds, g, Linear(), beta)
    ref = componentwise_loop_oracle(ds, g, lambda s: s.y - s.X @ beta)
    assert np.allclose(est.v, ref, rtol=1e-13, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0.1, 10))
def test_quadratic_scale_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng)
    beta = rng.normal(size=ds.p)
    g = build_grouping(ds)
    v = estimate_componentwise(ds, g, Linear(), beta).v
    vc = estimate_componentwise(ds.scaled(c), g, Linear(), c * beta).v
    assert np.allclose(vc, c * c * v, rtol=1e-12, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_assembled_symmetric_and_diagonal_nonnegative(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng)
    g = build_grouping(ds)
    est = estimate_componentwise(ds, g, Linear(), rng.normal(size=ds.p))
    assert np.all(est.v[g.diagonal] >= 0)
    for M in est.assembled.matrices():
        assert np.array_equal(M, M.T)
        assert np.linalg.eigvalsh(M)[0] > 0
