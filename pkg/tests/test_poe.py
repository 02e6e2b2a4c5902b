import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aircomp_gpr.gp import Hyperparams, LocalDataset, gpr_predict, kernel_matrix, log_marginal_likelihood, psd_factor
from aircomp_gpr.poe import (
    VARIANCE_FLOOR,
    ExpertPool,
    LocalPrediction,
    ideal_dgpr_predict,
    local_likelihood,
    local_predict,
    partition_dataset,
    poe_fuse,
    sum_local_likelihoods,
)

from test_gp import dense_predict


def gp_sample(n, theta, seed, span=(0.0, 100.0)):
    rng = np.random.default_rng(seed)
    X = rng.uniform(*span, (n, 1))
    f = psd_factor(kernel_matrix(X, theta)).lower @ rng.standard_normal(n)
    return X, f + theta.sigma_eps * rng.standard_normal(n)


def test_partition_single_expert_is_identity():
    ds = LocalDataset(np.arange(7.0), np.arange(7.0) ** 2)
    pool = partition_dataset(ds, 1)
    assert pool.M == 1
    np.testing.assert_array_equal(pool.experts[0].inputs, ds.inputs)
    np.testing.assert_array_equal(pool.experts[0].outputs, ds.outputs)


def test_partition_random_equal_sizes_and_multiset_union():
    rng = np.random.default_rng(0)
    ds = LocalDataset(rng.uniform(0, 1000, 128), rng.normal(size=128))
    pool = partition_dataset(ds, 4, "random", seed=3)
    assert pool.sizes == [32, 32, 32, 32]
    union = np.concatenate([e.outputs for e in pool.experts])
    assert Counter(union.tolist()) == Counter(ds.outputs.tolist())


def test_partition_spatial_blocks_at_order_statistics():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1000, 40)
    pool = partition_dataset(LocalDataset(x, x * 0.0), 4, "spatial-blocks")
    s = np.sort(x)
    for k, e in enumerate(pool.experts):
        np.testing.assert_array_equal(np.sort(e.inputs[:, 0]), s[10 * k : 10 * (k + 1)])


def test_partition_remainder_goes_to_last_and_errors():
    ds = LocalDataset(np.arange(10.0), np.zeros(10))
    assert partition_dataset(ds, 3, seed=0).sizes == [3, 3, 4]
    with pytest.raises(ValueError):
        partition_dataset(ds, 11)
    with pytest.raises(ValueError):
        partition_dataset(ds, 2, "diagonal")


def test_local_likelihood_examples():
    th = Hyperparams(1.5, 20.0, 0.2)
    X, y = gp_sample(30, th, 0)
    full = LocalDataset(X, y, 0.0)
    pool = partition_dataset(full, 1)
    assert local_likelihood(pool.experts[0], th) == log_marginal_likelihood(full, th)
    one = LocalDataset([[0.0]], [0.4], [0.1])
    v = th.psi1 + th.sigma_eps**2
    assert local_likelihood(one, th) == pytest.approx(-(0.3**2) / (2 * v) - 0.5 * math.log(2 * math.pi * v))


def test_sum_of_split_likelihoods_is_only_an_approximation():
    th = Hyperparams(1.0, 50.0, 0.05)
    X, y = gp_sample(40, th, 4)
    full = LocalDataset(X, y, 0.0)
    pool = partition_dataset(full, 2, "spatial-blocks")
    assert abs(sum_local_likelihoods(pool, th) - log_marginal_likelihood(full, th)) > 1e-3


def test_local_predict_matches_gpr_and_floors_variance():
    th = Hyperparams(1.0, 5.0, 0.0)
    ds = LocalDataset([[0.0], [2.0]], [1.0, 3.0], 0.0)
    lp = local_predict(ds, th, [0.0, 0.0], [[0.0], [1.0]])
    ref = gpr_predict(ds, th, [0.0, 0.0], [[0.0], [1.0]])
    np.testing.assert_array_equal(lp.mean, ref.mean)
    assert lp.variance[0] == VARIANCE_FLOOR
    far = local_predict(ds, th, [7.0], [[1e5]])
    assert far.mean[0] == pytest.approx(7.0) and far.variance[0] == pytest.approx(1.0)


def test_local_predict_per_expert_dense_oracle():
    rng = np.random.default_rng(9)
    th = Hyperparams(rng.uniform(0.5, 2), rng.uniform(1, 5), rng.uniform(0.1, 0.5))
    X, y = rng.uniform(0, 10, (8, 1)), rng.normal(size=8)
    pool = partition_dataset(LocalDataset(X, y, 0.0), 2, seed=1)
    Xs = rng.uniform(0, 10, (3, 1))
    for e in pool.experts:
        lp = local_predict(e, th, np.zeros(3), Xs)
        mean, var = dense_predict(e.inputs, e.outputs, e.prior_mean, th, Xs, np.zeros(3))
        np.testing.assert_allclose(lp.mean, mean, rtol=1e-8)
        np.testing.assert_allclose(lp.variance, var, rtol=1e-8)


def test_poe_fuse_examples():
    a = LocalPrediction([1.0, -2.0], [0.5, 3.0])
    single = poe_fuse([a])
    np.testing.assert_array_equal(single.mean, a.mean)
    np.testing.assert_array_equal(single.variance, a.variance)

    v = 2.0
    two = poe_fuse([LocalPrediction([1.0], [v]), LocalPrediction([4.0], [v])])
    assert two.mean[0] == pytest.approx(2.5) and two.variance[0] == pytest.approx(1.0)

    b = LocalPrediction([3.0], [0.7])
    vague = poe_fuse([b, LocalPrediction([100.0], [1e12])])
    assert vague.mean[0] == pytest.approx(3.0, abs=1e-6)
    assert vague.variance[0] == pytest.approx(0.7, abs=1e-6)

    with pytest.raises(ValueError):
        poe_fuse([])
    with pytest.raises(ValueError):
        LocalPrediction([1.0], [0.0])


local_preds = st.lists(
    st.tuples(st.floats(-100, 100), st.floats(1e-6, 1e4)), min_size=1, max_size=6
).map(lambda xs: [LocalPrediction([m], [v]) for m, v in xs])


@given(local_preds, st.randoms(use_true_random=False))
def test_poe_fuse_properties(locals_, rnd):
    fused = poe_fuse(locals_)
    shuffled = list(locals_)
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(poe_fuse(shuffled).mean, fused.mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(poe_fuse(shuffled).variance, fused.variance, rtol=1e-12)
    means = [lp.mean[0] for lp in locals_]
    assert fused.variance[0] <= min(lp.variance[0] for lp in locals_) * (1 + 1e-12)
    assert min(means) - 1e-9 <= fused.mean[0] <= max(means) + 1e-9


def test_ideal_dgpr_single_expert_equals_full_gpr():
    th = Hyperparams(1.2, 15.0, 0.1)
    X, y = gp_sample(25, th, 2)
    full = LocalDataset(X, y, 0.0)
    Xs = np.linspace(0, 100, 7)[:, None]
    res = ideal_dgpr_predict(partition_dataset(full, 1), th, [np.zeros(7)], Xs)
    ref = gpr_predict(full, th, np.zeros(7), Xs)
    np.testing.assert_array_equal(res.mean, ref.mean)
    np.testing.assert_array_equal(res.variance, ref.variance)


def test_ideal_dgpr_identical_experts():
    th = Hyperparams(1.0, 10.0, 0.2)
    X, y = gp_sample(10, th, 5)
    e = LocalDataset(X, y, 0.0)
    M = 3
    pool = ExpertPool([e] * M, 1)  # test-only overlap
    Xs = np.linspace(0, 100, 5)[:, None]
    res = ideal_dgpr_predict(pool, th, [np.zeros(5)] * M, Xs)
    one = local_predict(e, th, np.zeros(5), Xs)
    np.testing.assert_allclose(res.mean, one.mean, rtol=1e-12)
    np.testing.assert_allclose(res.variance, one.variance / M, rtol=1e-12)


def test_ideal_dgpr_order_invariant():
    th = Hyperparams(1.0, 10.0, 0.2)
    X, y = gp_sample(24, th, 6)
    pool = partition_dataset(LocalDataset(X, y, 0.0), 3, seed=0)
    Xs = np.linspace(0, 100, 6)[:, None]
    priors = [np.zeros(6)] * 3
    a = ideal_dgpr_predict(pool, th, priors, Xs)
    b = ideal_dgpr_predict(ExpertPool(pool.experts[::-1], 1), th, priors, Xs)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.variance, b.variance, rtol=1e-12)


@pytest.mark.slow
def test_ideal_poe_rmse_close_to_full_gpr():
    """Known hyperparameters, 100 GP draws: PoE RMSE within 30% of full GPR."""
    th = Hyperparams(1.0, 100.0 / math.log(2), 0.05)
    full_sq, poe_sq = [], []
    for seed in range(100):
        X, y = gp_sample(138, th, 1000 + seed, span=(1.0, 1000.0))
        tr, te = slice(0, 128), slice(128, None)
        full = LocalDataset(X[tr], y[tr], 0.0)
        pool = partition_dataset(full, 4, seed=seed)
        a = gpr_predict(full, th, 0.0, X[te])
        b = ideal_dgpr_predict(pool, th, [np.zeros(10)] * 4, X[te])
        full_sq.append(np.mean((a.mean - y[te]) ** 2))
        poe_sq.append(np.mean((b.mean - y[te]) ** 2))
    r_full, r_poe = math.sqrt(np.mean(full_sq)), math.sqrt(np.mean(poe_sq))
    assert r_poe <= 1.3 * r_full
