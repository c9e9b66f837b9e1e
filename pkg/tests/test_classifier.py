import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmbench.classifier import (GRID, Adam, LogisticModel, MLPParams, ReduceLROnPlateau,
                                TrainConfig, auc, compute_metrics, cross_validate,
                                expand_grid, forward, grid_search, init_mlp, kfold_evaluate,
                                kfold_indices, logistic_evaluate, logistic_objective,
                                logistic_train, loss_and_grad, select_best, stratified_split,
                                train)

SMALL = TrainConfig(hidden=(16, 8), learning_rate=2e-3, epochs=60, batch_size=20)


def blobs(n=120, d=16, sep=3.0, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(size=(n, d))
    X[:, 0] += np.where(y == 1, sep, -sep)
    return X, y


def test_forward_shapes_and_default_arch():
    p = init_mlp(seed=0)
    assert p.sizes == [1536, 512, 256, 128, 64, 1]
    x = np.random.default_rng(0).normal(size=1536)
    v = forward(p, x)
    assert isinstance(v, float) and 0 < v < 1
    assert forward(p, np.stack([x, x])).shape == (2,)
    with pytest.raises(ValueError):
        forward(p, np.zeros(1000))


def test_forward_zero_weights_and_bias():
    p = init_mlp(8, (4, 3), seed=0)
    p = MLPParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    assert forward(p, np.ones(8)) == 0.5
    p.biases[-1][:] = 10.0
    assert forward(p, np.ones(8)) == pytest.approx(0.9999546, abs=1e-7)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    p = init_mlp(8, (4, 3), seed=3)
    # random biases keep every pre-activation away from the ReLU kink at 0
    for b in p.biases:
        b[:] = rng.normal(scale=0.5, size=b.shape)
    X = rng.normal(size=(6, 8))
    y = np.array([0, 1, 1, 0, 1, 0], dtype=float)
    _, gW, gb = loss_and_grad(p, X, y)
    eps = 1e-6
    for arrays, grads in ((p.weights, gW), (p.biases, gb)):
        for arr, g in zip(arrays, grads):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + eps
                lp = loss_and_grad(p, X, y)[0]
                arr[idx] = old - eps
                lm = loss_and_grad(p, X, y)[0]
                arr[idx] = old
                num = (lp - lm) / (2 * eps)
                denom = max(abs(num) + abs(g[idx]), 1e-8)
                assert abs(num - g[idx]) / denom < 1e-4


def test_train_separable_reaches_full_accuracy():
    X, y = blobs()
    res = train(X, y, SMALL, seed=0)
    assert np.mean((forward(res.params, X) >= 0.5) == y) == 1.0
    assert res.losses[-1] < res.losses[0]


def test_zero_learning_rate_leaves_params():
    X, y = blobs(40)
    cfg = TrainConfig(hidden=(4,), learning_rate=0.0, weight_decay=0.0, epochs=3)
    init = init_mlp(16, (4,), seed=9)
    res = train(X, y, cfg, seed=9, params=init)
    for a, b in zip(init.weights + init.biases, res.params.weights + res.params.biases):
        np.testing.assert_array_equal(a, b)


def test_training_deterministic():
    X, y = blobs(60)
    cfg = TrainConfig(hidden=(8,), epochs=5, batch_size=16)
    assert train(X, y, cfg, seed=4).losses == train(X, y, cfg, seed=4).losses


def test_train_rejects_single_class():
    with pytest.raises(ValueError):
        train(np.zeros((4, 3)), np.ones(4), SMALL)


def test_params_roundtrip(tmp_path):
    p = init_mlp(8, (4,), seed=1)
    p.save(tmp_path / "m.npz")
    q = MLPParams.load(tmp_path / "m.npz")
    np.testing.assert_array_equal(forward(p, np.ones(8)), forward(q, np.ones(8)))


def test_plateau_scheduler_halves_after_patience():
    opt = Adam([(1,)], lr=1.0, beta1=0.5, beta2=0.999, eps=1e-8, weight_decay=0.0)
    sched = ReduceLROnPlateau(opt, factor=0.5, patience=50, threshold=1e-4)
    sched.step(1.0)
    for _ in range(50):
        sched.step(1.0)
    assert opt.lr == 1.0
    sched.step(1.0)
    assert opt.lr == 0.5
    # an improvement smaller than the relative threshold is not an improvement
    for _ in range(51):
        sched.step(1.0 - 1e-6)
    assert opt.lr == 0.25


def test_adam_weight_decay_in_gradient():
    w = np.array([1.0])
    opt = Adam([(1,)], lr=0.1, beta1=0.5, beta2=0.999, eps=0.0, weight_decay=0.5)
    opt.step([w], [np.array([0.0])])
    # first step is lr * sign(g + wd * w)
    assert w[0] == pytest.approx(0.9)


def test_grid_expansion():
    configs = expand_grid(GRID)
    assert len(configs) == 54
    assert len(set(configs)) == 54
    single = expand_grid({"learning_rate": [1e-3]})
    assert len(single) == 1 and single[0].learning_rate == 1e-3
    with pytest.raises(ValueError):
        expand_grid({"learning_rate": []})


def test_select_best_tie_break():
    a = TrainConfig(learning_rate=2e-3, weight_decay=2e-4)
    b = TrainConfig(learning_rate=2e-4, weight_decay=2e-2)
    c = TrainConfig(learning_rate=2e-4, weight_decay=2e-3)
    assert select_best([(a, 0.9), (b, 0.9), (c, 0.9)]) == c
    assert select_best([(a, 0.95), (b, 0.9)]) == a
    d = TrainConfig(learning_rate=2e-4, weight_decay=2e-3, batch_size=100)
    assert select_best([(d, 0.8), (c, 0.8)]) == d


def test_grid_search_small():
    X, y = blobs(40)
    base = TrainConfig(hidden=(8,), epochs=20)
    res = grid_search(X, y, {"learning_rate": [2e-3], "batch_size": [10, 20]}, base)
    assert len(res.scores) == 2
    assert res.best in [cfg for cfg, _ in res.scores]
    with pytest.raises(ValueError):
        grid_search(X[:6], y[[0, 1, 2, 37, 38, 39]], base=base)


def test_stratified_split_keeps_balance():
    y = np.repeat([0, 1], 50)
    tr, va = stratified_split(y, 0.2, seed=0)
    assert len(va) == 20 and y[va].sum() == 10
    assert not set(tr) & set(va)


def test_kfold_partition():
    folds = kfold_indices(10, 5, seed=0)
    assert [len(f) for f in folds] == [2] * 5
    assert sorted(np.concatenate(folds)) == list(range(10))
    with pytest.raises(ValueError):
        kfold_indices(3, 5)


def test_cross_validation_separable_and_random():
    X, y = blobs(100, sep=6.0)
    m = kfold_evaluate(X, y, SMALL, k=5, seed=0)
    assert m.accuracy == 1.0 and m.auc == 1.0
    assert len(m.folds) == 5 and sum(f["n"] for f in m.folds) == 100

    rng = np.random.default_rng(12)
    Xr = rng.normal(size=(400, 20))
    yr = rng.permutation(np.repeat([0, 1], 200))
    mr = kfold_evaluate(Xr, yr, TrainConfig(hidden=(16, 8), epochs=30, batch_size=50), k=5)
    assert abs(mr.accuracy - 0.5) < 0.1


def test_cross_validate_uses_out_of_fold_only():
    X = np.arange(20, dtype=float)[:, None]
    y = np.repeat([0, 1], 10)

    def fit_predict(X_tr, y_tr, X_te, seed):
        assert not set(X_tr[:, 0]) & set(X_te[:, 0])
        return np.full(len(X_te), 0.9)

    m = cross_validate(X, y, fit_predict, k=4)
    assert m.accuracy == 0.5 and m.false_watermarked_rate == 1.0
    assert m.false_unwatermarked_rate == 0.0


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.5] * 4, [0, 1, 0, 1]) == 0.5
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=50))
def test_auc_matches_pairwise_count(pairs):
    scores = [s for s, _ in pairs]
    labels = [l for _, l in pairs]
    if len(set(labels)) < 2:
        return
    pos = [s for s, l in pairs if l == 1]
    neg = [s for s, l in pairs if l == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    assert auc(scores, labels) == pytest.approx(wins / (len(pos) * len(neg)), abs=1e-12)


def test_compute_metrics_rates():
    m = compute_metrics(np.array([0.9, 0.2, 0.7, 0.4]), np.array([1, 1, 0, 0]))
    assert m.accuracy == 0.5
    assert m.false_unwatermarked_rate == 0.5
    assert m.false_watermarked_rate == 0.5
    assert m.n == 4


def test_logistic_separable_1d():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    y = np.array([0, 0, 1, 1])
    model = logistic_train(X, y, l2=1e-2)
    assert list(model.predict_proba(X) >= 0.5) == [False, False, True, True]
    _, grad = logistic_objective(model, X, y.astype(float), 1e-2)
    assert np.linalg.norm(grad) < 1e-6


def test_logistic_zero_init_is_half():
    m = LogisticModel(np.zeros(3), 0.0)
    np.testing.assert_array_equal(m.predict_proba(np.ones((2, 3))), [0.5, 0.5])


def test_logistic_evaluate_blobs():
    X, y = blobs(100, sep=3.0)
    assert logistic_evaluate(X, y, k=5).accuracy > 0.95
