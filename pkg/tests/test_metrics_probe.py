import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.utils.estimator_checks import check_estimator

from qssl.classical_nn import EncoderConfig
from qssl.metrics_probe import (
    ConfusionMatrix,
    LinearProbe,
    evaluate,
    hs_distance,
    predictions_confusion,
    probe_train,
)
from qssl.model import HybridModel

from oracles import hs_dense


def random_states(rng, m, w):
    s = rng.normal(size=(m, 2 ** w)) + 1j * rng.normal(size=(m, 2 ** w))
    return s / np.linalg.norm(s, axis=1, keepdims=True)


def test_identical_states_give_zero():
    s = random_states(np.random.default_rng(0), 1, 2)
    res = hs_distance(np.repeat(s, 6, axis=0), np.arange(6) ^ 1)
    np.testing.assert_allclose(res.per_pair, 0, atol=1e-15)


def test_orthogonal_ensembles_give_two():
    zero = np.array([1, 0, 0, 0], complex)
    one = np.array([0, 0, 0, 1], complex)
    res = hs_distance(np.stack([zero, zero, one, one]), [1, 0, 3, 2])
    np.testing.assert_allclose(res.per_pair, [2.0, 2.0], atol=1e-15)
    assert res.mean == pytest.approx(2.0)


@pytest.mark.parametrize("w", [1, 2, 3])
@pytest.mark.parametrize("n", [2, 3, 4])
def test_matches_dense_density_matrices(w, n):
    rng = np.random.default_rng(10 * w + n)
    for _ in range(5):
        states = random_states(rng, 2 * n, w)
        order = rng.permutation(2 * n)
        pair = np.empty(2 * n, dtype=int)
        pair[order[0::2]] = order[1::2]
        pair[order[1::2]] = order[0::2]
        got = hs_distance(states, pair).per_pair
        assert np.max(np.abs(got - hs_dense(states, pair))) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_phase_invariance_and_bounds(seed):
    rng = np.random.default_rng(seed)
    states = random_states(rng, 6, 2)
    pair = np.arange(6) ^ 1
    base = hs_distance(states, pair).per_pair
    phased = states * np.exp(1j * rng.uniform(0, 2 * np.pi, size=(6, 1)))
    np.testing.assert_allclose(hs_distance(phased, pair).per_pair, base, atol=1e-12)
    assert np.all(base >= 0) and np.all(base <= 2 + 1e-12)


def test_hs_errors():
    s = random_states(np.random.default_rng(0), 2, 1)
    with pytest.raises(ValueError):
        hs_distance(s, [1, 0])
    s4 = random_states(np.random.default_rng(0), 4, 1)
    with pytest.raises(ValueError):
        hs_distance(s4, [0, 1, 2, 3])
    with pytest.raises(ValueError):
        hs_distance(s4[0], [1, 0, 3, 2])


def test_confusion_always_class_zero():
    labels = np.repeat(np.arange(5), 20)
    cm = predictions_confusion(labels, np.zeros(100, dtype=int), 5)
    assert cm.accuracy == pytest.approx(0.2)
    assert cm.total == 100
    np.testing.assert_array_equal(cm.counts[:, 0], 20)
    assert cm.counts[:, 1:].sum() == 0
    np.testing.assert_allclose(cm.recall(), [1, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        predictions_confusion([0, 5], [0, 0], 5)


def test_recall_cross_check():
    counts = np.array([[71, 29], [84, 16]])
    cm = ConfusionMatrix(counts)
    np.testing.assert_allclose(cm.recall(), [0.71, 16 / 100])
    assert cm.accuracy == pytest.approx(np.trace(counts) / counts.sum())


def test_probe_separable_data_reaches_full_accuracy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 4))
    y = (X @ np.array([1.0, -2.0, 0.5, 0.0]) > 0).astype(int)
    margin = np.abs(X @ np.array([1.0, -2.0, 0.5, 0.0])) > 0.3
    X, y = X[margin], y[margin]
    probe = LinearProbe(epochs=200, lr=1e-2).fit(X[:100], y[:100])
    assert probe.score(X[100:], y[100:]) == 1.0
    p = probe.predict_proba(X[:5])
    np.testing.assert_allclose(p.sum(axis=1), 1)


def test_probe_same_seed_identical():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(50, 3)), rng.integers(0, 3, 50)
    a = LinearProbe(epochs=5).fit(X, y)
    b = LinearProbe(epochs=5).fit(X, y)
    assert a.coef_.tobytes() == b.coef_.tobytes()


@pytest.mark.slow
def test_sklearn_estimator_checks():
    check_estimator(LinearProbe(epochs=20, lr=1e-2))


@pytest.fixture(scope="module")
def small_model():
    cfg = EncoderConfig(width=3, layers=1, conv_stages=((4, 3, 1),), feature_dim=8)
    return HybridModel.initialize(cfg, np.random.default_rng(0))


def test_probe_train_keeps_encoder_frozen(small_model):
    rng = np.random.default_rng(2)
    imgs = rng.uniform(size=(20, 3, 32, 32))
    labels = rng.integers(0, 2, 20)
    before = small_model.encoder_hash()
    probe = probe_train(small_model, imgs, labels, LinearProbe(epochs=3))
    assert small_model.encoder_hash() == before
    acc, cm = evaluate(probe, small_model, imgs, labels, 2)
    assert np.isfinite(acc) and cm.total == 20
    assert acc == pytest.approx(np.trace(cm.counts) / cm.total)
    with pytest.raises(ValueError):
        probe_train(small_model, imgs, None)
    with pytest.raises(ValueError):
        evaluate(probe, small_model, imgs, labels + 2, 2)
