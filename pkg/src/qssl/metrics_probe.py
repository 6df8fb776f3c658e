"""Hilbert-Schmidt separation of positive pairs, the linear probe, and
confusion-matrix evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.metrics import confusion_matrix
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from . import autodiff as ad
from .autodiff import Tape
from .classical_nn import AdamState, adam_step, linear_classifier_forward, softmax_cross_entropy


@dataclass
class HsResult:
    per_pair: np.ndarray
    mean: float


def _pairs(pair_index: np.ndarray) -> np.ndarray:
    pair = np.asarray(pair_index, dtype=int)
    m = len(pair)
    if m < 4 or m % 2:
        raise ValueError("Hilbert-Schmidt tracking needs 2N views with N >= 2")
    if np.any(pair[pair] != np.arange(m)) or np.any(pair == np.arange(m)):
        raise ValueError("pair_index must be a fixed-point-free involution")
    first = np.arange(m)[np.arange(m) < pair]
    return np.stack([first, pair[first]], axis=1)


def hs_distance(statevectors: np.ndarray, pair_index) -> HsResult:
    """``tr((rho_i - sigma_i)^2)`` for every positive pair, from overlaps only.

    ``rho_i`` mixes the pair's two states equally, ``sigma_i`` mixes the other
    2N - 2 states equally.  With ``G_ab = |<a|b>|^2`` and signed mixture
    weights ``w`` the distance is ``w^T G w``, so no 2^W x 2^W matrix is built.
    """
    states = np.asarray(statevectors, dtype=np.complex128)
    if states.ndim != 2:
        raise ValueError(f"expected (2N, 2**W) statevectors, got shape {states.shape}")
    pairs = _pairs(pair_index)
    m = len(states)
    if len(pair_index) != m:
        raise ValueError("pair_index does not match the number of statevectors")
    gram = np.abs(states.conj() @ states.T) ** 2
    weights = np.full((len(pairs), m), -1.0 / (m - 2))
    rows = np.arange(len(pairs))
    weights[rows, pairs[:, 0]] = 0.5
    weights[rows, pairs[:, 1]] = 0.5
    per_pair = np.einsum("ia,ab,ib->i", weights, gram, weights)
    per_pair = np.clip(per_pair, 0.0, None)
    return HsResult(per_pair, float(per_pair.mean()))


@dataclass
class ConfusionMatrix:
    """Counts with rows = true label, columns = predicted label."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else float("nan")

    def recall(self) -> np.ndarray:
        support = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.diag(self.counts) / support


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Softmax-regression probe trained with Adam on fixed features.

    Weights start at zero, so an untrained probe predicts uniformly.

    Parameters
    ----------
    epochs : int, default=100
    lr, beta1, beta2, weight_decay : float
        Adam settings; defaults match the contrastive training run.
    batch_size : int, default=256
    standardize : bool, default=True
        Centre and scale features with training statistics before the affine
        map.  The scaling is folded into the reported ``coef_``/``intercept_``
        so the probe stays a single affine function of its input.
    random_state : int, default=0
        Seeds minibatch shuffling.
    """

    def __init__(self, epochs=100, lr=1e-3, beta1=0.9, beta2=0.999, weight_decay=1e-6,
                 batch_size=256, standardize=True, random_state=0):
        self.epochs = epochs
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        n, d = X.shape
        c = len(self.classes_)
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            scale = X.std(axis=0)
            self.scale_ = np.where(scale > 0, scale, 1.0)
        else:
            self.mean_, self.scale_ = np.zeros(d), np.ones(d)
        Xs = (X - self.mean_) / self.scale_
        params = {"w": np.zeros((d, c)), "b": np.zeros(c)}
        state = AdamState()
        rng = np.random.default_rng(self.random_state)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                with Tape() as tape:
                    p = tape.params(params)
                    logits = linear_classifier_forward(ad.Tensor(Xs[idx]), p, c)
                    loss = softmax_cross_entropy(logits, codes[idx])
                grads = ad.backward(tape, loss)
                params, state = adam_step(params, grads, state, self.lr, self.beta1, self.beta2,
                                          self.weight_decay)
            self.loss_curve_.append(float(loss.data))
        self.coef_ = params["w"] / self.scale_[:, None]
        self.intercept_ = params["b"] - self.mean_ @ self.coef_
        return self

    def _logits(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        return X @ self.coef_ + self.intercept_

    def decision_function(self, X):
        """Class logits; for two classes the positive-minus-negative margin."""
        logits = self._logits(X)
        return logits[:, 1] - logits[:, 0] if logits.shape[1] == 2 else logits

    def predict_proba(self, X):
        logits = self._logits(X)
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        best = np.argmax(self._logits(X), axis=1)
        return self.classes_[best]


def probe_train(model, images, labels, probe: LinearProbe | None = None, shots=None, rng=None) -> LinearProbe:
    """Fit a probe on the frozen encoder's representations ``y``.

    Raises if the encoder parameters change while the probe trains.
    """
    if labels is None:
        raise ValueError("the linear probe needs labels")
    labels = np.asarray(labels)
    if len(labels) != len(images):
        raise ValueError("images and labels differ in length")
    probe = LinearProbe() if probe is None else probe
    before = model.encoder_hash()
    feats = model.representations(images, shots, rng)
    probe.fit(feats, labels)
    if model.encoder_hash() != before:
        raise RuntimeError("encoder parameters changed during probe training")
    return probe


def evaluate(probe: LinearProbe, model, images, labels, num_classes: int,
             shots=None, rng=None) -> tuple[float, ConfusionMatrix]:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    if len(labels) == 0:
        return float("nan"), ConfusionMatrix(np.zeros((num_classes, num_classes), dtype=int))
    feats = model.representations(images, shots, rng)
    pred = probe.predict(feats)
    cm = ConfusionMatrix(confusion_matrix(labels, pred, labels=np.arange(num_classes)))
    return cm.accuracy, cm


def predictions_confusion(labels, predictions, num_classes: int) -> ConfusionMatrix:
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    for arr in (labels, predictions):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
    return ConfusionMatrix(confusion_matrix(labels, predictions, labels=np.arange(num_classes)))
