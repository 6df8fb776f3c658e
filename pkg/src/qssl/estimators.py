"""scikit-learn style front end.

:class:`ContrastiveEncoder` is a transformer: ``fit`` runs self-supervised
contrastive training on unlabelled images and ``transform`` returns the
encoder representations ``y``.  Paired with :class:`~qssl.metrics_probe.LinearProbe`
through ``sklearn.frozen.FrozenEstimator`` it gives the linear evaluation
protocol as an ordinary pipeline::

    enc = ContrastiveEncoder(width=4).fit(X_unlabelled)
    clf = make_pipeline(FrozenEstimator(enc), LinearProbe()).fit(X, y)
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .classical_nn import AdamState, EncoderConfig
from .contrastive import (
    STREAM_EVAL,
    STREAM_INIT,
    STREAM_STEP,
    AugmentConfig,
    MetricsRecord,
    TrainConfig,
    batch_indices,
    stream,
    train_step,
)
from .data_io import Checkpoint, channel_stats
from .model import HybridModel
from .metrics_probe import LinearProbe

__all__ = ["ContrastiveEncoder", "LinearProbe", "as_images"]


def as_images(X, channels: int = 3, size: int = 32) -> np.ndarray:
    """Accept ``(M, C, H, W)`` images or ``(M, C*H*W)`` rows in CIFAR order."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_samples=1)
    if X.ndim == 2:
        if X.shape[1] != channels * size * size:
            raise ValueError(f"flat rows must have {channels * size * size} values, got {X.shape[1]}")
        X = X.reshape(-1, channels, size, size)
    if X.shape[1:] != (channels, size, size):
        raise ValueError(f"expected images of shape (M, {channels}, {size}, {size}), got {X.shape}")
    return X


def _nan_or(v):
    return np.nan if v is None else v


def _none_if_nan(v):
    return None if np.isnan(v) else float(v)


class ContrastiveEncoder(TransformerMixin, BaseEstimator):
    """Hybrid encoder trained with NT-Xent on pairs of augmented views.

    Parameters
    ----------
    width : int, default=8
        Compression width W, i.e. the number of qubits of a quantum
        representation network.
    representation : {"quantum", "classical"}, default="quantum"
    ansatz : {"ring", "all"}, default="ring"
    layers : int, default=2
        Ansatz layers (quantum only).
    conv_stages : tuple of (channels, kernel, stride), optional
    feature_dim : int, default=512
    projection : tuple of two ints, optional
        Projection-head widths; defaults to ``(width, width)``.  Pass ``()``
        to train without a head.
    batch_size, n_batches, temperature, lr, beta1, beta2, weight_decay :
        Contrastive training schedule and Adam settings.
    mode : str, default="exact"
        ``"exact"`` or ``"shots:N"``.
    augment : AugmentConfig or dict, optional
    random_state : int, default=0
        Root seed; every random stream in a run is derived from it.
    callback : callable, optional
        Called as ``callback(encoder, record)`` after every batch.
    """

    def __init__(self, width=8, representation="quantum", ansatz="ring", layers=2,
                 conv_stages=((16, 3, 1), (32, 3, 1), (64, 3, 1)), feature_dim=512, projection=None,
                 batch_size=256, n_batches=176, temperature=0.07, lr=1e-3, beta1=0.9, beta2=0.999,
                 weight_decay=1e-6, mode="exact", augment=None, random_state=0,
                 callback: Callable | None = None):
        self.width = width
        self.representation = representation
        self.ansatz = ansatz
        self.layers = layers
        self.conv_stages = conv_stages
        self.feature_dim = feature_dim
        self.projection = projection
        self.batch_size = batch_size
        self.n_batches = n_batches
        self.temperature = temperature
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.mode = mode
        self.augment = augment
        self.random_state = random_state
        self.callback = callback

    # -- configuration views --------------------------------------------------

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(width=self.width, representation=self.representation, ansatz=self.ansatz,
                             layers=self.layers, conv_stages=self.conv_stages,
                             feature_dim=self.feature_dim, projection=self.projection)

    def train_config(self) -> TrainConfig:
        aug = self.augment
        if aug is None:
            aug = AugmentConfig()
        elif isinstance(aug, dict):
            aug = AugmentConfig(**aug)
        return TrainConfig(batch_size=self.batch_size, temperature=self.temperature, lr=self.lr,
                           beta1=self.beta1, beta2=self.beta2, weight_decay=self.weight_decay,
                           n_batches=self.n_batches, seed=int(self.random_state), mode=self.mode,
                           augment=aug)

    # -- training ---------------------------------------------------------------

    def _initialize(self, X: np.ndarray) -> None:
        config = self.encoder_config()
        mean, std = channel_stats(X)
        self.model_ = HybridModel.initialize(config, stream(int(self.random_state), STREAM_INIT), mean, std)
        self.adam_ = AdamState()
        self.metrics_: list[MetricsRecord] = []
        self.n_batches_seen_ = 0

    def fit(self, X, y=None):
        """Train from scratch for ``n_batches`` batches.  ``y`` is ignored."""
        X = as_images(X)
        self._initialize(X)
        return self.partial_fit(X, n_batches=self.n_batches)

    def partial_fit(self, X, y=None, n_batches: int = 1):
        """Continue training for ``n_batches`` more batches.

        Batch ``b`` always draws the same images and random streams, so
        training in pieces reproduces a single long run exactly.
        """
        X = as_images(X)
        if not hasattr(self, "model_"):
            self._initialize(X)
        config = self.train_config()
        seed = int(self.random_state)
        for _ in range(n_batches):
            b = self.n_batches_seen_
            idx = batch_indices(len(X), config.batch_size, b, seed)
            record, self.adam_ = train_step(self.model_, X[idx], config, stream(seed, STREAM_STEP, b),
                                            self.adam_, batch=b)
            self.metrics_.append(record)
            self.n_batches_seen_ = b + 1
            if self.callback is not None:
                self.callback(self, record)
        return self

    def transform(self, X):
        """Representations ``y`` (before the projection head)."""
        check_is_fitted(self, "model_")
        X = as_images(X)
        shots = self.train_config().shots
        rng = stream(int(self.random_state), STREAM_EVAL) if shots else None
        return self.model_.representations(X, shots, rng)

    def get_feature_names_out(self, input_features=None):
        return np.array([f"y{k}" for k in range(self.width)], dtype=object)

    # -- checkpoints ------------------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        check_is_fitted(self, "model_")
        arrays = {"norm/mean": self.model_.mean, "norm/std": self.model_.std}
        for name in self.model_.params:
            if name in self.adam_.m:
                arrays[f"adam/m/{name}"] = self.adam_.m[name]
                arrays[f"adam/v/{name}"] = self.adam_.v[name]
        arrays["metrics/batch"] = np.array([r.batch for r in self.metrics_], dtype=float)
        arrays["metrics/loss"] = np.array([_nan_or(r.loss) for r in self.metrics_], dtype=float)
        arrays["metrics/hs"] = np.array([_nan_or(r.hs_distance) for r in self.metrics_], dtype=float)
        train = self.train_config()
        train_dict = {k: v for k, v in vars(train).items() if k != "augment"}
        train_dict["augment"] = train.augment.to_dict()
        return Checkpoint(
            encoder_config=self.encoder_config().to_dict(),
            params=dict(self.model_.params),
            batch=self.n_batches_seen_,
            seed=int(self.random_state),
            train_config=train_dict,
            arrays=arrays,
            extra={"adam_step": self.adam_.step},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, **overrides) -> "ContrastiveEncoder":
        """Rebuild a fitted encoder; ``overrides`` may change the schedule
        (e.g. ``n_batches``) but not the architecture."""
        enc_cfg = EncoderConfig.from_dict(ckpt.encoder_config)
        train = dict(ckpt.train_config)
        train["random_state"] = ckpt.seed
        train.pop("seed", None)
        params = dict(
            width=enc_cfg.width, representation=enc_cfg.representation.value, ansatz=enc_cfg.ansatz.value,
            layers=enc_cfg.layers, conv_stages=enc_cfg.conv_stages, feature_dim=enc_cfg.feature_dim,
            projection=enc_cfg.projection, **train)
        params.update(overrides)
        est = cls(**params)
        if est.encoder_config().to_dict() != ckpt.encoder_config:
            raise ValueError("overrides may not change the encoder architecture")
        a = ckpt.arrays
        est.model_ = HybridModel(enc_cfg, {k: v.copy() for k, v in ckpt.params.items()},
                                 a["norm/mean"].copy(), a["norm/std"].copy())
        step = int(ckpt.extra.get("adam_step", 0))
        m = {k[len("adam/m/"):]: v.copy() for k, v in a.items() if k.startswith("adam/m/")}
        v = {k[len("adam/v/"):]: val.copy() for k, val in a.items() if k.startswith("adam/v/")}
        est.adam_ = AdamState(m, v, step)
        est.metrics_ = [
            MetricsRecord(int(b), _none_if_nan(l), _none_if_nan(h))
            for b, l, h in zip(a["metrics/batch"], a["metrics/loss"], a["metrics/hs"])
        ]
        est.n_batches_seen_ = int(ckpt.batch)
        return est
