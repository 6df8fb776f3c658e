"""Augmentations, the NT-Xent loss and one contrastive training step."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .autodiff import Tensor
from .classical_nn import AdamState, Representation, adam_step
from .metrics_probe import hs_distance
from .model import HybridModel
from .qnn import format_mode, parse_mode

_LUMA = np.array([0.299, 0.587, 0.114])
_RGB_TO_YIQ = np.array([[0.299, 0.587, 0.114],
                        [0.596, -0.274, -0.322],
                        [0.211, -0.523, 0.312]])
_YIQ_TO_RGB = np.linalg.inv(_RGB_TO_YIQ)


@dataclass
class AugmentConfig:
    """Random crop -> rotation -> Gaussian blur -> colour distortion.

    ``crop_scale`` is the range of the crop's area fraction; the crop is
    resized back to full size.  Colour distortion scales brightness,
    contrast and saturation by factors in ``[1 - jitter, 1 + jitter]``,
    rotates hue by up to ``hue`` turns, and with ``grayscale_prob`` drops
    colour entirely.
    """

    crop_scale: tuple[float, float] = (0.6, 1.0)
    rotation: tuple[float, float] = (-15.0, 15.0)
    blur_sigma: tuple[float, float] = (0.1, 1.0)
    blur_kernel: int = 3
    jitter: float = 0.4
    hue: float = 0.1
    grayscale_prob: float = 0.2
    crop_prob: float = 1.0
    rotate_prob: float = 1.0
    blur_prob: float = 0.5
    jitter_prob: float = 0.8

    def __post_init__(self):
        self.crop_scale = tuple(float(v) for v in self.crop_scale)
        self.rotation = tuple(float(v) for v in self.rotation)
        self.blur_sigma = tuple(float(v) for v in self.blur_sigma)
        lo, hi = self.crop_scale
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        if self.rotation[0] > self.rotation[1]:
            raise ValueError(f"rotation range is reversed: {self.rotation}")
        if not 0 < self.blur_sigma[0] <= self.blur_sigma[1]:
            raise ValueError(f"blur_sigma must be positive and ordered, got {self.blur_sigma}")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ValueError("blur_kernel must be a positive odd integer")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must be in [0, 1)")
        if not 0 <= self.hue <= 0.5:
            raise ValueError("hue must be in [0, 0.5]")
        for name in ("crop_prob", "rotate_prob", "blur_prob", "jitter_prob", "grayscale_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(crop_scale=(1.0, 1.0), rotation=(0.0, 0.0), blur_prob=0.0, jitter=0.0, hue=0.0,
                   grayscale_prob=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    """(C, h, w) -> (C, size, size), half-pixel centres."""
    _, h, w = img.shape
    ys = np.clip((np.arange(size) + 0.5) * h / size - 0.5, 0, h - 1)
    xs = np.clip((np.arange(size) + 0.5) * w / size - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def _random_crop(img, scale, rng):
    _, h, w = img.shape
    while True:
        frac = rng.uniform(*scale)
        side = int(round(min(h, w) * np.sqrt(frac)))
        if side >= 1:
            break
    if side >= min(h, w):
        return img
    top = rng.integers(0, h - side + 1)
    left = rng.integers(0, w - side + 1)
    return _resize_bilinear(img[:, top:top + side, left:left + side], h)


def _color_jitter(img, strength, hue, rng):
    b, c, s = rng.uniform(1 - strength, 1 + strength, 3)
    img = img * b
    mean = img.mean()
    img = c * img + (1 - c) * mean
    gray = np.tensordot(_LUMA, img, axes=1)[None]
    img = s * img + (1 - s) * gray
    if hue > 0:
        # hue rotation = rotation of the chroma plane around the luma axis
        a = 2 * np.pi * rng.uniform(-hue, hue)
        rot = np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])
        img = np.tensordot(_YIQ_TO_RGB @ rot @ _RGB_TO_YIQ, img, axes=1)
    return img


def augment(image: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """One random view of a ``(3, H, W)`` image with values in [0, 1]."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 3:
        raise ValueError(f"augment expects a (C, H, W) image, got shape {img.shape}")
    if rng.random() < config.crop_prob:
        img = _random_crop(img, config.crop_scale, rng)
    if rng.random() < config.rotate_prob:
        angle = rng.uniform(*config.rotation)
        if angle != 0.0:
            img = ndimage.rotate(img, angle, axes=(2, 1), reshape=False, order=1, mode="reflect")
    if rng.random() < config.blur_prob:
        sigma = rng.uniform(*config.blur_sigma)
        r = config.blur_kernel // 2
        img = ndimage.gaussian_filter(img, sigma=(0, sigma, sigma), radius=(0, r, r), mode="reflect")
    if rng.random() < config.jitter_prob and (config.jitter > 0 or config.hue > 0):
        img = _color_jitter(np.clip(img, 0.0, 1.0), config.jitter, config.hue, rng)
    if rng.random() < config.grayscale_prob:
        img = np.repeat(np.tensordot(_LUMA, np.clip(img, 0.0, 1.0), axes=1)[None], img.shape[0], axis=0)
    return np.clip(img, 0.0, 1.0)


@dataclass
class ViewBatch:
    views: np.ndarray        # (2N, C, H, W)
    pair_index: np.ndarray   # positive partner of each view
    base_index: np.ndarray   # source image of each view

    @property
    def num_images(self) -> int:
        return len(self.views) // 2


def make_view_batch(images: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> ViewBatch:
    """Two views per image; views ``2i`` and ``2i + 1`` come from image ``i``."""
    images = np.asarray(images, dtype=float)
    n = len(images)
    if n < 2:
        raise ValueError("a contrastive batch needs at least 2 images")
    streams = rng.spawn(2 * n)
    views = np.stack([augment(images[k // 2], config, streams[k]) for k in range(2 * n)])
    base = np.repeat(np.arange(n), 2)
    pair = np.arange(2 * n) ^ 1
    return ViewBatch(views, pair, base)


def check_pairing(pair_index) -> np.ndarray:
    pair = np.asarray(pair_index, dtype=int)
    m = len(pair)
    if m < 4 or m % 2:
        raise ValueError("NT-Xent needs 2N views with N >= 2")
    if pair.min() < 0 or pair.max() >= m or np.any(pair[pair] != np.arange(m)) or np.any(pair == np.arange(m)):
        raise ValueError("pair_index must be a fixed-point-free involution")
    return pair


def nt_xent_loss(z, pair_index, temperature: float) -> tuple[float, np.ndarray]:
    """NT-Xent summed over all 2N anchors, and its gradient w.r.t. ``z``.

    Rows are unit-normalised first.  For anchor ``a`` with positive ``p`` the
    term is ``-log(exp(s_ap / t) / sum_{k != a} exp(s_ak / t))``; the
    denominator holds the positive plus the 2N - 2 negatives.
    """
    z = np.asarray(z, dtype=float)
    pair = check_pairing(pair_index)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if z.ndim != 2 or len(z) != len(pair):
        raise ValueError(f"z must be (2N, D) matching pair_index, got {z.shape}")
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise ValueError("cannot normalise a zero-norm or non-finite row of z")
    u = z / norms
    m = len(u)
    logits = (u @ u.T) / temperature
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - row_max)
    denom = expd.sum(axis=1, keepdims=True)
    log_softmax = logits - row_max - np.log(denom)
    rows = np.arange(m)
    loss = -log_softmax[rows, pair].sum()

    dlogits = expd / denom
    dlogits[rows, pair] -= 1.0
    du = (dlogits + dlogits.T) @ u / temperature
    dz = (du - u * np.sum(u * du, axis=1, keepdims=True)) / norms
    return float(loss), dz


def nt_xent(z: Tensor, pair_index, temperature: float) -> Tensor:
    loss, dz = nt_xent_loss(z.data, pair_index, temperature)
    return ad.custom(np.asarray(loss), (z,), lambda g: (dz * float(g),))


@dataclass
class TrainConfig:
    batch_size: int = 256
    temperature: float = 0.07
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-6
    n_batches: int = 176
    seed: int = 0
    mode: str = "exact"
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        self.mode = format_mode(parse_mode(self.mode))
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 so that negatives exist")
        if self.n_batches < 0:
            raise ValueError("n_batches must be >= 0")

    @property
    def shots(self) -> int | None:
        return parse_mode(self.mode)


@dataclass
class MetricsRecord:
    batch: int
    loss: float | None = None
    hs_distance: float | None = None
    probe_accuracy: float | None = None


# Seed-stream layout: every random draw in a run derives from
# SeedSequence(seed, spawn_key=(purpose, index)).  Step streams are keyed by
# the global batch index, which is what makes resume bit-exact.
STREAM_INIT, STREAM_EPOCH, STREAM_STEP, STREAM_PROBE, STREAM_EVAL = range(5)


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(purpose, index))))


def batch_indices(n_images: int, batch_size: int, batch: int, seed: int) -> np.ndarray:
    """Images of global batch ``batch``: a fresh permutation per epoch, last
    partial batch dropped."""
    per_epoch = n_images // batch_size
    if per_epoch < 1:
        raise ValueError(f"dataset of {n_images} images is smaller than one batch of {batch_size}")
    epoch, k = divmod(batch, per_epoch)
    order = stream(seed, STREAM_EPOCH, epoch).permutation(n_images)
    return order[k * batch_size:(k + 1) * batch_size]


def train_step(model: HybridModel, images: np.ndarray, config: TrainConfig, rng: np.random.Generator,
               adam: AdamState, batch: int = 0) -> tuple[MetricsRecord, AdamState]:
    """Augment, forward all 2N views, NT-Xent, full backward, one Adam step.

    Updates ``model.params`` and returns the batch metrics with the new
    optimiser state.
    """
    aug_rng, fwd_rng, bwd_rng = rng.spawn(3)
    views = make_view_batch(images, config.augment, aug_rng)
    loss, grads, res = model.loss_and_grads(
        views.views, lambda r: nt_xent(r.z, views.pair_index, config.temperature),
        config.shots, fwd_rng, bwd_rng)
    model.params, adam = adam_step(model.params, grads, adam, config.lr, config.beta1,
                                   config.beta2, config.weight_decay)
    hs = None
    if model.config.representation is Representation.QUANTUM:
        hs = float(hs_distance(res.statevectors, views.pair_index).mean)
    return MetricsRecord(batch, loss, hs), adam
