"""Classical layers of the hybrid encoder, their initialisation, and Adam.

Parameters live in plain ``dict[str, ndarray]`` containers; a forward pass
wraps them as tape leaves so the same arrays feed training, checkpointing
and hashing.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .qnn import AnsatzKind, num_ansatz_params

LEAKY_SLOPE = 0.01


class Representation(str, enum.Enum):
    CLASSICAL = "classical"
    QUANTUM = "quantum"


@dataclass
class EncoderConfig:
    """Architecture of encoder, representation network and projection head.

    ``conv_stages`` lists ``(channels, kernel, stride)``; each stage is
    conv + leaky ReLU + 2x2 average pool.  ``projection`` holds the hidden and
    output width of the projection head, or is empty for no head.
    """

    width: int = 8
    representation: Representation = Representation.QUANTUM
    ansatz: AnsatzKind = AnsatzKind.RING
    layers: int = 2
    conv_stages: tuple[tuple[int, int, int], ...] = ((16, 3, 1), (32, 3, 1), (64, 3, 1))
    feature_dim: int = 512
    projection: tuple[int, ...] | None = None
    image_size: int = 32
    in_channels: int = 3

    def __post_init__(self):
        self.representation = Representation(str(getattr(self.representation, "value", self.representation)).lower())
        self.ansatz = AnsatzKind.parse(self.ansatz)
        self.conv_stages = tuple(tuple(int(v) for v in s) for s in self.conv_stages)
        if self.projection is None:
            self.projection = (self.width, self.width)
        self.projection = tuple(int(p) for p in self.projection)
        if self.width < 1 or self.layers < 1 or self.feature_dim < 1:
            raise ValueError("width, layers and feature_dim must be positive")
        if self.representation is Representation.QUANTUM and self.width < 2:
            raise ValueError("a quantum representation network needs width >= 2")
        if self.projection and (len(self.projection) != 2 or max(self.projection) > self.width):
            raise ValueError(f"projection head must be two layers no wider than W={self.width}, got {self.projection}")
        size = self.image_size
        for ch, k, stride in self.conv_stages:
            if ch < 1 or k < 1 or k % 2 == 0 or stride < 1:
                raise ValueError(f"bad conv stage {(ch, k, stride)}; kernels must be odd")
            size = (size - 1) // stride + 1
            if size % 2:
                raise ValueError(f"feature map of size {size} cannot be 2x2 pooled")
            size //= 2

    @property
    def flat_dim(self) -> int:
        size = self.image_size
        for _, _, stride in self.conv_stages:
            size = ((size - 1) // stride + 1) // 2
        return size * size * self.conv_stages[-1][0] if self.conv_stages else size * size * self.in_channels

    @property
    def output_dim(self) -> int:
        return self.projection[-1] if self.projection else self.width

    def to_dict(self) -> dict:
        d = asdict(self)
        d["representation"] = self.representation.value
        d["ansatz"] = self.ansatz.value
        d["conv_stages"] = [list(s) for s in self.conv_stages]
        d["projection"] = list(self.projection)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


def _he_uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


def _dense(rng, params, name, n_in, n_out):
    params[f"{name}.w"] = _he_uniform(rng, n_in, (n_in, n_out))
    params[f"{name}.b"] = np.zeros(n_out)


def init_params(config: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-uniform weights, zero biases, QNN angles uniform on [-pi, pi]."""
    params: dict[str, np.ndarray] = {}
    c_in = config.in_channels
    for i, (ch, k, _) in enumerate(config.conv_stages):
        params[f"conv{i}.w"] = _he_uniform(rng, k * k * c_in, (k, k, c_in, ch))
        params[f"conv{i}.b"] = np.zeros(ch)
        c_in = ch
    _dense(rng, params, "feature", config.flat_dim, config.feature_dim)
    _dense(rng, params, "compress", config.feature_dim, config.width)
    params.update(init_rep_params(config, rng))
    if config.projection:
        _dense(rng, params, "head0", config.width, config.projection[0])
        _dense(rng, params, "head1", config.projection[0], config.projection[1])
    return params


def init_rep_params(config: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    if config.representation is Representation.QUANTUM:
        return {"qnn.theta": rng.uniform(-np.pi, np.pi, num_ansatz_params(config.ansatz, config.width, config.layers))}
    params: dict[str, np.ndarray] = {}
    _dense(rng, params, "rep0", config.width, config.width)
    _dense(rng, params, "rep1", config.width, config.width)
    return params


def count(params: dict[str, np.ndarray], prefix: str | tuple[str, ...] = "") -> int:
    return int(sum(v.size for k, v in params.items() if k.startswith(prefix)))


def mlp_param_count(width: int) -> int:
    return 2 * (width * width + width)


def params_hash(params: dict[str, np.ndarray]) -> str:
    """Content hash over names, shapes and float64 bytes."""
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        h.update(name.encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


# -- forward passes ----------------------------------------------------------

def conv_encoder_forward(images: Tensor, p: dict[str, Tensor], config: EncoderConfig) -> Tensor:
    """(B, 3, H, W) images -> (B, feature_dim) features."""
    expected = (config.in_channels, config.image_size, config.image_size)
    if images.data.ndim != 4 or images.shape[1:] != expected:
        raise ValueError(f"expected images of shape (B, {expected[0]}, {expected[1]}, {expected[2]}), got {images.shape}")
    h = ad.transpose(images, (0, 2, 3, 1))
    for i, (_, _, stride) in enumerate(config.conv_stages):
        h = ad.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], stride)
        h = ad.leaky_relu(h, LEAKY_SLOPE)
        h = ad.avg_pool2(h)
    h = ad.reshape(h, (h.shape[0], -1))
    return ad.linear(h, p["feature.w"], p["feature.b"])


def compression_forward(features: Tensor, p: dict[str, Tensor]) -> Tensor:
    return ad.linear(features, p["compress.w"], p["compress.b"])


def _check_width(x: Tensor, w: Tensor, what: str) -> None:
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"{what}: input width {x.shape[-1]} does not match weights {w.shape}")


def mlp_rep_network_forward(features: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Two width-W dense layers with bias, leaky ReLU after each."""
    _check_width(features, p["rep0.w"], "representation MLP")
    h = ad.leaky_relu(ad.linear(features, p["rep0.w"], p["rep0.b"]), LEAKY_SLOPE)
    return ad.leaky_relu(ad.linear(h, p["rep1.w"], p["rep1.b"]), LEAKY_SLOPE)


def projection_head_forward(y: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Dense + leaky ReLU, then a linear output layer."""
    _check_width(y, p["head0.w"], "projection head")
    h = ad.leaky_relu(ad.linear(y, p["head0.w"], p["head0.b"]), LEAKY_SLOPE)
    return ad.linear(h, p["head1.w"], p["head1.b"])


def linear_classifier_forward(y: Tensor, p: dict[str, Tensor], num_classes: int) -> Tensor:
    if p["w"].shape[1] != num_classes:
        raise ValueError(f"classifier has {p['w'].shape[1]} outputs, expected {num_classes}")
    _check_width(y, p["w"], "linear classifier")
    return ad.linear(y, p["w"], p["b"])


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (float(g) / n),)
    return ad.custom(np.asarray(loss), (logits,), vjp)


# -- optimiser ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              weight_decay: float = 1e-6, eps: float = 1e-8) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias correction.

    Weight decay is L2-style: ``weight_decay * param`` is added to the
    gradient before the moment updates.
    """
    step = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        g = g + weight_decay * p
        m = beta1 * state.m.get(name, np.zeros_like(p)) + (1 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(p)) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** step)
        v_hat = v / (1 - beta2 ** step)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(m_new, v_new, step)
