"""Hybrid encoder assembly: ConvNet -> compression -> representation network
-> projection head, with the QNN spliced into the tape."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .classical_nn import (
    EncoderConfig,
    Representation,
    compression_forward,
    conv_encoder_forward,
    init_params,
    mlp_rep_network_forward,
    params_hash,
    projection_head_forward,
)
from .qnn import QnnLayer, qnn_forward, qnn_gradients


def qnn_node(v: Tensor, theta: Tensor, config: EncoderConfig, shots: int | None,
             forward_rng: np.random.Generator | None = None,
             backward_rng: np.random.Generator | None = None) -> tuple[Tensor, np.ndarray]:
    """Quantum representation layer as a tape node.

    Returns the measured outputs and the pre-measurement statevectors.  The
    parameter-shift Jacobians are only evaluated if the reverse pass reaches
    this node.
    """
    layer = QnnLayer(config.width, config.ansatz, config.layers, theta.data, shots)
    out, amps = qnn_forward(layer, v.data, forward_rng, return_state=True)

    def vjp(g):
        jac = qnn_gradients(layer, v.data, backward_rng)
        if jac.d_output_d_params is None or jac.d_output_d_inputs is None:
            raise ad.TapeError("QNN node is missing its Jacobian")
        d_theta = np.einsum("bw,bwp->p", g, jac.d_output_d_params)
        d_v = np.einsum("bw,bwk->bk", g, jac.d_output_d_inputs)
        return d_v, d_theta
    return ad.custom(out, (v, theta), vjp), amps


@dataclass
class ForwardResult:
    features: Tensor
    compressed: Tensor
    y: Tensor
    z: Tensor
    statevectors: np.ndarray | None


@dataclass
class HybridModel:
    """Parameters plus the input normalisation of one hybrid encoder."""

    config: EncoderConfig
    params: dict[str, np.ndarray]
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def initialize(cls, config: EncoderConfig, rng: np.random.Generator,
                   mean=None, std=None) -> "HybridModel":
        mean = np.full(config.in_channels, 0.5) if mean is None else np.asarray(mean, float)
        std = np.full(config.in_channels, 0.25) if std is None else np.asarray(std, float)
        return cls(config, init_params(config, rng), mean, std)

    def normalize(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=float)
        return (images - self.mean[None, :, None, None]) / self.std[None, :, None, None]

    def encoder_hash(self) -> str:
        return params_hash(self.params)

    def forward(self, p: dict[str, Tensor], images: np.ndarray, shots: int | None = None,
                forward_rng=None, backward_rng=None) -> ForwardResult:
        """Full pass on raw ``[0, 1]`` images with parameter tensors ``p``."""
        x = Tensor(self.normalize(images))
        feats = conv_encoder_forward(x, p, self.config)
        v = compression_forward(feats, p)
        amps = None
        if self.config.representation is Representation.QUANTUM:
            y, amps = qnn_node(v, p["qnn.theta"], self.config, shots, forward_rng, backward_rng)
        else:
            y = mlp_rep_network_forward(v, p)
        z = projection_head_forward(y, p) if self.config.projection else y
        return ForwardResult(feats, v, y, z, amps)

    def representations(self, images: np.ndarray, shots: int | None = None,
                        rng: np.random.Generator | None = None, batch_size: int = 256) -> np.ndarray:
        """Encoder outputs ``y`` without recording a tape."""
        p = {k: Tensor(v) for k, v in self.params.items()}
        out = []
        for start in range(0, len(images), batch_size):
            res = self.forward(p, images[start:start + batch_size], shots, rng)
            out.append(res.y.data)
        width = self.config.width
        return np.concatenate(out) if out else np.zeros((0, width))

    def loss_and_grads(self, images: np.ndarray, loss_fn, shots=None, forward_rng=None, backward_rng=None):
        with Tape() as tape:
            p = tape.params(self.params)
            res = self.forward(p, images, shots, forward_rng, backward_rng)
            loss = loss_fn(res)
        return float(loss.data), ad.backward(tape, loss), res
