"""Run configuration: one flat JSON document plus command-line overrides.

Every field has a default.  Two profiles ship with the package:

``desk``
    2 classes, 512 images, W=4, batch 32, 50 batches.  Runs in well under a
    minute per seed on a laptop CPU.
``paper``
    5 classes, W=8, batch 256, 176 batches, projection head, and the
    published optimiser settings (lr 1e-3, temperature 0.07).

``RunConfig.dump`` writes the effective configuration; loading that file
back reproduces the run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .classical_nn import EncoderConfig
from .contrastive import AugmentConfig, TrainConfig
from .qnn import format_mode, parse_mode

# Weaker colour and geometry distortion for the short desk runs.  With only
# 50 small batches the default distortions push a W=4 encoder into the
# collapsed solution before it learns anything.
DESK_AUGMENT = {"crop_scale": [0.8, 1.0], "rotation": [-10.0, 10.0], "jitter": 0.2, "hue": 0.05,
                "grayscale_prob": 0.1}


@dataclass
class RunConfig:
    # data and bookkeeping
    dataset: str = "data/cifar-10-batches-bin"
    out: str = "runs/desk"
    classes: list = field(default_factory=lambda: [0, 1])
    max_images: int | None = 512
    seed: int = 0
    mode: str = "exact"
    checkpoint_every: int = 10
    # encoder
    representation: str = "quantum"
    ansatz: str = "ring"
    width: int = 4
    layers: int = 2
    conv_stages: list = field(default_factory=lambda: [[16, 3, 1], [32, 3, 1], [64, 3, 1]])
    feature_dim: int = 512
    projection: list | None = field(default_factory=list)
    # contrastive training
    batch_size: int = 32
    batches: int = 50
    temperature: float = 0.1
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-6
    augment: dict = field(default_factory=lambda: dict(DESK_AUGMENT))
    # probe and evaluation
    probe_epochs: int = 100
    probe_lr: float = 1e-3
    probe_batch_size: int = 256
    probe_max_images: int | None = None
    eval_images: int = 900
    # ablation
    sweep: dict = field(default_factory=lambda: {"width": [2, 4, 8]})

    def __post_init__(self):
        self.mode = format_mode(parse_mode(self.mode))
        self.classes = [int(c) for c in self.classes]
        if not self.classes:
            raise ValueError("classes must not be empty")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        # building these validates the remaining fields
        self.encoder_config()
        self.train_config()

    # -- views ---------------------------------------------------------------

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(width=self.width, representation=self.representation, ansatz=self.ansatz,
                             layers=self.layers, conv_stages=self.conv_stages,
                             feature_dim=self.feature_dim, projection=self.projection)

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, temperature=self.temperature, lr=self.lr,
                           beta1=self.beta1, beta2=self.beta2, weight_decay=self.weight_decay,
                           n_batches=self.batches, seed=self.seed, mode=self.mode,
                           augment=AugmentConfig(**self.augment))

    def estimator_params(self) -> dict:
        """Keyword arguments for :class:`~qssl.estimators.ContrastiveEncoder`."""
        return dict(width=self.width, representation=self.representation, ansatz=self.ansatz,
                    layers=self.layers, conv_stages=tuple(map(tuple, self.conv_stages)),
                    feature_dim=self.feature_dim,
                    projection=None if self.projection is None else tuple(self.projection),
                    batch_size=self.batch_size, n_batches=self.batches, temperature=self.temperature,
                    lr=self.lr, beta1=self.beta1, beta2=self.beta2, weight_decay=self.weight_decay,
                    mode=self.mode, augment=dict(self.augment), random_state=self.seed)

    # -- (de)serialisation ------------------------------------------------------

    @classmethod
    def profile(cls, name: str) -> "RunConfig":
        if name == "desk":
            return cls()
        if name == "paper":
            return cls(out="runs/paper", classes=[0, 1, 2, 3, 4], max_images=None, width=8,
                       projection=None, batch_size=256, batches=176, temperature=0.07, lr=1e-3,
                       augment={}, checkpoint_every=16)
        raise ValueError(f"unknown profile {name!r}; choose 'desk' or 'paper'")

    @classmethod
    def from_dict(cls, data: dict, base: "RunConfig | None" = None) -> "RunConfig":
        data = dict(data)
        profile = data.pop("profile", None)
        if base is None:
            base = cls.profile(profile or "desk")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config fields: {unknown}")
        merged = asdict(base)
        merged.update(data)
        return cls(**merged)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ValueError(f"config {path} is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise ValueError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps())

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({k: v for k, v in changes.items() if v is not None}, base=self)
