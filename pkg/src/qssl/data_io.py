"""CIFAR-10 binary ingestion, checkpoint container, metrics tables.

CIFAR-10 binary layout: each record is one label byte followed by 3072
pixel bytes (1024 red, 1024 green, 1024 blue; each channel row-major 32x32).
Training data is ``data_batch_1.bin`` .. ``data_batch_5.bin``, test data
``test_batch.bin``.

Checkpoint layout (all integers little-endian)::

    magic      8 bytes   b"QSSLCKPT"
    version    uint32
    digest     32 bytes  sha256 of the metadata JSON bytes
    meta_len   uint64
    meta       meta_len bytes of UTF-8 JSON (configs, counters, seed)
    n_arrays   uint32
    n_arrays times:
        name_len uint16, name (UTF-8), ndim uint8, ndim x uint64 dims,
        prod(dims) float64 values (IEEE-754, little-endian)

Any bytes after the last array are rejected as corruption.
"""

from __future__ import annotations

import enum
import hashlib
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .contrastive import MetricsRecord

RECORD_BYTES = 1 + 3 * 32 * 32
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)
CIFAR10_CLASSES = ("airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck")

MAGIC = b"QSSLCKPT"
FORMAT_VERSION = 1


class DataFormatError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class Dataset:
    images: np.ndarray          # (M, 3, 32, 32) float64 in [0, 1]
    labels: np.ndarray          # (M,) int64
    class_filter: tuple[int, ...]
    split: Split

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if len(self.labels) and not np.isin(self.labels, self.class_filter).all():
            raise ValueError("labels outside the class filter")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], self.class_filter, self.split)

    def head(self, n: int | None) -> "Dataset":
        return self if n is None or n >= len(self) else self.subset(np.arange(n))


def _resolve_dir(path) -> Path:
    path = Path(path)
    nested = path / "cifar-10-batches-bin"
    if not (path / TEST_FILES[0]).exists() and nested.is_dir():
        return nested
    return path


def read_cifar10_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(labels uint8, pixels uint8 (M, 3, 32, 32))`` of one batch file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing CIFAR-10 file {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD_BYTES:
        raise DataFormatError(f"{path.name}: {raw.size} bytes is not a whole number of "
                              f"{RECORD_BYTES}-byte records (truncated record?)")
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0]
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"{path.name}: label {int(labels.max())} outside 0..9")
    return labels, records[:, 1:].reshape(-1, 3, 32, 32)


def load_cifar10(path, classes: Iterable[int], split=Split.TRAIN, max_images: int | None = None) -> Dataset:
    """Load the binary CIFAR-10 release, keeping only ``classes``.

    Records keep file order; pixels are scaled to [0, 1].  ``max_images``
    truncates the filtered set.
    """
    classes = tuple(sorted({int(c) for c in classes}))
    if not classes:
        raise ValueError("class set is empty")
    if classes[0] < 0 or classes[-1] > 9:
        raise ValueError(f"CIFAR-10 classes are 0..9, got {classes}")
    split = Split(split)
    root = _resolve_dir(path)
    labels, pixels = [], []
    for name in TRAIN_FILES if split is Split.TRAIN else TEST_FILES:
        lab, pix = read_cifar10_file(root / name)
        keep = np.isin(lab, classes)
        labels.append(lab[keep])
        pixels.append(pix[keep])
    lab = np.concatenate(labels).astype(np.int64)
    pix = np.concatenate(pixels)
    if max_images is not None:
        lab, pix = lab[:max_images], pix[:max_images]
    return Dataset(pix.astype(np.float64) / 255.0, lab, classes, split)


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    images = np.asarray(images, dtype=float)
    mean = images.mean(axis=(0, 2, 3))
    std = images.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def write_cifar10_file(path, labels: np.ndarray, pixels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), -1)
    if pixels.shape[1] != RECORD_BYTES - 1:
        raise ValueError("pixels must be (M, 3, 32, 32)")
    np.concatenate([labels, pixels], axis=1).tofile(path)


# Per-class mean foreground/background colours.  Like natural image classes,
# colour is informative but overlapping; geometry carries the rest.
_PALETTE = np.random.default_rng(1234).uniform(0.15, 0.85, size=(10, 2, 3))


def _synthetic_image(label: int, rng: np.random.Generator) -> np.ndarray:
    """A textured pattern whose geometry and mean palette depend on the class
    while exact colours, phase, frequency and placement are nuisance."""
    yy, xx = np.mgrid[0:32, 0:32].astype(float)
    freq = rng.uniform(0.25, 0.45)
    phase = rng.uniform(0, 2 * np.pi)
    cy, cx = rng.uniform(10, 22, 2)
    r = np.hypot(yy - cy, xx - cx)
    patterns = {
        0: np.sin(freq * yy + phase),
        1: np.sin(freq * xx + phase),
        2: np.sin(freq * (xx + yy) / np.sqrt(2) + phase),
        3: np.sign(np.sin(freq * xx + phase)) * np.sign(np.sin(freq * yy + phase)),
        4: np.sin(freq * 1.5 * r + phase),
        5: np.tanh(3 * (rng.uniform(6, 10) - r)),
        6: np.tanh(3 * (2.0 - np.abs(np.maximum(np.abs(yy - cy), np.abs(xx - cx)) - 7))),
        7: np.tanh(3 * (2.5 - np.minimum(np.abs(yy - cy), np.abs(xx - cx)))),
        8: np.sin(freq * (xx - yy) / np.sqrt(2) + phase),
        9: np.sin(freq * 1.3 * xx + phase) * np.sin(freq * 1.3 * yy + phase),
    }
    mask = 0.5 + 0.5 * patterns[label]
    fg = np.clip(_PALETTE[label, 0] + rng.normal(0.0, 0.15, 3), 0.0, 1.0)
    bg = np.clip(_PALETTE[label, 1] + rng.normal(0.0, 0.15, 3), 0.0, 1.0)
    img = bg[:, None, None] * (1 - mask) + fg[:, None, None] * mask
    img = img + rng.normal(0.0, 0.04, img.shape)
    return np.clip(img, 0.0, 1.0)


def write_synthetic_cifar10(path, per_file: int = 1000, n_test: int = 1000, seed: int = 0) -> Path:
    """Write a CIFAR-10-format directory of procedurally generated images.

    Labels cycle through 0..9 in shuffled order, so any class filter yields
    a balanced subset.  Intended for offline smoke runs and tests.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for name, n in [(f, per_file) for f in TRAIN_FILES] + [(TEST_FILES[0], n_test)]:
        labels = rng.permutation(np.arange(n) % 10)
        pixels = np.stack([_synthetic_image(int(l), rng) for l in labels]) if n else np.zeros((0, 3, 32, 32))
        write_cifar10_file(path / name, labels, np.round(pixels * 255))
    return path


# -- checkpoints ---------------------------------------------------------------

@dataclass
class Checkpoint:
    encoder_config: dict
    params: dict[str, np.ndarray]
    batch: int = 0
    seed: int = 0
    train_config: dict = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def check_compatible(self, encoder_config: dict) -> None:
        mine = json.dumps(self.encoder_config, sort_keys=True)
        theirs = json.dumps(encoder_config, sort_keys=True)
        if mine != theirs:
            diffs = sorted(k for k in set(self.encoder_config) | set(encoder_config)
                           if self.encoder_config.get(k) != encoder_config.get(k))
            raise ConfigMismatchError(f"checkpoint encoder config differs in {diffs}")


def _pack_array(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw = name.encode()
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(arr.tobytes())


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = json.dumps({
        "encoder": ckpt.encoder_config,
        "train": ckpt.train_config,
        "batch": int(ckpt.batch),
        "seed": int(ckpt.seed),
        "extra": ckpt.extra,
        "params": list(ckpt.params),
        "arrays": list(ckpt.arrays),
    }, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    buf.write(hashlib.sha256(meta).digest())
    buf.write(struct.pack("<Q", len(meta)))
    buf.write(meta)
    named = [(f"param/{k}", v) for k, v in ckpt.params.items()] + list(ckpt.arrays.items())
    buf.write(struct.pack("<I", len(named)))
    for name, arr in named:
        _pack_array(buf, name, arr)
    atomic_write(path, buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expect_encoder: dict | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    r = _Reader(path.read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    digest = r.take(32)
    (meta_len,) = r.unpack("<Q")
    meta_raw = r.take(meta_len)
    if hashlib.sha256(meta_raw).digest() != digest:
        raise CheckpointError("checkpoint metadata digest mismatch")
    meta = json.loads(meta_raw)
    (n_arrays,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        count = math.prod(shape)
        arrays[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after the last array")
    params = {k: arrays.pop(f"param/{k}") for k in meta["params"]}
    if set(arrays) != set(meta["arrays"]):
        raise CheckpointError("array table does not match metadata")
    ckpt = Checkpoint(meta["encoder"], params, meta["batch"], meta["seed"], meta["train"],
                      {k: arrays[k] for k in meta["arrays"]}, meta["extra"], version)
    if expect_encoder is not None:
        ckpt.check_compatible(expect_encoder)
    return ckpt


# -- metrics tables --------------------------------------------------------------

METRIC_COLUMNS = ("batch", "loss", "hs_distance", "probe_accuracy")


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _parse(v: str):
    return None if v == "" else float(v)


def format_metrics(records: Sequence[MetricsRecord], variant: str | None = None, header: bool = True) -> str:
    lines = []
    if header:
        cols = (("variant",) if variant is not None else ()) + METRIC_COLUMNS
        lines.append("\t".join(cols))
    for rec in records:
        row = [str(int(rec.batch)), _fmt(rec.loss), _fmt(rec.hs_distance), _fmt(rec.probe_accuracy)]
        if variant is not None:
            row.insert(0, variant)
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def export_metrics(records: Sequence[MetricsRecord], path) -> None:
    """Tab-separated table, one row per batch or probe checkpoint.

    Absent values are empty fields; floats are written with ``repr`` so
    parsing returns the identical values.
    """
    atomic_write(path, format_metrics(records).encode())


def append_metrics(records: Sequence[MetricsRecord], path) -> None:
    path = Path(path)
    existing = read_metrics(path) if path.exists() else []
    export_metrics(list(existing) + list(records), path)


def read_metrics(path) -> list[MetricsRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != METRIC_COLUMNS:
        raise DataFormatError(f"{path}: not a metrics table")
    out = []
    for line in lines[1:]:
        b, loss, hs, acc = line.split("\t")
        out.append(MetricsRecord(int(b), _parse(loss), _parse(hs), _parse(acc)))
    return out


def export_ablation(results: dict[str, Sequence[MetricsRecord]], path) -> None:
    text = "\t".join(("variant",) + METRIC_COLUMNS) + "\n"
    for variant, records in results.items():
        text += format_metrics(records, variant, header=False)
    atomic_write(path, text.encode())


def read_ablation(path) -> dict[str, list[MetricsRecord]]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != ("variant",) + METRIC_COLUMNS:
        raise DataFormatError(f"{path}: not an ablation table")
    out: dict[str, list[MetricsRecord]] = {}
    for line in lines[1:]:
        v, b, loss, hs, acc = line.split("\t")
        out.setdefault(v, []).append(MetricsRecord(int(b), _parse(loss), _parse(hs), _parse(acc)))
    return out


def export_confusion(counts: np.ndarray, path, class_names: Sequence[str] | None = None) -> None:
    """Rows are true labels, columns predictions; first column names the row."""
    counts = np.asarray(counts, dtype=int)
    names = list(class_names) if class_names else [str(i) for i in range(len(counts))]
    lines = ["true\\pred\t" + "\t".join(names)]
    for name, row in zip(names, counts):
        lines.append(name + "\t" + "\t".join(str(int(v)) for v in row))
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_confusion(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    return np.array([[int(v) for v in line.split("\t")[1:]] for line in lines[1:]], dtype=int).reshape(
        len(lines) - 1, -1)
