import hashlib
import os

import numpy as np
import pytest

from qssl.contrastive import MetricsRecord
from qssl.data_io import (
    Checkpoint,
    CheckpointError,
    ConfigMismatchError,
    DataFormatError,
    append_metrics,
    channel_stats,
    export_ablation,
    export_confusion,
    export_metrics,
    load_checkpoint,
    load_cifar10,
    read_ablation,
    read_cifar10_file,
    read_confusion,
    read_metrics,
    save_checkpoint,
    write_cifar10_file,
    write_synthetic_cifar10,
)
from qssl.classical_nn import EncoderConfig, init_params, params_hash


@pytest.fixture(scope="module")
def cifar(tmp_path_factory):
    return write_synthetic_cifar10(tmp_path_factory.mktemp("cifar"), per_file=100, n_test=50, seed=3)


def test_record_layout_bit_exact(tmp_path):
    # label byte then R plane, G plane, B plane, each row-major
    rec = bytearray([7])
    for c in range(3):
        rec += bytes((c * 50 + i) % 256 for i in range(1024))
    (tmp_path / "one.bin").write_bytes(bytes(rec))
    labels, pixels = read_cifar10_file(tmp_path / "one.bin")
    assert labels.tolist() == [7]
    assert pixels[0, 1, 0, 0] == 50 and pixels[0, 2, 0, 3] == 103 and pixels[0, 0, 1, 0] == 32


def test_class_filter_counts(cifar):
    ds = load_cifar10(cifar, [0, 1], "train")
    assert len(ds) == 5 * 2 * 10  # 5 files x 10 per class x 2 classes
    assert set(np.unique(ds.labels)) == {0, 1}
    ds5 = load_cifar10(cifar, range(5), "train")
    assert len(ds5) == 5 * 5 * 10
    assert ds.images.shape[1:] == (3, 32, 32)
    assert ds.images.min() >= 0 and ds.images.max() <= 1
    assert len(load_cifar10(cifar, [0, 1], "test")) == 10
    assert len(load_cifar10(cifar, [0, 1], "train", max_images=7)) == 7


def test_loading_is_deterministic(cifar):
    a = load_cifar10(cifar, [2, 3], "train")
    b = load_cifar10(cifar, [3, 2], "train")
    assert hashlib.sha256(a.images.tobytes()).digest() == hashlib.sha256(b.images.tobytes()).digest()


def test_nested_directory_accepted(tmp_path):
    write_synthetic_cifar10(tmp_path / "cifar-10-batches-bin", per_file=10, n_test=10)
    assert len(load_cifar10(tmp_path, [0], "test")) == 1


def test_load_errors(cifar, tmp_path):
    with pytest.raises(ValueError):
        load_cifar10(cifar, [], "train")
    with pytest.raises(ValueError):
        load_cifar10(cifar, [10], "train")
    with pytest.raises(FileNotFoundError):
        load_cifar10(tmp_path, [0], "train")
    raw = (cifar / "test_batch.bin").read_bytes()
    (tmp_path / "test_batch.bin").write_bytes(raw[:-5])
    with pytest.raises(DataFormatError):
        load_cifar10(tmp_path, [0], "test")
    bad = bytearray(raw)
    bad[0] = 12
    (tmp_path / "test_batch.bin").write_bytes(bytes(bad))
    with pytest.raises(DataFormatError):
        load_cifar10(tmp_path, [0], "test")


def test_write_read_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 10, 4)
    pixels = rng.integers(0, 256, (4, 3, 32, 32))
    write_cifar10_file(tmp_path / "x.bin", labels, pixels)
    l2, p2 = read_cifar10_file(tmp_path / "x.bin")
    np.testing.assert_array_equal(l2, labels)
    np.testing.assert_array_equal(p2, pixels)


def test_channel_stats():
    imgs = np.zeros((2, 3, 4, 4))
    imgs[:, 1] = 0.5
    imgs[0, 2] = 1.0
    mean, std = channel_stats(imgs)
    np.testing.assert_allclose(mean, [0, 0.5, 0.5])
    np.testing.assert_allclose(std, [1.0, 1.0, 0.5])


@pytest.mark.skipif("QSSL_CIFAR10" not in os.environ, reason="set QSSL_CIFAR10 to the real dataset directory")
def test_real_cifar10_counts():
    root = os.environ["QSSL_CIFAR10"]
    assert len(load_cifar10(root, [0, 1], "train")) == 10_000
    assert len(load_cifar10(root, range(5), "train")) == 25_000


def make_ckpt(width=3, seed=0):
    cfg = EncoderConfig(width=width, layers=1, conv_stages=((4, 3, 1),), feature_dim=8)
    params = init_params(cfg, np.random.default_rng(seed))
    return Checkpoint(cfg.to_dict(), params, batch=12, seed=seed, train_config={"lr": 1e-3},
                      arrays={"norm/mean": np.array([0.1, 0.2, 0.3]), "empty": np.zeros((0, 4))},
                      extra={"adam_step": 12})


def test_checkpoint_roundtrip(tmp_path):
    ckpt = make_ckpt()
    save_checkpoint(ckpt, tmp_path / "c.qckpt")
    back = load_checkpoint(tmp_path / "c.qckpt", expect_encoder=ckpt.encoder_config)
    assert params_hash(back.params) == params_hash(ckpt.params)
    for k in ckpt.params:
        assert back.params[k].tobytes() == ckpt.params[k].tobytes()
    assert back.arrays["empty"].shape == (0, 4)
    assert (back.batch, back.seed, back.extra, back.train_config) == (12, 0, {"adam_step": 12}, {"lr": 1e-3})
    assert not list(tmp_path.glob(".*"))  # no temp files left behind


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "c.qckpt"
    save_checkpoint(make_ckpt(), path)
    raw = path.read_bytes()
    cases = {
        "magic": b"XXXXXXXX" + raw[8:],
        "version": raw[:8] + (99).to_bytes(4, "little") + raw[12:],
        "digest": raw[:12] + bytes(32) + raw[44:],
        "truncated": raw[:-3],
        "trailing": raw + b"\0",
    }
    for name, data in cases.items():
        path.write_bytes(data)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.qckpt")


def test_checkpoint_config_mismatch(tmp_path):
    save_checkpoint(make_ckpt(width=8), tmp_path / "w8.qckpt")
    other = EncoderConfig(width=4, layers=1, conv_stages=((4, 3, 1),), feature_dim=8).to_dict()
    with pytest.raises(ConfigMismatchError, match="width"):
        load_checkpoint(tmp_path / "w8.qckpt", expect_encoder=other)


def test_metrics_roundtrip(tmp_path):
    recs = [MetricsRecord(0, 1.0 / 3, 0.1), MetricsRecord(1, 2.5e-17, None), MetricsRecord(5, None, None, 0.75)]
    export_metrics(recs, tmp_path / "m.tsv")
    assert read_metrics(tmp_path / "m.tsv") == recs
    export_metrics([], tmp_path / "empty.tsv")
    assert (tmp_path / "empty.tsv").read_text() == "batch\tloss\ths_distance\tprobe_accuracy\n"
    append_metrics([MetricsRecord(6, probe_accuracy=0.8)], tmp_path / "m.tsv")
    assert [r.batch for r in read_metrics(tmp_path / "m.tsv")] == [0, 1, 5, 6]
    (tmp_path / "bad.tsv").write_text("nope\n")
    with pytest.raises(DataFormatError):
        read_metrics(tmp_path / "bad.tsv")


def test_metrics_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        export_metrics([], blocker / "sub" / "m.tsv")


def test_ablation_and_confusion_roundtrip(tmp_path):
    res = {"width=2": [MetricsRecord(0, 3.0, 0.2)], "width=4": [MetricsRecord(0, 2.0), MetricsRecord(1, None, None, 0.6)]}
    export_ablation(res, tmp_path / "a.tsv")
    assert read_ablation(tmp_path / "a.tsv") == res
    counts = np.array([[5, 1], [2, 7]])
    export_confusion(counts, tmp_path / "c.tsv", ["airplane", "automobile"])
    np.testing.assert_array_equal(read_confusion(tmp_path / "c.tsv"), counts)
