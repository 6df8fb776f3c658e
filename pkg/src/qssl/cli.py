"""``qssl`` command line: train-ssl, probe, eval, ablate and make-data.

Settings resolve in this order, later entries winning: the ``desk``
profile (or ``--profile``), the ``config.json`` a previous run left in
``--out`` (probe and eval only), ``--config``, then individual flags.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 checkpoint error, 5 runtime failure.  Errors are printed to stderr as
``qssl: <category> error: <message>``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .contrastive import STREAM_EVAL, STREAM_PROBE, MetricsRecord, stream
from .data_io import (
    Checkpoint,
    CheckpointError,
    DataFormatError,
    Split,
    export_ablation,
    export_confusion,
    export_metrics,
    append_metrics,
    load_checkpoint,
    load_cifar10,
    save_checkpoint,
    write_synthetic_cifar10,
)
from .estimators import ContrastiveEncoder
from .metrics_probe import LinearProbe, evaluate, probe_train

CIFAR10_NAMES = ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")
CHECKPOINT = "checkpoint.qckpt"
PROBE = "probe.qckpt"


class UsageError(ValueError):
    pass


EXIT_CODES = ((UsageError, 2, "config"), (CheckpointError, 4, "checkpoint"), (DataFormatError, 3, "data"),
              (FileNotFoundError, 3, "data"), (ValueError, 2, "config"))


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# -- configuration ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--profile", choices=("desk", "paper"), help="base profile (default: desk)")
    common.add_argument("--seed", type=int)
    common.add_argument("--dataset", help="directory with the CIFAR-10 binary files")
    common.add_argument("--out", help="run directory")
    common.add_argument("--mode", help="exact or shots:N")
    common.add_argument("--representation", choices=("classical", "quantum"))
    common.add_argument("--ansatz", choices=("ring", "all"))
    common.add_argument("--width", type=int)
    common.add_argument("--layers", type=int)
    common.add_argument("--batches", type=int)
    common.add_argument("--classes", help="comma separated class ids, e.g. 0,1")
    common.add_argument("--max-images", type=int)

    parser = argparse.ArgumentParser(prog="qssl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train-ssl", parents=[common], help="contrastive training")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p = sub.add_parser("probe", parents=[common], help="linear probe on a frozen encoder")
    p.add_argument("--checkpoint", action="append",
                   help="encoder checkpoint; repeat to probe a series (default: <out>/checkpoint.qckpt)")
    p = sub.add_parser("eval", parents=[common], help="confusion matrix on sampled test images")
    p.add_argument("--checkpoint", help="encoder checkpoint (default: <out>/checkpoint.qckpt)")
    p.add_argument("--probe", help="probe file written by 'qssl probe' (default: <out>/probe.qckpt)")
    p.add_argument("--n-images", type=int)
    p = sub.add_parser("ablate", parents=[common], help="train and probe one run per variant")
    p.add_argument("--sweep", help="e.g. width=2,4,8 or ansatz=ring,all")
    p = sub.add_parser("make-data", help="write a synthetic dataset in CIFAR-10 binary format")
    p.add_argument("path")
    p.add_argument("--per-file", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args, saved: bool = False) -> RunConfig:
    cfg = RunConfig.profile(args.profile or "desk")
    saved_path = Path(args.out or cfg.out) / "config.json"
    if saved and saved_path.exists():
        cfg = RunConfig.from_dict(json.loads(saved_path.read_text()), base=cfg)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        data = json.loads(path.read_text())
        cfg = RunConfig.from_dict(data, base=None if "profile" in data and not args.profile else cfg)
    classes = [int(c) for c in args.classes.split(",")] if args.classes else None
    return cfg.replace(seed=args.seed, dataset=args.dataset, out=args.out, mode=args.mode,
                       representation=args.representation, ansatz=args.ansatz, width=args.width,
                       layers=args.layers, batches=args.batches, classes=classes,
                       max_images=args.max_images)


def _label_codes(labels: np.ndarray, classes) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(classes)}
    return np.array([lookup[int(l)] for l in labels], dtype=int)


# -- commands -------------------------------------------------------------------

def cmd_train_ssl(cfg: RunConfig, resume: bool = False) -> ContrastiveEncoder:
    """Train, writing ``checkpoint.qckpt``, ``ckpt_<batch>.qckpt`` snapshots,
    ``metrics.tsv`` and the effective ``config.json`` under ``cfg.out``."""
    out = Path(cfg.out)
    data = load_cifar10(cfg.dataset, cfg.classes, Split.TRAIN, cfg.max_images)
    if resume:
        ckpt = load_checkpoint(out / CHECKPOINT, expect_encoder=cfg.encoder_config().to_dict())
        if ckpt.seed != cfg.seed:
            raise UsageError(f"checkpoint was trained with seed {ckpt.seed}, config says {cfg.seed}")
        enc = ContrastiveEncoder.from_checkpoint(ckpt, n_batches=cfg.batches)
        if enc.n_batches_seen_ > cfg.batches:
            raise UsageError(f"checkpoint is already at batch {enc.n_batches_seen_} > {cfg.batches}")
    else:
        enc = ContrastiveEncoder(**cfg.estimator_params())
        enc._initialize(data.images)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")

    def save():
        ckpt = enc.to_checkpoint()
        save_checkpoint(ckpt, out / CHECKPOINT)
        save_checkpoint(ckpt, out / f"ckpt_{enc.n_batches_seen_:05d}.qckpt")
        export_metrics(enc.metrics_, out / "metrics.tsv")

    if not resume:
        save()
    start = time.perf_counter()
    while enc.n_batches_seen_ < cfg.batches:
        left = cfg.batches - enc.n_batches_seen_
        step = min(left, cfg.checkpoint_every) if cfg.checkpoint_every else left
        enc.partial_fit(data.images, n_batches=step)
        rec = enc.metrics_[-1]
        hs = "" if rec.hs_distance is None else f" hs {rec.hs_distance:.4f}"
        _log(f"batch {enc.n_batches_seen_}/{cfg.batches} loss {rec.loss:.4f}{hs} "
             f"({time.perf_counter() - start:.1f}s)")
        save()
    return enc


def _probe_one(cfg: RunConfig, ckpt: Checkpoint, train, test) -> tuple[LinearProbe, float, float]:
    enc = ContrastiveEncoder.from_checkpoint(ckpt)
    model = enc.model_
    shots = enc.train_config().shots
    rng = stream(cfg.seed, STREAM_PROBE) if shots else None
    probe = LinearProbe(epochs=cfg.probe_epochs, lr=cfg.probe_lr, beta1=cfg.beta1, beta2=cfg.beta2,
                        weight_decay=cfg.weight_decay, batch_size=cfg.probe_batch_size,
                        random_state=cfg.seed)
    ytr = _label_codes(train.labels, cfg.classes)
    yte = _label_codes(test.labels, cfg.classes)
    probe_train(model, train.images, ytr, probe, shots, rng)
    train_acc = float(probe.score(model.representations(train.images, shots, rng), ytr))
    test_acc, _ = evaluate(probe, model, test.images, yte, len(cfg.classes), shots, rng)
    return probe, train_acc, test_acc


def cmd_probe(cfg: RunConfig, checkpoints=None) -> list[MetricsRecord]:
    """Probe each checkpoint; appends rows to ``probe_metrics.tsv`` and saves
    the probe of the last checkpoint to ``probe.qckpt``."""
    out = Path(cfg.out)
    paths = [Path(p) for p in checkpoints] if checkpoints else [out / CHECKPOINT]
    train = load_cifar10(cfg.dataset, cfg.classes, Split.TRAIN, cfg.probe_max_images)
    test = load_cifar10(cfg.dataset, cfg.classes, Split.TEST)
    records = []
    expect = cfg.encoder_config().to_dict()
    for path in paths:
        ckpt = load_checkpoint(path, expect_encoder=expect)
        probe, train_acc, test_acc = _probe_one(cfg, ckpt, train, test)
        _log(f"{path.name}: batch {ckpt.batch} train accuracy {train_acc:.4f} test accuracy {test_acc:.4f}")
        records.append(MetricsRecord(ckpt.batch, probe_accuracy=test_acc))
        save_checkpoint(Checkpoint(
            encoder_config=ckpt.encoder_config,
            params={"coef": probe.coef_, "intercept": probe.intercept_},
            batch=ckpt.batch, seed=cfg.seed,
            extra={"classes": cfg.classes, "train_accuracy": train_acc, "test_accuracy": test_acc,
                   "encoder": str(path)}), out / PROBE)
    append_metrics(records, out / "probe_metrics.tsv")
    return records


def cmd_eval(cfg: RunConfig, checkpoint=None, probe_path=None, n_images=None) -> tuple[float, np.ndarray]:
    """Classify ``n_images`` test images sampled with the seed; writes
    ``confusion.tsv``."""
    out = Path(cfg.out)
    n = cfg.eval_images if n_images is None else n_images
    if n < 1:
        raise UsageError("eval needs at least one image")
    expect = cfg.encoder_config().to_dict()
    ckpt = load_checkpoint(checkpoint or out / CHECKPOINT, expect_encoder=expect)
    pk = load_checkpoint(probe_path or out / PROBE, expect_encoder=expect)
    if list(pk.extra.get("classes", [])) != cfg.classes:
        raise UsageError(f"probe was trained on classes {pk.extra.get('classes')}, config says {cfg.classes}")
    test = load_cifar10(cfg.dataset, cfg.classes, Split.TEST)
    if n > len(test):
        raise UsageError(f"requested {n} images but the test split has {len(test)}")
    idx = np.sort(stream(cfg.seed, STREAM_EVAL, 1).choice(len(test), n, replace=False))
    test = test.subset(idx)
    enc = ContrastiveEncoder.from_checkpoint(ckpt)
    shots = enc.train_config().shots
    probe = LinearProbe()
    probe.coef_, probe.intercept_ = pk.params["coef"], pk.params["intercept"]
    probe.classes_ = np.arange(len(cfg.classes))
    probe.n_features_in_ = probe.coef_.shape[0]
    rng = stream(cfg.seed, STREAM_EVAL) if shots else None
    acc, cm = evaluate(probe, enc.model_, test.images, _label_codes(test.labels, cfg.classes),
                       len(cfg.classes), shots, rng)
    names = [CIFAR10_NAMES[c] for c in cfg.classes]
    export_confusion(cm.counts, out / "confusion.tsv", names)
    _log(f"accuracy {acc:.4f} on {n} images; recall " +
         ", ".join(f"{name} {r:.3f}" for name, r in zip(names, cm.recall())))
    return acc, cm.counts


def parse_sweep(text) -> tuple[str, list]:
    if isinstance(text, dict):
        if len(text) != 1:
            raise UsageError("sweep must vary exactly one field")
        ((key, values),) = text.items()
    else:
        key, _, rest = str(text).partition("=")
        values = [v for v in rest.split(",") if v]
    key = key.strip()
    if key not in ("width", "ansatz", "representation", "layers", "mode"):
        raise UsageError(f"cannot sweep {key!r}; choose width, ansatz, representation, layers or mode")
    if not values:
        raise UsageError("sweep is empty")
    if key in ("width", "layers"):
        values = [int(v) for v in values]
    return key, list(values)


def cmd_ablate(cfg: RunConfig, sweep=None) -> dict[str, list[MetricsRecord]]:
    """One training run and final probe per variant, consolidated into
    ``ablation.tsv``."""
    key, values = parse_sweep(sweep if sweep is not None else cfg.sweep)
    results = {}
    train = load_cifar10(cfg.dataset, cfg.classes, Split.TRAIN, cfg.probe_max_images)
    test = load_cifar10(cfg.dataset, cfg.classes, Split.TEST)
    for value in values:
        name = f"{key}={value}"
        variant = cfg.replace(**{key: value}, out=str(Path(cfg.out) / name.replace("=", "_")))
        _log(f"== {name}")
        enc = cmd_train_ssl(variant)
        _, _, test_acc = _probe_one(variant, enc.to_checkpoint(), train, test)
        _log(f"{name}: test accuracy {test_acc:.4f}")
        records = list(enc.metrics_)
        records.append(MetricsRecord(enc.n_batches_seen_, probe_accuracy=test_acc))
        results[name] = records
    export_ablation(results, Path(cfg.out) / "ablation.tsv")
    return results


# -- entry point --------------------------------------------------------------------

def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "make-data":
        path = write_synthetic_cifar10(args.path, args.per_file, args.n_test, args.seed)
        _log(f"wrote synthetic CIFAR-10 files to {path}")
        return 0
    cfg = resolve_config(args, saved=args.command in ("probe", "eval"))
    if args.command == "train-ssl":
        cmd_train_ssl(cfg, resume=args.resume)
    elif args.command == "probe":
        cmd_probe(cfg, args.checkpoint)
    elif args.command == "eval":
        acc, _ = cmd_eval(cfg, args.checkpoint, args.probe, args.n_images)
        print(f"{acc:.6f}")
    elif args.command == "ablate":
        cmd_ablate(cfg, args.sweep)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except KeyboardInterrupt:
        _log("qssl: interrupted")
        return 130
    except Exception as e:  # categorised below; anything else is a runtime failure
        for kind, code, label in EXIT_CODES:
            if isinstance(e, kind):
                _log(f"qssl: {label} error: {e}")
                return code
        _log(f"qssl: runtime error: {type(e).__name__}: {e}")
        return 5


if __name__ == "__main__":
    sys.exit(main())
