"""Command-line entry point: split, train, eval, predict, import-weights.

Configuration comes from an optional JSON file plus flag overrides (flags
win). Exit codes: 0 success, 1 usage/config error, 2 data/format error,
3 runtime numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    NumericalError,
    UndefinedMetricError,
    VitforgeError,
)
from .model import ViT, ViTConfig, ViTParams, manifest_shapes, predict
from .preprocess import (
    ImageSample,
    LabeledDataset,
    class_ids_for,
    load_dataset,
    preprocess_sample,
    read_manifest,
    split_indices,
)
from .tensor import Tensor
from .train import TrainConfig, evaluate, fit

CONFIG_KEYS = {
    "image_size": 224,
    "patch_size": 16,
    "dim": 768,
    "depth": 12,
    "heads": 12,
    "mlp_dim": 3072,
    "num_classes": None,
    "lr": 1e-4,
    "epochs": 50,
    "batch_size": 32,
    "patience": 10,
    "seed": 0,
    "split_ratio": 0.85,
    "ln_eps": 1e-6,
}


def load_run_config(args) -> dict:
    """Defaults, overlaid by the JSON config file, overlaid by flags."""
    cfg = dict(CONFIG_KEYS)
    path = getattr(args, "config", None)
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        unknown = sorted(set(loaded) - set(CONFIG_KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys in {path}: {unknown}")
        cfg.update(loaded)
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if not 0.0 < cfg["split_ratio"] < 1.0:
        raise ConfigError(f"split_ratio must be in (0, 1), got {cfg['split_ratio']}")
    return cfg


def _vit_config(cfg: dict, num_classes: int) -> ViTConfig:
    return ViTConfig(
        image_size=cfg["image_size"], patch_size=cfg["patch_size"], dim=cfg["dim"],
        depth=cfg["depth"], heads=cfg["heads"], mlp_dim=cfg["mlp_dim"],
        num_classes=num_classes, ln_eps=cfg["ln_eps"],
    )


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                       lr=cfg["lr"], patience=cfg["patience"], seed=cfg["seed"])


def _write_manifest(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label"])
        writer.writerows(rows)


def cmd_split(args) -> int:
    if not 0.0 < args.ratio < 1.0:
        raise ConfigError(f"--ratio must be in the open interval (0, 1), got {args.ratio}")
    root = Path(args.data)
    rows = read_manifest(root)
    mapping = class_ids_for(label for _, label in rows)
    labels = [mapping[label] for _, label in rows]
    train_idx, test_idx = split_indices(labels, args.ratio, args.seed)
    out = Path(args.out) if args.out else root
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out / "train.csv", [rows[i] for i in train_idx])
    _write_manifest(out / "test.csv", [rows[i] for i in test_idx])
    print(f"wrote {len(train_idx)} rows to {out / 'train.csv'} "
          f"and {len(test_idx)} rows to {out / 'test.csv'}")
    return 0


def _load_splits(root: Path, cfg: dict) -> tuple[LabeledDataset, LabeledDataset]:
    if (root / "train.csv").is_file() and (root / "test.csv").is_file():
        train = load_dataset(root, "train.csv")
        # the test split must reuse the train split's class-id assignment
        test = load_dataset(root, "test.csv", class_names=train.class_names)
        return train, test
    from .preprocess import stratified_split

    full = load_dataset(root)
    return stratified_split(full, cfg["split_ratio"], cfg["seed"])


def _init_params(cfg_dict: dict, vit_cfg: ViTConfig, args) -> ViTParams:
    init_path = getattr(args, "init_weights", None)
    if init_path is None:
        return ViTParams.init(vit_cfg, cfg_dict["seed"])
    tensors, _ = checkpoint.load(init_path)
    reinit = bool(getattr(args, "reinit_head", False))
    checkpoint.validate_against_config(tensors, vit_cfg, allow_head_mismatch=reinit)
    if reinit:
        tensors = {n: a for n, a in tensors.items() if not n.startswith("head.")}
        tensors.update(reinit_head(vit_cfg, cfg_dict["seed"]))
    return ViTParams.from_arrays(vit_cfg, tensors)


def reinit_head(cfg: ViTConfig, seed: int) -> dict[str, np.ndarray]:
    """Fresh classification head: uniform in +-1/sqrt(D), seeded."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(cfg.dim)
    return {
        "head.weight": rng.uniform(-bound, bound, size=(cfg.dim, cfg.num_classes)).astype(np.float32),
        "head.bias": rng.uniform(-bound, bound, size=(cfg.num_classes,)).astype(np.float32),
    }


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    train_ds, test_ds = _load_splits(Path(args.data), cfg)
    num_classes = cfg["num_classes"] or train_ds.num_classes
    if num_classes != train_ds.num_classes:
        raise ConfigError(
            f"config says {num_classes} classes but the data has {train_ds.num_classes}"
        )
    vit_cfg = _vit_config(cfg, num_classes)
    params = _init_params(cfg, vit_cfg, args)
    model = ViT(vit_cfg, params, list(train_ds.class_names))
    _, logs = fit(model, train_ds, test_ds, _train_config(cfg), run_dir=args.out)
    best = min(logs, key=lambda l: l.test_loss)
    print(f"trained {len(logs)} epoch(s); best test loss {best.test_loss:.6f} "
          f"at epoch {best.epoch} (accuracy {best.test_accuracy:.2f}%)")
    return 0


def _load_model(ckpt_path) -> ViT:
    tensors, meta = checkpoint.load(ckpt_path)
    if "config" not in meta:
        raise DataError(f"checkpoint {ckpt_path} has no config metadata")
    cfg = ViTConfig.from_dict(meta["config"])
    checkpoint.validate_against_config(tensors, cfg)
    params = ViTParams.from_arrays(cfg, tensors, trainable=False)
    return ViT(cfg, params, list(meta.get("class_names") or []))


def _dataset_for_eval(data: str, model: ViT) -> LabeledDataset:
    path = Path(data)
    names = model.class_names or None
    if path.suffix == ".csv":
        return load_dataset(path.parent, path.name, class_names=names)
    return load_dataset(path, class_names=names)


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    ds = _dataset_for_eval(args.data, model)
    loss, report = evaluate(model, ds, batch_size=args.batch_size)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_predict(args) -> int:
    from PIL import Image, UnidentifiedImageError

    model = _load_model(args.checkpoint)
    try:
        with Image.open(args.image) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {args.image}: {exc}")
    sample = ImageSample(pixels, 0, source_id=str(args.image))
    x = preprocess_sample(sample, model.cfg.image_size)
    logits = model.forward(Tensor(x[None]))
    z = logits.data[0].astype(np.float64)
    e = np.exp(z - z.max())
    probs = e / e.sum()
    label = int(predict(logits)[0])
    names = model.class_names or [str(i) for i in range(model.cfg.num_classes)]
    print(json.dumps({
        "label": label,
        "className": names[label],
        "probabilities": [float(p) for p in probs],
    }, indent=2))
    return 0


def cmd_import_weights(args) -> int:
    cfg = load_run_config(args)
    tensors, meta = checkpoint.load(args.input)
    num_classes = args.num_classes or cfg["num_classes"]
    if num_classes is None:
        raise ConfigError("--num-classes (or config num_classes) is required")
    vit_cfg = _vit_config(cfg, num_classes)
    checkpoint.validate_against_config(tensors, vit_cfg,
                                       allow_head_mismatch=args.reinit_head)
    out_tensors = {n: a for n, a in tensors.items() if not n.startswith("head.")}
    if args.reinit_head:
        out_tensors.update(reinit_head(vit_cfg, cfg["seed"]))
    else:
        out_tensors["head.weight"] = tensors["head.weight"]
        out_tensors["head.bias"] = tensors["head.bias"]
    checkpoint.validate_against_config(out_tensors, vit_cfg)
    out_meta = {
        "config": vit_cfg.to_dict(),
        "class_names": meta.get("class_names") or [],
        "imported_from": str(args.input),
        "head_reinitialized": bool(args.reinit_head),
    }
    checkpoint.save(args.out, {n: out_tensors[n] for n in manifest_shapes(vit_cfg)}, out_meta)
    print(f"wrote fine-tune-ready checkpoint to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitforge",
        description="Vision Transformer engine: split, train, evaluate, predict.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        for key in ("image_size", "patch_size", "dim", "depth", "heads", "mlp_dim",
                    "num_classes", "epochs", "batch_size", "patience", "seed"):
            p.add_argument(f"--{key.replace('_', '-')}", type=int, dest=key)
        p.add_argument("--lr", type=float, dest="lr")
        p.add_argument("--split-ratio", type=float, dest="split_ratio")

    p = sub.add_parser("split", help="write stratified train/test manifest CSVs")
    p.add_argument("--data", required=True, help="dataset root containing labels.csv")
    p.add_argument("--ratio", type=float, default=0.85)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default: the data root)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model and write a run directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="run directory for log.jsonl and checkpoints")
    p.add_argument("--init-weights", dest="init_weights", help="starting checkpoint")
    p.add_argument("--reinit-head", action="store_true",
                   help="reinitialize the head when importing mismatched weights")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print the metrics report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root or manifest CSV")
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify a single image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("import-weights", help="validate and adapt a pre-trained checkpoint")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reinit-head", action="store_true")
    add_config_flags(p)
    p.set_defaults(func=cmd_import_weights)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, DimensionError, ContractError,
            UndefinedMetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except VitforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
