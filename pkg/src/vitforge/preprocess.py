"""Image preprocessing: normalize, permute, resize, split, and batch.

Raw samples are H x W x Ch uint8 RGB arrays. The pipeline scales them to
[0, 1], permutes to channel-first, resizes to the model's square input side
with bilinear interpolation, and stacks them into batches. No augmentation
of any kind is applied.
"""

from __future__ import annotations

import csv
import os
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DimensionError, SplitError
from .tensor import Tensor, default_dtype


@dataclass
class ImageSample:
    """One labeled image: H x W x 3 uint8 pixels plus an integer class id."""

    pixels: np.ndarray
    label: int
    source_id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionError(f"sample pixels must be H x W x 3, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionError(f"sample has empty extent: {px.shape}")
        self.pixels = px.astype(np.uint8, copy=False)


@dataclass
class LabeledDataset:
    """Ordered samples plus the class-id naming contract."""

    samples: list[ImageSample]
    num_classes: int
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [str(i) for i in range(self.num_classes)]
        if len(self.class_names) != self.num_classes:
            raise DataError(
                f"{len(self.class_names)} class names for {self.num_classes} classes"
            )
        for s in self.samples:
            if not 0 <= s.label < self.num_classes:
                raise DataError(
                    f"sample {s.source_id!r} has label {s.label}, "
                    f"valid range is [0, {self.num_classes})"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


@dataclass
class Batch:
    """Stacked model-ready images (values in [0, 1]) and their labels."""

    images: Tensor
    labels: np.ndarray

    def __post_init__(self):
        if self.images.shape[0] != len(self.labels):
            raise DimensionError(
                f"batch of {self.images.shape[0]} images has {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)


def normalize(raw) -> np.ndarray:
    """Scale 8-bit intensities to [0, 1] by dividing by 255."""
    px = raw.pixels if isinstance(raw, ImageSample) else np.asarray(raw)
    if px.dtype != np.uint8:
        raise DimensionError(f"normalize expects uint8 input, got {px.dtype}")
    dt = default_dtype()
    return px.astype(dt) / dt.type(255)


def permute_hwc_to_chw(x: np.ndarray) -> np.ndarray:
    """Reorder H x W x Ch to Ch x H x W without changing any value."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise DimensionError(f"permute expects a 3-axis array, got shape {x.shape}")
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def _axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source indices and blend weights for one axis of a bilinear resize.

    Sampling uses half-pixel centers: source = (i + 0.5) * (in/out) - 0.5,
    clamped to the valid range so edges repeat.
    """
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize(x: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resize of a Ch x H x W array to Ch x side x side."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise DimensionError(f"resize expects Ch x H x W input, got shape {x.shape}")
    if side < 1:
        raise DimensionError(f"resize target side must be >= 1, got {side}")
    _, h, w = x.shape
    r0, r1, fr = _axis_coords(h, side)
    c0, c1, fc = _axis_coords(w, side)
    wr = fr.astype(x.dtype)[:, None]
    wc = fc.astype(x.dtype)[None, :]
    x00 = x[:, r0[:, None], c0[None, :]]
    x01 = x[:, r0[:, None], c1[None, :]]
    x10 = x[:, r1[:, None], c0[None, :]]
    x11 = x[:, r1[:, None], c1[None, :]]
    return (
        x00 * (1 - wr) * (1 - wc)
        + x01 * (1 - wr) * wc
        + x10 * wr * (1 - wc)
        + x11 * wr * wc
    )


def preprocess_sample(sample: ImageSample, side: int) -> np.ndarray:
    """normalize -> permute -> resize, producing a Ch x side x side array."""
    return resize(permute_hwc_to_chw(normalize(sample)), side)


def split_indices(labels, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified split of sample indices.

    Per class, round(train_fraction * n) samples go to train (round half up),
    clamped so each side keeps at least one sample. Membership is decided by
    a seeded shuffle; the returned index arrays preserve dataset order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must be in (0, 1), got {train_fraction}")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    train_mask = np.zeros(len(labels), dtype=bool)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < 2:
            raise SplitError(
                f"class {cls} has {len(idx)} sample(s); need at least 2 to split"
            )
        n_train = int(np.floor(train_fraction * len(idx) + 0.5))
        n_train = min(max(n_train, 1), len(idx) - 1)
        shuffled = rng.permutation(idx)
        train_mask[shuffled[:n_train]] = True
    return np.flatnonzero(train_mask), np.flatnonzero(~train_mask)


def stratified_split(ds: LabeledDataset, train_fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Split a dataset per class with a seeded deterministic shuffle."""
    present = set(int(c) for c in np.unique(ds.labels())) if len(ds) else set()
    for cls in range(ds.num_classes):
        if cls not in present:
            raise SplitError(f"class {cls} has 0 samples; need at least 2 to split")
    train_idx, test_idx = split_indices(ds.labels(), train_fraction, seed)
    make = lambda idx: LabeledDataset(
        [ds.samples[i] for i in idx], ds.num_classes, list(ds.class_names)
    )
    return make(train_idx), make(test_idx)


@dataclass
class TensorDataset:
    """Preprocessed images (n x Ch x S x S, values in [0, 1]) with labels."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DimensionError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.class_names:
            self.class_names = [str(i) for i in range(self.num_classes)]

    def __len__(self) -> int:
        return len(self.labels)

    def batches(self, batch_size: int, shuffle_seed: int | None = None, epoch: int = 0):
        """Yield Batch objects; order is a seeded epoch-indexed permutation
        when shuffle_seed is given, dataset order otherwise."""
        if batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {batch_size}")
        n = len(self)
        if shuffle_seed is None:
            order = np.arange(n)
        else:
            order = np.random.default_rng([shuffle_seed, epoch]).permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yield Batch(Tensor(self.images[idx]), self.labels[idx])


def preprocess_dataset(ds: LabeledDataset, side: int) -> TensorDataset:
    """Run the full preprocessing pipeline over every sample once."""
    if len(ds) == 0:
        images = np.zeros((0, 3, side, side), dtype=default_dtype())
    else:
        images = np.stack([preprocess_sample(s, side) for s in ds.samples])
    return TensorDataset(images, ds.labels(), ds.num_classes, list(ds.class_names))


def make_batches(ds: LabeledDataset, batch_size: int, side: int,
                 shuffle_seed: int | None = None, epoch: int = 0) -> list[Batch]:
    """Preprocess and batch a dataset; the final batch may be smaller."""
    tds = preprocess_dataset(ds, side)
    return list(tds.batches(batch_size, shuffle_seed=shuffle_seed, epoch=epoch))


def worker_threads() -> int:
    """Worker-thread cap from VITFORGE_THREADS (default 1 = synchronous)."""
    raw = os.environ.get("VITFORGE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"VITFORGE_THREADS must be an integer, got {raw!r}")


_STOP = object()


def prefetch(iterator, capacity: int = 2):
    """Run an iterator on a producer thread behind a bounded queue.

    Order is preserved (single producer, FIFO). Enabled only when
    VITFORGE_THREADS allows more than one worker; otherwise the iterator is
    returned unchanged.
    """
    if worker_threads() < 2:
        return iterator
    q: queue.Queue = queue.Queue(maxsize=capacity)

    def produce():
        try:
            for item in iterator:
                q.put(item)
            q.put(_STOP)
        except BaseException as exc:  # surfaced on the consumer side
            q.put(exc)

    threading.Thread(target=produce, daemon=True).start()

    def consume():
        while True:
            item = q.get()
            if item is _STOP:
                return
            if isinstance(item, BaseException):
                raise item
            yield item

    return consume()


# ---------------------------------------------------------------------------
# Dataset directory layout: root/labels.csv (header `path,label`) + images
# ---------------------------------------------------------------------------

def read_manifest(root: Path, manifest: str = "labels.csv") -> list[tuple[str, str]]:
    """Read (path, label-name) rows from a manifest CSV."""
    root = Path(root)
    mpath = root / manifest
    if not mpath.is_file():
        raise ConfigError(f"manifest not found: {mpath}")
    with open(mpath, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "label"]:
            raise DataError(f"{mpath}: expected header 'path,label', got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DataError(f"{mpath}:{lineno}: expected 2 columns, got {len(row)}")
            rows.append((row[0], row[1]))
    return rows


def class_ids_for(names) -> dict[str, int]:
    """Assign class ids by sorted-unique class-name order."""
    return {name: i for i, name in enumerate(sorted(set(names)))}


def load_dataset(root, manifest: str = "labels.csv",
                 class_names: list[str] | None = None) -> LabeledDataset:
    """Decode a dataset directory into memory.

    When `class_names` is given (e.g. from a checkpoint), labels must be
    drawn from it; otherwise ids are assigned by sorted-unique label order.
    """
    from PIL import Image

    root = Path(root)
    rows = read_manifest(root, manifest)
    if class_names is None:
        mapping = class_ids_for(label for _, label in rows)
    else:
        mapping = {name: i for i, name in enumerate(class_names)}
    samples = []
    for rel, label in rows:
        if label not in mapping:
            raise DataError(f"unknown class {label!r}; known: {sorted(mapping)}")
        path = root / rel
        if not path.is_file():
            raise DataError(f"image listed in manifest is missing: {path}")
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        samples.append(ImageSample(pixels, mapping[label], source_id=rel))
    names = sorted(mapping, key=mapping.get)
    return LabeledDataset(samples, len(names), names)


# ---------------------------------------------------------------------------
# Packed fixture format: checkpoint container with `images` and `labels`
# ---------------------------------------------------------------------------

def save_packed_fixture(path, images: np.ndarray, labels: np.ndarray,
                        class_names: list[str] | None = None) -> None:
    """Write a preprocessed dataset as a checkpoint container fixture."""
    from . import checkpoint

    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    meta = {"kind": "dataset-fixture"}
    if class_names:
        meta["class_names"] = list(class_names)
    checkpoint.save(path, {"images": images, "labels": labels}, meta)


def load_packed_fixture(path) -> TensorDataset:
    from . import checkpoint

    tensors, meta = checkpoint.load(path)
    for key in ("images", "labels"):
        if key not in tensors:
            raise DataError(f"fixture {path} is missing tensor {key!r}")
    labels = tensors["labels"]
    names = meta.get("class_names")
    num_classes = len(names) if names else int(labels.max(initial=-1)) + 1
    return TensorDataset(tensors["images"], labels, num_classes, names or [])
