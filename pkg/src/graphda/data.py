"""Datasets, IDX file I/O, synthetic domain shifts, and the sampling/pairing
protocol used for training.

IDX files are the big-endian, magic-prefixed format of the classic digit
datasets (0x00000803 for image tensors, 0x00000801 for label vectors).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace

import numpy as np

from .graphs import DomainTag

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    x: np.ndarray  # (N, ...) float64 features, pixels in [0, 1] for images
    y: np.ndarray  # (N,) int class ids
    domain: DomainTag
    name: str
    num_classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("feature/label count mismatch")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError("labels outside [0, num_classes)")

    def __len__(self):
        return self.y.size

    def subset(self, idx):
        return replace(self, x=self.x[idx], y=self.y[idx])


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise ValueError(
            f"truncated IDX file {f.name}: wanted {n} bytes for {what} "
            f"at offset {f.tell() - len(data)}, got {len(data)}"
        )
    return data


def load_idx_images(path):
    """Images from an IDX file, scaled to [0, 1]; shape (N, H, W)."""
    with open(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, "header"))
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"bad image magic 0x{magic:08x} in {path}")
        raw = _read_exact(f, count * rows * cols, "pixel data")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)
    return pixels.astype(np.float64) / 255.0


def load_idx_labels(path):
    with open(path, "rb") as f:
        magic, count = struct.unpack(">ii", _read_exact(f, 8, "header"))
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"bad label magic 0x{magic:08x} in {path}")
        raw = _read_exact(f, count, "label data")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def save_idx_images(path, images):
    """Write (N, H, W) images (floats in [0,1] or uint8) as an IDX file."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.round(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, n, h, w))
        f.write(images.tobytes())


def save_idx_labels(path, labels):
    labels = np.asarray(labels)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.astype(np.uint8).tobytes())


def bilinear_resize(images, out_h, out_w):
    """Bilinear resampling of (N, H, W) image stacks."""
    images = np.asarray(images, dtype=np.float64)
    n, h, w = images.shape
    ys = np.linspace(0, h - 1, out_h)
    xs = np.linspace(0, w - 1, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    top = images[:, y0][:, :, x0] * (1 - fx) + images[:, y0][:, :, x1] * fx
    bot = images[:, y1][:, :, x0] * (1 - fx) + images[:, y1][:, :, x1] * fx
    return top * (1 - fy) + bot * fy


def pad_images(images, out_hw):
    """Center-pad (N, H, W) images with zeros up to out_hw x out_hw."""
    n, h, w = images.shape
    if h > out_hw or w > out_hw:
        raise ValueError(f"cannot pad {h}x{w} down to {out_hw}x{out_hw}")
    top = (out_hw - h) // 2
    left = (out_hw - w) // 2
    out = np.zeros((n, out_hw, out_hw))
    out[:, top:top + h, left:left + w] = images
    return out


def load_digit_dataset(images_path, labels_path, domain, name, num_classes=10,
                       target_hw=None, harmonize="resize"):
    """Load an IDX image/label pair into a Dataset.

    target_hw brings differently-sized images to a common resolution,
    either by bilinear `resize` (default) or zero `pad`.
    """
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"{images_path} holds {images.shape[0]} images but "
            f"{labels_path} holds {labels.shape[0]} labels"
        )
    if target_hw is not None and images.shape[1:] != (target_hw, target_hw):
        if harmonize == "resize":
            images = bilinear_resize(images, target_hw, target_hw)
        elif harmonize == "pad":
            images = pad_images(images, target_hw)
        else:
            raise ValueError(f"unknown harmonize mode {harmonize!r}")
    return Dataset(images[:, None, :, :], labels, domain, name, num_classes)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, name, files):
    """Plain-text key=value manifest: dataset name, file paths, checksums."""
    lines = [f"name={name}"]
    for key, file_path in files.items():
        lines.append(f"path.{key}={file_path}")
        lines.append(f"checksum.{key}={sha256_file(file_path)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(path):
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                out[key] = value
    return out


@dataclass(frozen=True)
class ShiftConfig:
    """Affine domain shift: rotate the first two feature dimensions by
    `angle` radians, translate by `translation`, scale the noise."""

    angle: float = 0.0
    translation: tuple = ()
    noise_scale: float = 1.0


def synth_shift(n_per_class, num_classes, dim, shift: ShiftConfig, seed):
    """Gaussian-blob source domain and an affinely shifted target domain.

    Class means sit on a circle of radius 4 in the first two dimensions
    (zero elsewhere), unit noise. The target applies the same affine map
    to every class, so the class-conditional structure survives the shift.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if dim < 2:
        raise ValueError("need at least 2 feature dimensions")
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, dim))
    means[:, 0] = 4.0 * np.cos(angles)
    means[:, 1] = 4.0 * np.sin(angles)

    def draw(noise_scale):
        xs, ys = [], []
        for k in range(num_classes):
            xs.append(means[k] + noise_scale * rng.standard_normal((n_per_class, dim)))
            ys.append(np.full(n_per_class, k))
        return np.concatenate(xs), np.concatenate(ys)

    x_s, y_s = draw(1.0)
    x_t, y_t = draw(shift.noise_scale)

    rot = np.eye(dim)
    c, s = np.cos(shift.angle), np.sin(shift.angle)
    rot[0, 0], rot[0, 1], rot[1, 0], rot[1, 1] = c, -s, s, c
    t = np.zeros(dim)
    if len(shift.translation):
        t[:len(shift.translation)] = shift.translation
    x_t = x_t @ rot.T + t

    source = Dataset(x_s, y_s, DomainTag.SOURCE, "synth-source", num_classes)
    target = Dataset(x_t, y_t, DomainTag.TARGET, "synth-target", num_classes)
    return source, target


def sample_protocol(ds: Dataset, per_class, seed):
    """Draw `per_class` samples per class without replacement.

    Returns (train, test) where test is the untouched complement. Raises
    if a class is short of samples or would be left with an empty test set.
    """
    rng = np.random.default_rng(seed)
    train_idx = []
    for k in range(ds.num_classes):
        pool = np.flatnonzero(ds.y == k)
        if pool.size < per_class:
            raise ValueError(f"class {k} has {pool.size} samples, need {per_class}")
        if pool.size == per_class:
            raise ValueError(f"class {k} would have an empty test split")
        train_idx.append(rng.choice(pool, size=per_class, replace=False))
    train_idx = np.sort(np.concatenate(train_idx))
    mask = np.ones(len(ds), dtype=bool)
    mask[train_idx] = False
    return ds.subset(train_idx), ds.subset(np.flatnonzero(mask))


@dataclass
class PairSet:
    """Parallel source/target index lists with same-class flags."""

    source_idx: np.ndarray
    target_idx: np.ndarray
    alpha: np.ndarray  # 1 where labels agree

    def __len__(self):
        return self.alpha.size

    def subset(self, idx):
        return PairSet(self.source_idx[idx], self.target_idx[idx], self.alpha[idx])


def make_pairs(source: Dataset, target: Dataset, ratio=3.0, seed=0):
    """Cartesian product of the two sample sets, with negative pairs
    subsampled down to at most `ratio` times the positive count."""
    if len(source) == 0 or len(target) == 0:
        raise ValueError("both datasets must be non-empty")
    src, tgt = np.meshgrid(np.arange(len(source)), np.arange(len(target)), indexing="ij")
    src, tgt = src.ravel(), tgt.ravel()
    alpha = (source.y[src] == target.y[tgt]).astype(np.int64)
    pos = np.flatnonzero(alpha == 1)
    neg = np.flatnonzero(alpha == 0)
    if pos.size == 0:
        raise ValueError("no positive pairs: source and target label sets are disjoint")
    keep_neg = min(neg.size, int(ratio * pos.size))
    rng = np.random.default_rng(seed)
    neg = rng.choice(neg, size=keep_neg, replace=False)
    idx = np.sort(np.concatenate([pos, neg]))
    return PairSet(src[idx], tgt[idx], alpha[idx])


def _partition_sizes(n, batch_size):
    nb = max(1, n // batch_size)
    base = n // nb
    rem = n % nb
    return [base + 1] * rem + [base] * (nb - rem)


def epoch_batches(pairs: PairSet, target: Dataset, batch_size, rng):
    """One shuffled epoch of pair batches, each spanning >= 2 target classes.

    The concatenation of the returned batches is a permutation of `pairs`.
    """
    classes = target.y[pairs.target_idx]
    if np.unique(classes).size < 2:
        raise ValueError("pair set spans a single target class")
    order = rng.permutation(len(pairs))
    batches = []
    start = 0
    for size in _partition_sizes(len(pairs), batch_size):
        batches.append(list(order[start:start + size]))
        start += size
    for b, batch in enumerate(batches):
        batch_classes = classes[batch]
        if np.unique(batch_classes).size >= 2:
            continue
        lone = batch_classes[0]
        fixed = False
        for other in batches:
            if other is batch:
                continue
            for j, cand in enumerate(other):
                if classes[cand] == lone:
                    continue
                rest = [e for i, e in enumerate(other) if i != j]
                if np.unique(np.append(classes[rest], lone)).size < 2:
                    continue
                other[j], batch[0] = batch[0], cand
                fixed = True
                break
            if fixed:
                break
        if not fixed:
            raise RuntimeError("could not assemble multi-class batches")
    return [pairs.subset(np.array(b)) for b in batches]


def stratified_batches(pairs: PairSet, target: Dataset, batch_size, seed):
    """Endless stream of pair batches, reshuffled every epoch."""
    rng = np.random.default_rng(seed)
    while True:
        yield from epoch_batches(pairs, target, batch_size, rng)
