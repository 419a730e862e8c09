"""Seismic image/mask datasets: disk I/O, input preparation, splitting, batching
and a synthetic generator for desk-scale experiments."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, LoadError, ValidationError
from .imageio import IMAGE_EXTENSIONS, read_gray, write_gray
from .model_arch import INPUT_HW
from .tensor_core import resize_nearest_forward

__all__ = [
    "NATIVE_HW",
    "MASK_THRESHOLD",
    "Sample",
    "Dataset",
    "SplitConfig",
    "Ellipse",
    "load_dataset",
    "save_dataset",
    "prepare_input",
    "prepare_images",
    "split",
    "kfold",
    "batches",
    "synth_sample",
    "synth_generate",
]

NATIVE_HW = (101, 101)
MASK_THRESHOLD = 128


@dataclass
class Sample:
    image: np.ndarray  # (1, 101, 101), values in [0, 1]
    mask: np.ndarray  # (1, 101, 101), values in {0, 1}
    id: str


@dataclass
class Dataset:
    samples: list = field(default_factory=list)
    provenance: str = "disk"

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValidationError("sample ids must be unique")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def ids(self):
        return [s.id for s in self.samples]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], self.provenance)

    def images(self):
        """Stacked ``(N, 1, 101, 101)`` image array."""
        return np.stack([s.image for s in self.samples]) if self.samples else np.empty((0, 1, *NATIVE_HW))

    def masks(self):
        return np.stack([s.mask for s in self.samples]) if self.samples else np.empty((0, 1, *NATIVE_HW))


@dataclass
class SplitConfig:
    train_fraction: float = 0.8
    shuffle_seed: int = 0


def _index_dir(directory):
    found = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in IMAGE_EXTENSIONS:
            continue
        if stem in found:
            raise LoadError(f"{directory}: more than one file for id {stem!r}")
        found[stem] = os.path.join(directory, name)
    return found


def _read_native(path):
    pixels = read_gray(path)
    if pixels.shape != NATIVE_HW:
        raise DimensionError(
            f"{path}: expected {NATIVE_HW[0]}x{NATIVE_HW[1]} pixels, got {pixels.shape[0]}x{pixels.shape[1]}"
        )
    return pixels


def load_dataset(images_dir, masks_dir=None) -> Dataset:
    """Load ``<id>.png|pgm`` image/mask pairs, sorted by id.

    With a single argument, ``images_dir`` is a root holding ``images/`` and
    ``masks/`` subdirectories.
    """
    if masks_dir is None:
        images_dir, masks_dir = os.path.join(images_dir, "images"), os.path.join(images_dir, "masks")
    for d in (images_dir, masks_dir):
        if not os.path.isdir(d):
            raise LoadError(f"{d}: not a directory")
    images, masks = _index_dir(images_dir), _index_dir(masks_dir)
    samples = []
    for sid in sorted(images):
        if sid not in masks:
            raise LoadError(f"no mask file for image id {sid!r}")
        img = _read_native(images[sid]).astype(np.float64) / 255.0
        mask = (_read_native(masks[sid]) >= MASK_THRESHOLD).astype(np.float64)
        samples.append(Sample(img[None], mask[None], sid))
    return Dataset(samples, "disk")


def save_dataset(dataset: Dataset, root, ext=".pgm"):
    """Write ``root/images/<id><ext>`` and ``root/masks/<id><ext>`` (masks as 0/255)."""
    img_dir, mask_dir = os.path.join(root, "images"), os.path.join(root, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    for s in dataset:
        pixels = np.clip(np.rint(s.image[0] * 255.0), 0, 255).astype(np.uint8)
        write_gray(os.path.join(img_dir, s.id + ext), pixels)
        write_gray(os.path.join(mask_dir, s.id + ext), (s.mask[0] > 0.5).astype(np.uint8) * 255)


def prepare_images(images):
    """Resize a ``(N, 1, h, w)`` image stack to the network's 128x128 input."""
    return resize_nearest_forward(np.asarray(images, dtype=np.float64), *INPUT_HW)


def prepare_input(sample: Sample):
    """``(1, 1, 128, 128)`` network input for one sample; the mask is left alone."""
    return prepare_images(sample.image[None])


def _permutation(n, seed):
    return np.random.default_rng(seed).permutation(n)


def split(dataset: Dataset, cfg: SplitConfig = SplitConfig()):
    """Seeded shuffle, then a prefix/suffix cut into ``(train, test)``.

    The training part holds ``round(train_fraction * N)`` samples, kept in
    ``[1, N - 1]`` so neither side is empty.
    """
    n = len(dataset)
    if not 0.0 < cfg.train_fraction < 1.0:
        raise ValidationError(f"train_fraction must lie in (0, 1), got {cfg.train_fraction}")
    if n < 2:
        raise ValidationError("splitting needs at least two samples")
    n_train = min(max(int(math.floor(cfg.train_fraction * n + 0.5)), 1), n - 1)
    order = _permutation(n, cfg.shuffle_seed)
    return dataset.subset(order[:n_train]), dataset.subset(order[n_train:])


def kfold(dataset: Dataset, k: int, seed: int = 0):
    """``k`` (train, validation) pairs over contiguous folds of a seeded shuffle.

    Fold sizes differ by at most one; the first ``N % k`` folds get the extra sample.
    """
    n = len(dataset)
    if k < 2:
        raise ValidationError(f"k must be at least 2, got {k}")
    if k > n:
        raise ValidationError(f"k={k} exceeds the number of samples ({n})")
    order = _permutation(n, seed)
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    bounds = np.cumsum([0] + sizes)
    pairs = []
    for i in range(k):
        val = order[bounds[i] : bounds[i + 1]]
        train = np.concatenate([order[: bounds[i]], order[bounds[i + 1] :]])
        pairs.append((dataset.subset(train), dataset.subset(val)))
    return pairs


def batches(dataset: Dataset, batch_size: int, shuffle_seed: int, epoch: int):
    """Yield ``(inputs (n,1,128,128), targets (n,1,101,101))`` for one epoch.

    The order is reshuffled per epoch from ``(shuffle_seed, epoch)``; a short
    final batch is kept.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    order = _permutation(len(dataset), [shuffle_seed, epoch])
    for start in range(0, len(order), batch_size):
        chunk = [dataset.samples[i] for i in order[start : start + batch_size]]
        yield (
            prepare_images(np.stack([s.image for s in chunk])),
            np.stack([s.mask for s in chunk]),
        )


# -- synthetic data ---------------------------------------------------------

@dataclass(frozen=True)
class Ellipse:
    cy: float
    cx: float
    ry: float
    rx: float
    angle: float
    intensity: float

    def contains(self, y, x):
        """Point (or array) membership test, boundary included."""
        dy, dx = y - self.cy, x - self.cx
        c, s = np.cos(self.angle), np.sin(self.angle)
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (u / self.rx) ** 2 + (v / self.ry) ** 2 <= 1.0


def _background(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    warp = rng.uniform(2.0, 8.0) * np.sin(2 * np.pi * xx / rng.uniform(80.0, 200.0) + rng.uniform(0, 2 * np.pi))
    depth = yy + warp
    img = 0.35 + 0.1 * np.sin(2 * np.pi * depth / rng.uniform(18.0, 40.0) + rng.uniform(0, 2 * np.pi))
    img += 0.05 * np.sin(2 * np.pi * depth / rng.uniform(6.0, 12.0) + rng.uniform(0, 2 * np.pi))
    return img + 0.02 * rng.standard_normal((h, w))


def synth_sample(seed: int, index: int, n_ellipses: int | None = None):
    """One synthetic sample, fully determined by ``(seed, index)``.

    The image is a horizontally layered, gently warped background with up to
    three bright filled ellipses; the mask is exactly the union of their
    interiors. Returns ``(Sample, [Ellipse, ...])``.
    """
    rng = np.random.default_rng([seed, index])
    h, w = NATIVE_HW
    img = _background(rng, h, w)
    if n_ellipses is None:
        n_ellipses = int(rng.integers(0, 4))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((h, w), dtype=bool)
    ellipses = []
    for _ in range(n_ellipses):
        e = Ellipse(
            cy=float(rng.uniform(0, h - 1)),
            cx=float(rng.uniform(0, w - 1)),
            ry=float(rng.uniform(10.0, 30.0)),
            rx=float(rng.uniform(10.0, 30.0)),
            angle=float(rng.uniform(0, np.pi)),
            intensity=float(rng.uniform(0.8, 0.95)),
        )
        inside = e.contains(yy, xx)
        img[inside] = e.intensity + 0.02 * rng.standard_normal(int(inside.sum()))
        mask |= inside
        ellipses.append(e)
    sample = Sample(np.clip(img, 0.0, 1.0)[None], mask.astype(np.float64)[None], f"synth_{seed}_{index:05d}")
    return sample, ellipses


def synth_generate(n: int, seed: int = 0) -> Dataset:
    if n < 1:
        raise ValidationError("n must be >= 1")
    return Dataset([synth_sample(seed, i)[0] for i in range(n)], "synthetic")
