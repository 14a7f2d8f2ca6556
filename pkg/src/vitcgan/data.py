"""Datasets: canonical image-folder ingestion, stratified subsampling and the
procedural two-class toy set used for desk-scale runs.

On disk a dataset is a directory of PNG files plus ``manifest.csv`` with the
header ``path,label,split``. In memory images are float32 ``(N, 3, H, W)``
arrays scaled to [-1, 1] via ``pixel / 127.5 - 1``.
"""

import csv
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from PIL import Image

from .errors import ConfigError, InputError, LoadError

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.csv"


def to_unit_range(pixels):
    return np.asarray(pixels, dtype=np.float32) / 127.5 - 1.0


def to_uint8(images):
    return np.clip(np.round((np.asarray(images, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


@dataclass
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    splits: np.ndarray = None
    paths: Optional[List[str]] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) == 0:
            raise InputError("dataset is empty")
        if self.images is not None and len(self.images) != len(self.labels):
            raise InputError("images and labels differ in length")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise InputError(f"labels outside [0, {self.n_classes})")
        if self.splits is None:
            self.splits = np.array(["train"] * len(self.labels))
        self.splits = np.asarray(self.splits)

    def __len__(self):
        return len(self.labels)

    @property
    def resolution(self):
        return tuple(self.images.shape[2:])

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            None if self.images is None else self.images[idx], self.labels[idx], self.n_classes,
            self.splits[idx], None if self.paths is None else [self.paths[i] for i in idx])

    def split(self, tag):
        if tag not in SPLITS:
            raise InputError(f"unknown split {tag!r}")
        return self.subset(np.flatnonzero(self.splits == tag))

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


def concat(a: LabeledDataset, b: LabeledDataset):
    if a.n_classes != b.n_classes:
        raise InputError("cannot concatenate datasets with different class counts")
    paths = None
    if a.paths is not None and b.paths is not None:
        paths = a.paths + b.paths
    return LabeledDataset(np.concatenate([a.images, b.images]), np.concatenate([a.labels, b.labels]),
                          a.n_classes, np.concatenate([a.splits, b.splits]), paths)


# -- ingestion ---------------------------------------------------------------

def read_manifest(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "label", "split"]:
            raise InputError(f"{path}: manifest header must be exactly 'path,label,split'")
        return list(reader)


def load_dataset(root, manifest=MANIFEST, split=None, n_classes=None):
    """Decode every manifest row (in manifest order), optionally keeping one split.

    All problems are collected and raised together as a :class:`LoadError`.
    """
    rows = read_manifest(os.path.join(root, manifest))
    if split is not None and split not in SPLITS:
        raise InputError(f"unknown split {split!r}")
    images, labels, splits, paths, problems = [], [], [], [], []
    resolution = None
    for i, row in enumerate(rows):
        if row["split"] not in SPLITS:
            problems.append((i, f"bad split {row['split']!r}"))
            continue
        try:
            label = int(row["label"])
            if label < 0 or (n_classes is not None and label >= n_classes):
                raise ValueError
        except ValueError:
            problems.append((i, f"bad label {row['label']!r}"))
            continue
        if split is not None and row["split"] != split:
            continue
        full = os.path.join(root, row["path"])
        if not os.path.isfile(full):
            problems.append((i, f"missing file {row['path']}"))
            continue
        with Image.open(full) as im:
            arr = np.asarray(im.convert("RGB"))
        if resolution is None:
            resolution = arr.shape[:2]
        elif arr.shape[:2] != resolution:
            problems.append((i, f"resolution {arr.shape[:2]} != {resolution}"))
            continue
        images.append(arr)
        labels.append(label)
        splits.append(row["split"])
        paths.append(row["path"])
    if problems:
        raise LoadError(problems)
    if not images:
        raise InputError(f"no items loaded from {root} (split={split})")
    imgs = to_unit_range(np.stack(images)).transpose(0, 3, 1, 2).copy()
    n_classes = n_classes or int(max(labels)) + 1
    return LabeledDataset(imgs, labels, max(n_classes, 2), np.array(splits), paths)


def save_image_folder(ds: LabeledDataset, out_dir, prefix=""):
    """Write PNGs plus ``manifest.csv``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    pixels = to_uint8(ds.images).transpose(0, 2, 3, 1)
    rows = []
    for i, (img, label, split) in enumerate(zip(pixels, ds.labels, ds.splits)):
        rel = os.path.join(str(split), str(int(label)), f"{prefix}{i:06d}.png")
        os.makedirs(os.path.dirname(os.path.join(out_dir, rel)), exist_ok=True)
        Image.fromarray(img).save(os.path.join(out_dir, rel), optimize=False)
        rows.append((rel, int(label), str(split)))
    path = os.path.join(out_dir, MANIFEST)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "split"])
        w.writerows(rows)
    ds.paths = [r[0] for r in rows]
    return path


# -- subsampling -------------------------------------------------------------

def largest_remainder(quotas, total):
    """Round non-negative real ``quotas`` to integers summing to ``total``."""
    quotas = np.asarray(quotas, dtype=np.float64)
    base = np.floor(quotas).astype(np.int64)
    rest = total - base.sum()
    order = np.argsort(-(quotas - base), kind="stable")
    base[order[:rest]] += 1
    return base


def stratified_indices(labels, fraction, seed):
    labels = np.asarray(labels)
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    total = int(np.floor(fraction * len(labels)))
    quota = largest_remainder(counts * fraction, total)
    picked = []
    for c, q in zip(classes, quota):
        members = np.flatnonzero(labels == c)
        picked.append(rng.permutation(members)[:q])
    return np.sort(np.concatenate(picked))


def subsample_fraction(ds: LabeledDataset, fraction, seed):
    """Stratified ``floor(fraction * N)`` subset, deterministic per seed, no duplicates."""
    return ds.subset(stratified_indices(ds.labels, fraction, seed))


# -- toy data ----------------------------------------------------------------

_BACKGROUND = np.array([0.93, 0.80, 0.87])
# foreground colors differ by less than the per-image jitter: texture carries the class
_FOREGROUND = {0: np.array([0.49, 0.22, 0.52]), 1: np.array([0.53, 0.22, 0.48])}


def _blob_mask(rng, res):
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64)
    mask = np.zeros((res, res))
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0, res, size=2)
        r = rng.uniform(0.08, 0.16) * res
        mask += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    return np.clip(mask * 1.3, 0, 1)


def _stripe_mask(rng, res):
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64) / res
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(2.5, 4.5)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    return 1.0 / (1.0 + np.exp(-4.0 * wave))


def toy_image(rng, label, res):
    mask = _blob_mask(rng, res) if label == 0 else _stripe_mask(rng, res)
    bg = _BACKGROUND + rng.uniform(-0.05, 0.05, 3)
    fg = _FOREGROUND[label] + rng.uniform(-0.06, 0.06, 3)
    img = bg * (1 - mask[..., None]) + fg * mask[..., None]
    img = img + rng.normal(0, 0.08, img.shape)
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def make_toy_dataset(n, resolution=32, seed=0):
    """Two-class procedural textures: 0 = soft blobs, 1 = oriented stripes.

    Exactly ``n/2`` per class, split 75/12.5/12.5 within each class.
    """
    if n <= 0 or n % 2:
        raise ConfigError("n must be a positive even number")
    if resolution not in (32, 64):
        raise ConfigError("toy resolution must be 32 or 64")
    rng = np.random.default_rng(seed)
    per = n // 2
    n_train = int(per * 0.75)
    n_val = int(per * 0.125)
    tags = np.array(["train"] * n_train + ["val"] * n_val + ["test"] * (per - n_train - n_val))
    labels = np.repeat([0, 1], per)
    order = rng.permutation(n)
    labels = labels[order]
    splits = np.concatenate([tags, tags])[order]
    pixels = np.stack([toy_image(rng, int(c), resolution) for c in labels])
    images = to_unit_range(pixels).transpose(0, 3, 1, 2).copy()
    return LabeledDataset(images, labels, 2, splits)
