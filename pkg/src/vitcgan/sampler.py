"""Selective synthetic augmentation: truncated latents, confidence gating and
mixing accepted samples into a real training set."""

import json
import logging
import os
from dataclasses import dataclass

import numpy as np
import torch

from .config import SelectionConfig
from .data import LabeledDataset, concat, largest_remainder
from .errors import ConfigError, InputError

log = logging.getLogger(__name__)


def sample_truncated(n, z_dim, tau, seed=None, generator=None):
    """Standard normal entries resampled until every ``|z_ij| <= tau``."""
    if not tau > 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    if generator is None:
        generator = torch.Generator().manual_seed(0 if seed is None else int(seed))
    z = torch.randn(n, z_dim, generator=generator)
    bad = z.abs() > tau
    while bad.any():
        z[bad] = torch.randn(int(bad.sum()), generator=generator)
        bad = z.abs() > tau
    return z


def confidence_mask(probs, intended, conf_threshold):
    """Keep rows whose argmax equals the intended class with probability >= threshold."""
    probs = torch.as_tensor(probs)
    intended = torch.as_tensor(intended).long()
    conf, pred = probs.max(dim=1)
    return (pred == intended) & (conf >= conf_threshold)


@torch.no_grad()
def filter_by_confidence(images, intended, class_head, conf_threshold, batch_size=256):
    """Return ``(kept_images, kept_labels, mask)``; order is preserved.

    ``class_head`` maps an image batch to logits over the classes.
    """
    images = torch.as_tensor(images)
    intended = torch.as_tensor(intended).long()
    probs = torch.cat([torch.softmax(class_head(images[i:i + batch_size]), dim=1)
                       for i in range(0, len(images), batch_size)]) if len(images) else torch.zeros(0, 2)
    mask = confidence_mask(probs, intended, conf_threshold)
    return images[mask], intended[mask], mask


@torch.no_grad()
def synthesize(gen, labels, tau, seed, batch_size=64):
    """Generate images for the given class ids from truncated latents."""
    labels = torch.as_tensor(labels).long()
    z = sample_truncated(len(labels), gen.cfg.z_dim, tau, seed)
    was_training = gen.training
    gen.eval()
    out = torch.cat([gen(z[i:i + batch_size], labels[i:i + batch_size])
                     for i in range(0, len(labels), batch_size)]) if len(labels) else torch.zeros(0)
    gen.train(was_training)
    return out


@dataclass
class AugmentedSet:
    dataset: LabeledDataset
    n_real: int
    n_synthetic: int
    shortfall: int
    synthetic_index: np.ndarray


def build_augmented_set(real: LabeledDataset, pool: LabeledDataset, cfg: SelectionConfig, seed):
    """Append ``min(floor(ratio * |real|), |pool|)`` pool samples to ``real``.

    With ``class_balance`` the target is split evenly across classes; classes
    whose pool runs dry are topped up from the remaining classes.
    """
    if real is None or len(real) == 0:
        raise InputError("real dataset is empty")
    target = int(np.floor(cfg.ratio * len(real)))
    take = min(target, len(pool))
    shortfall = target - take
    if shortfall:
        log.warning("synthetic pool short by %d samples (%d requested, %d available)",
                    shortfall, target, len(pool))
    if take == 0:
        return AugmentedSet(real, len(real), 0, shortfall, np.zeros(0, dtype=np.int64))
    rng = np.random.default_rng(seed)
    if cfg.class_balance:
        per_class = [rng.permutation(np.flatnonzero(pool.labels == c)) for c in range(pool.n_classes)]
        quota = largest_remainder(np.full(pool.n_classes, take / pool.n_classes), take)
        have = np.array([len(p) for p in per_class])
        quota = np.minimum(quota, have)
        # redistribute any deficit to classes with spare samples, lowest class id first
        deficit = take - quota.sum()
        for c in range(pool.n_classes):
            extra = min(deficit, have[c] - quota[c])
            quota[c] += extra
            deficit -= extra
        chosen = np.concatenate([p[:q] for p, q in zip(per_class, quota)])
    else:
        chosen = rng.permutation(len(pool))[:take]
    chosen = np.sort(chosen)
    synth = pool.subset(chosen)
    synth.splits = np.array(["train"] * len(synth))
    return AugmentedSet(concat(real, synth), len(real), len(synth), shortfall, chosen)


def write_provenance(out_dir, **fields):
    path = os.path.join(out_dir, "provenance.json")
    with open(path, "w") as fh:
        json.dump(fields, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
