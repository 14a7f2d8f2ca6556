"""Downstream classifier harness for augmentation experiments.

Two classifier kinds are built in:

* ``reference`` - a small MLP on 2x average-pooled pixels (fast, desk scale);
* ``model-head`` - the discriminator's classification pathway, optionally
  initialised from a GAN checkpoint and fine-tuned.

Training uses horizontal flips as the only augmentation, so any gain from
synthetic data is attributable to the synthetic samples themselves.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DiscriminatorConfig
from .data import LabeledDataset
from .discriminator import Discriminator
from .errors import ConfigError, InputError
from .metrics import MetricsReport, UndefinedAUCError, classification_report

log = logging.getLogger(__name__)


class ReferenceClassifier(nn.Module):
    def __init__(self, resolution=(32, 32), n_classes=2, hidden=128, dropout=0.2):
        super().__init__()
        d = 3 * (resolution[0] // 2) * (resolution[1] // 2)
        self.fc1 = nn.Linear(d, hidden)
        self.drop = nn.Dropout(dropout)
        self.fc2 = nn.Linear(hidden, n_classes)

    def features(self, x):
        return F.gelu(self.fc1(F.avg_pool2d(x, 2).flatten(1)))

    def forward(self, x):
        return self.fc2(self.drop(self.features(x)))


class HeadClassifier(nn.Module):
    """Wraps a discriminator so only its class pathway is used."""

    def __init__(self, disc: Discriminator):
        super().__init__()
        self.disc = disc

    def features(self, x):
        return self.disc.tokens(x)[:, 0]

    def forward(self, x):
        return self.disc.classify(x)


@dataclass
class ClassifierSpec:
    kind: str = "reference"
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    disc_config: Optional[DiscriminatorConfig] = None
    init_state: Optional[dict] = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("reference", "model-head"):
            raise ConfigError(f"unknown classifier kind {self.kind!r}")


def build_classifier(spec: ClassifierSpec, resolution, n_classes):
    if spec.kind == "reference":
        return ReferenceClassifier(resolution, n_classes)
    disc = Discriminator(spec.disc_config or DiscriminatorConfig(in_resolution=resolution, n_classes=n_classes))
    if spec.init_state is not None:
        disc.load_state_dict(spec.init_state)
    return HeadClassifier(disc)


@torch.no_grad()
def predict_proba(model, images, batch_size=256):
    was = model.training
    model.eval()
    images = torch.as_tensor(images)
    out = torch.cat([torch.softmax(model(images[i:i + batch_size]), 1) for i in range(0, len(images), batch_size)])
    model.train(was)
    return out


def evaluate(model, ds: LabeledDataset, threshold=0.5):
    probs = predict_proba(model, ds.images).numpy()
    try:
        return classification_report(probs[:, 1], ds.labels, threshold)
    except UndefinedAUCError as exc:
        log.warning("%s", exc)
        return exc.report


def accuracy(model, ds):
    probs = predict_proba(model, ds.images)
    return float((probs.argmax(1).numpy() == ds.labels).mean())


def _check_labels(*datasets):
    sets = [set(np.unique(d.labels)) for d in datasets if d is not None]
    ncls = {d.n_classes for d in datasets if d is not None}
    if len(ncls) != 1 or any(s != sets[0] for s in sets):
        raise InputError(f"label sets differ between splits: {[sorted(s) for s in sets]}")


def train_classifier(train_set, val_set, spec: ClassifierSpec = None, seed=0, test_set=None):
    """Train with validation-based epoch selection; return ``(model, MetricsReport)``.

    Metrics are computed on ``test_set`` when given, otherwise on ``val_set``.
    """
    spec = spec or ClassifierSpec()
    _check_labels(train_set, val_set, test_set)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = build_classifier(spec, train_set.resolution, train_set.n_classes)
    opt = torch.optim.AdamW(model.parameters(), lr=spec.lr, weight_decay=spec.weight_decay)
    x = torch.as_tensor(train_set.images)
    y = torch.as_tensor(train_set.labels)
    best, best_acc = copy.deepcopy(model.state_dict()), -1.0
    for epoch in range(spec.epochs):
        model.train()
        order = rng.permutation(len(x))
        for i in range(0, len(order), spec.batch_size):
            idx = torch.as_tensor(order[i:i + spec.batch_size])
            xb = x[idx]
            flip = torch.as_tensor(rng.random(len(idx)) < 0.5)
            xb = torch.where(flip.view(-1, 1, 1, 1), xb.flip(-1), xb)
            loss = F.cross_entropy(model(xb), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        acc = accuracy(model, val_set)
        if acc > best_acc:
            best, best_acc = copy.deepcopy(model.state_dict()), acc
    model.load_state_dict(best)
    model.eval()
    return model, evaluate(model, test_set if test_set is not None else val_set, spec.threshold)


@dataclass
class RepetitionResult:
    reports: List[MetricsReport] = field(default_factory=list)

    def summary(self):
        out = {}
        for key in ("accuracy", "auc", "sensitivity", "specificity"):
            vals = np.array([getattr(r, key) for r in self.reports if getattr(r, key) is not None], dtype=float)
            out[key] = {"mean": float(vals.mean()) if len(vals) else None,
                        "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
        return out

    def rows(self):
        return [r.to_dict() for r in self.reports]


def run_repetitions(train_set, val_set, test_set, spec=None, seeds=(0, 1, 2, 3, 4)):
    """One classifier per seed; mirrors a mean +/- std results table."""
    res = RepetitionResult()
    for s in seeds:
        _, report = train_classifier(train_set, val_set, spec, seed=s, test_set=test_set)
        res.reports.append(report)
    return res
