"""Classification metrics, FID and the pluggable feature extractors FID runs on."""

import json
import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
from scipy.stats import rankdata

from .errors import ConfigError, InputError, NumericalError

log = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    accuracy: float
    auc: Optional[float]
    sensitivity: float
    specificity: float
    fid: Optional[float] = None

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


METRICS_SCHEMA = {
    "type": "object",
    "required": ["accuracy", "auc", "sensitivity", "specificity"],
    "properties": {
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "auc": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "sensitivity": {"type": "number", "minimum": 0, "maximum": 1},
        "specificity": {"type": "number", "minimum": 0, "maximum": 1},
        "fid": {"type": ["number", "null"], "minimum": 0},
    },
}


class UndefinedAUCError(InputError):
    """Raised when AUC is requested for single-class labels; carries the other metrics."""

    def __init__(self, report):
        self.report = report
        super().__init__("AUC undefined: labels contain a single class")


def auc_score(scores, labels):
    """Mann-Whitney AUC with midranks (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise InputError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def confusion(pred, labels):
    pred = np.asarray(pred).astype(bool)
    labels = np.asarray(labels).astype(bool)
    tp = int((pred & labels).sum())
    tn = int((~pred & ~labels).sum())
    fp = int((pred & ~labels).sum())
    fn = int((~pred & labels).sum())
    return tp, fn, tn, fp


def _ratio(a, b):
    return a / b if b else 0.0


def classification_report(scores, labels, threshold=0.5):
    """Binary metrics from positive-class scores.

    Raises :class:`UndefinedAUCError` (holding the remaining metrics) when
    only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InputError("scores and labels must be equal-length vectors")
    if not set(np.unique(labels)) <= {0, 1}:
        raise InputError("labels must be binary")
    tp, fn, tn, fp = confusion(scores >= threshold, labels)
    acc = (tp + tn) / len(labels)
    sens, spec = _ratio(tp, tp + fn), _ratio(tn, tn + fp)
    if tp + fn == 0 or tn + fp == 0:
        raise UndefinedAUCError(MetricsReport(acc, None, sens, spec))
    return MetricsReport(acc, auc_score(scores, labels), sens, spec)


def _sqrt_psd(mat):
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    vals = np.clip(vals, 0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def trace_sqrt_product(cov_a, cov_b, neg_tol=1e-6):
    """``Tr((A B)^{1/2})`` for PSD ``A``, ``B`` via the symmetric ``A^{1/2} B A^{1/2}``."""
    ra = _sqrt_psd(cov_a)
    m = ra @ cov_b @ ra
    vals = np.linalg.eigvalsh((m + m.T) / 2)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < -neg_tol * scale:
        raise NumericalError(
            f"matrix square root: eigenvalue {vals.min():.3e} below tolerance "
            f"(condition ~{np.linalg.cond(m):.3e})")
    out = float(np.sqrt(np.clip(vals, 0, None)).sum())
    if not np.isfinite(out):
        raise NumericalError(f"non-finite matrix square root (condition ~{np.linalg.cond(m):.3e})")
    return out


def fid_from_stats(mu_a, cov_a, mu_b, cov_b):
    diff = mu_a - mu_b
    val = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * trace_sqrt_product(cov_a, cov_b))
    if val < 0:
        if val < -1e-8:
            log.warning("FID %.3e negative from matrix-sqrt noise; clamped to 0", val)
        val = 0.0
    return val


def fid(features_a, features_b):
    """Frechet distance between Gaussian fits of two feature sets."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InputError(f"feature shapes {a.shape} and {b.shape} are incompatible")
    k = a.shape[1]
    if min(len(a), len(b)) <= k:
        log.warning("FID on %d/%d samples with %d features: covariance is rank deficient",
                    len(a), len(b), k)
    mu_a, mu_b = a.mean(0), b.mean(0)
    cov_a = np.cov(a, rowvar=False).reshape(k, k)
    cov_b = np.cov(b, rowvar=False).reshape(k, k)
    return fid_from_stats(mu_a, cov_a, mu_b, cov_b)


# -- feature extractors ------------------------------------------------------

class ToyFixedExtractor:
    """Fixed-seed random Fourier features of 2x2-average-pooled pixels.

    Deterministic and per-sample; ``k = 64``.
    """

    k = 64

    def __init__(self, seed=1234):
        self.seed = seed
        self._weights = {}

    def _proj(self, d):
        if d not in self._weights:
            g = torch.Generator().manual_seed(self.seed)
            self._weights[d] = (torch.randn(d, self.k, generator=g, dtype=torch.float64) / d ** 0.5,
                                torch.rand(self.k, generator=g, dtype=torch.float64) * 2 * np.pi)
        return self._weights[d]

    @torch.no_grad()
    def __call__(self, images):
        x = torch.as_tensor(images, dtype=torch.float64)
        if x.dim() != 4 or x.shape[1] != 3:
            raise InputError(f"expected (N, 3, H, W) images, got {tuple(x.shape)}")
        x = torch.nn.functional.avg_pool2d(x, 2).flatten(1)
        w, b = self._proj(x.shape[1])
        return torch.cos(x @ w * 3.0 + b).numpy()


EXTRACTORS = {"toy-fixed": ToyFixedExtractor}


def register_extractor(name, factory):
    EXTRACTORS[name] = factory


def get_extractor(spec):
    if callable(spec):
        return spec
    if spec not in EXTRACTORS:
        raise ConfigError(f"unknown feature extractor {spec!r}; known: {sorted(EXTRACTORS)}")
    return EXTRACTORS[spec]()


def extract_features(images, extractor_spec="toy-fixed", batch_size=256):
    ext = get_extractor(extractor_spec)
    images = torch.as_tensor(images)
    chunks = [np.asarray(ext(images[i:i + batch_size])) for i in range(0, len(images), batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros((0, getattr(ext, "k", 0)))


def format_table(rows, title=None):
    """Render ``{name: [MetricsReport, ...]}`` as mean +/- std columns."""
    cols = ("accuracy", "auc", "sensitivity", "specificity")
    width = max([len(n) for n in rows] + [10])
    lines = []
    if title:
        lines.append(title)
    lines.append(" | ".join([" " * width] + [c.capitalize().ljust(15) for c in cols]))
    lines.append("-" * (width + 18 * len(cols)))
    for name, reports in rows.items():
        cells = []
        for c in cols:
            vals = np.array([getattr(r, c) for r in reports if getattr(r, c) is not None], dtype=float)
            std = vals.std(ddof=1) if len(vals) > 1 else 0.0
            cells.append(f"{vals.mean():.3f} ± {std:.3f}".ljust(15) if len(vals) else "n/a".ljust(15))
        lines.append(" | ".join([name.ljust(width)] + cells))
    return "\n".join(lines)
