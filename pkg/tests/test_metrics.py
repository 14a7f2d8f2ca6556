import json
import logging

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from vitcgan.errors import ConfigError, InputError
from vitcgan.metrics import (EXTRACTORS, METRICS_SCHEMA, MetricsReport, UndefinedAUCError, auc_score,
                             classification_report, extract_features, fid, fid_from_stats,
                             format_table, register_extractor, trace_sqrt_product)


def _brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


# -- classification ---------------------------------------------------------------

def test_confusion_example():
    labels = np.array([1] * 50 + [0] * 50)
    scores = np.array([0.9] * 45 + [0.1] * 5 + [0.1] * 45 + [0.9] * 5)
    rep = classification_report(scores, labels)
    assert (rep.accuracy, rep.sensitivity, rep.specificity) == (0.9, 0.9, 0.9)


def test_auc_extremes():
    labels = np.array([0, 0, 1, 1, 1])
    assert auc_score([0.1, 0.2, 0.3, 0.4, 0.5], labels) == 1.0
    assert auc_score([0.3] * 5, labels) == 0.5


def test_single_class_auc_undefined_but_other_metrics_returned():
    with pytest.raises(UndefinedAUCError) as info:
        classification_report(np.array([0.7, 0.2, 0.9]), np.array([1, 1, 1]))
    rep = info.value.report
    assert rep.auc is None and rep.sensitivity == pytest.approx(2 / 3) and rep.accuracy == pytest.approx(2 / 3)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_counts_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 60))
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    scores = rng.random(n)
    pred = scores >= 0.5
    tp = sum(1 for p, l in zip(pred, labels) if p and l)
    tn = sum(1 for p, l in zip(pred, labels) if not p and not l)
    fp = sum(1 for p, l in zip(pred, labels) if p and not l)
    fn = sum(1 for p, l in zip(pred, labels) if not p and l)
    rep = classification_report(scores, labels)
    assert rep.accuracy == (tp + tn) / n
    assert rep.sensitivity == tp / (tp + fn)
    assert rep.specificity == tn / (tn + fp)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_auc_matches_pairwise_count_with_ties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 40))
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    scores = rng.integers(0, 5, n).astype(float)  # many ties
    assert auc_score(scores, labels) == pytest.approx(_brute_auc(scores, labels), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, 30)
    labels[:2] = [0, 1]
    scores = rng.normal(size=30)
    base = auc_score(scores, labels)
    assert auc_score(np.exp(3 * scores) + 7, labels) == pytest.approx(base, abs=1e-12)
    assert auc_score(np.tanh(scores), labels) == pytest.approx(base, abs=1e-12)


def test_report_serialization_matches_schema():
    rep = MetricsReport(0.9, 0.95, 0.8, 1.0, fid=3.2)
    data = json.loads(rep.to_json())
    assert set(METRICS_SCHEMA["required"]) <= set(data)
    for key, spec in METRICS_SCHEMA["properties"].items():
        assert spec.get("minimum", 0) <= data[key] <= spec.get("maximum", np.inf)


# -- FID --------------------------------------------------------------------------

def test_fid_identity():
    a = np.random.default_rng(0).normal(size=(500, 16))
    assert fid(a, a) < 1e-8


def test_fid_symmetric():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(400, 8)), rng.normal(1.0, 2.0, size=(300, 8))
    assert abs(fid(a, b) - fid(b, a)) < 1e-8


def test_fid_shifted_gaussians():
    rng = np.random.default_rng(2)
    k, n = 8, 50_000
    shift = rng.normal(size=k)
    shift *= 1.5 / np.linalg.norm(shift)
    a = rng.normal(size=(n, k))
    b = rng.normal(size=(n, k)) + shift
    assert fid(a, b) == pytest.approx(1.5 ** 2, rel=0.02)


def test_fid_scaled_covariance():
    rng = np.random.default_rng(3)
    k, n = 8, 50_000
    a = rng.normal(size=(n, k))
    b = rng.normal(size=(n, k)) * 2.0
    assert fid(a, b) == pytest.approx(k, rel=0.02)


def test_fid_from_stats_closed_form():
    k = 5
    assert fid_from_stats(np.zeros(k), np.eye(k), np.zeros(k), 4 * np.eye(k)) == pytest.approx(k, abs=1e-10)


def test_trace_sqrt_against_scipy():
    from scipy.linalg import sqrtm
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
    a, b = x @ x.T, y @ y.T
    assert trace_sqrt_product(a, b) == pytest.approx(float(np.trace(sqrtm(a @ b)).real), rel=1e-8)


def test_fid_feature_mismatch():
    with pytest.raises(InputError):
        fid(np.zeros((10, 3)), np.zeros((10, 4)))


def test_fid_small_sample_warns(caplog):
    rng = np.random.default_rng(5)
    with caplog.at_level(logging.WARNING):
        val = fid(rng.normal(size=(5, 8)), rng.normal(size=(6, 8)))
    assert val >= 0 and "rank deficient" in caplog.text


# -- extractors ---------------------------------------------------------------------

def test_toy_extractor_shape_and_determinism():
    imgs = torch.rand(5, 3, 32, 32) * 2 - 1
    f1 = extract_features(imgs, "toy-fixed")
    assert f1.shape == (5, 64)
    assert np.array_equal(f1, extract_features(imgs, "toy-fixed"))
    np.testing.assert_allclose(f1, extract_features(imgs, "toy-fixed", batch_size=2), rtol=0, atol=1e-12)


def test_toy_extractor_duplicate_rows():
    img = torch.rand(1, 3, 32, 32)
    f = extract_features(torch.cat([img, torch.rand(1, 3, 32, 32), img]))
    assert np.array_equal(f[0], f[2])
    assert not np.array_equal(f[0], f[1])


def test_unknown_extractor():
    with pytest.raises(ConfigError):
        extract_features(torch.zeros(1, 3, 8, 8), "inception")


def test_register_custom_extractor(monkeypatch):
    monkeypatch.setattr("vitcgan.metrics.EXTRACTORS", dict(EXTRACTORS))
    register_extractor("mean-rgb", lambda: (lambda x: x.mean(dim=(2, 3)).numpy()))
    f = extract_features(torch.ones(2, 3, 4, 4), "mean-rgb")
    assert f.shape == (2, 3) and (f == 1).all()


def test_format_table_mean_std():
    reps = [MetricsReport(a, 0.5, 0.5, 0.5) for a in (0.8, 0.9, 1.0)]
    text = format_table({"Baseline": reps}, title="Results")
    assert text.splitlines()[0] == "Results"
    assert "0.900 ± 0.100" in text
