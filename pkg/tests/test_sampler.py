import json
import logging

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import tiny_gen_cfg
from vitcgan.config import SelectionConfig
from vitcgan.data import LabeledDataset
from vitcgan.errors import ConfigError, InputError
from vitcgan.generator import Generator
from vitcgan.sampler import (build_augmented_set, confidence_mask, filter_by_confidence,
                             sample_truncated, synthesize, write_provenance)


def test_truncated_bound_and_mean():
    z = sample_truncated(10_000, 1, 0.7, seed=0)
    assert float(z.abs().max()) <= 0.7
    assert abs(float(z.mean())) <= 0.02


def test_truncated_is_resampled_not_clipped():
    z = sample_truncated(2_000, 16, 0.7, seed=3)
    assert int((z.abs() == 0.7).sum()) == 0
    # the conditioned normal on [-0.7, 0.7] fits far better than a clipped one
    ks = stats.kstest(z.flatten().numpy(), stats.truncnorm(-0.7, 0.7).cdf)
    assert ks.statistic < 0.02


def test_large_tau_matches_standard_normal():
    z = sample_truncated(10_000, 1, 8.0, seed=1).flatten().numpy()
    assert stats.kstest(z, "norm").statistic < 0.02


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_tau_must_be_positive(tau):
    with pytest.raises(ConfigError):
        sample_truncated(5, 4, tau)


def test_truncated_deterministic_per_seed():
    assert torch.equal(sample_truncated(50, 8, 0.7, seed=4), sample_truncated(50, 8, 0.7, seed=4))
    assert not torch.equal(sample_truncated(50, 8, 0.7, seed=4), sample_truncated(50, 8, 0.7, seed=5))


@settings(max_examples=25, deadline=None)
@given(tau=st.floats(0.05, 3.0), seed=st.integers(0, 10_000))
def test_truncated_never_exceeds_tau(tau, seed):
    assert float(sample_truncated(200, 8, tau, seed=seed).abs().max()) <= tau


def test_confidence_examples():
    probs = torch.tensor([[0.61, 0.39], [0.55, 0.45], [0.95, 0.05]])
    mask = confidence_mask(probs, torch.tensor([0, 0, 1]), 0.6)
    assert mask.tolist() == [True, False, False]


def test_filter_preserves_order_and_labels():
    logits = torch.tensor([[2.0, 0.0], [0.0, 2.0], [0.1, 0.0], [0.0, 3.0], [4.0, 0.0]])
    images = torch.arange(5.0).view(5, 1, 1, 1)
    intended = torch.tensor([0, 1, 0, 0, 0])
    head = lambda x: logits[x.view(-1).long()]
    kept, labels, mask = filter_by_confidence(images, intended, head, 0.6)
    assert kept.view(-1).tolist() == [0.0, 1.0, 4.0]
    assert labels.tolist() == [0, 1, 0]
    assert mask.tolist() == [True, True, False, False, True]


def test_filter_can_return_empty():
    head = lambda x: torch.zeros(len(x), 2)
    kept, labels, _ = filter_by_confidence(torch.zeros(3, 3, 4, 4), torch.tensor([0, 1, 0]), head, 0.6)
    assert len(kept) == 0 and len(labels) == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.floats(0.51, 0.99))
def test_gate_exhaustive(seed, lam):
    g = torch.Generator().manual_seed(seed)
    logits = torch.randn(100, 2, generator=g) * 3
    intended = torch.randint(0, 2, (100,), generator=g)
    mask = confidence_mask(torch.softmax(logits, 1), intended, lam)
    probs = torch.softmax(logits, 1).numpy()
    for i in range(100):
        expect = probs[i].argmax() == int(intended[i]) and probs[i].max() >= lam
        assert bool(mask[i]) == expect


def test_synthesize_uses_truncated_latents():
    gen = Generator(tiny_gen_cfg())
    out = synthesize(gen, torch.tensor([0, 1, 1]), 0.7, seed=2)
    assert out.shape == (3, 3, 16, 16)
    assert torch.equal(out, synthesize(gen, torch.tensor([0, 1, 1]), 0.7, seed=2))
    assert gen.training


def _ds(n, n_classes=2, offset=0.0, labels=None):
    labels = np.arange(n) % n_classes if labels is None else np.asarray(labels)
    images = (np.arange(n, dtype=np.float32) + offset).reshape(n, 1, 1, 1) * np.ones((1, 3, 2, 2), np.float32)
    return LabeledDataset(images, labels, n_classes)


def test_build_balanced_100_of_500():
    real, pool = _ds(100), _ds(500, offset=1000)
    aug = build_augmented_set(real, pool, SelectionConfig(ratio=1.0), seed=0)
    assert aug.n_synthetic == 100 and len(aug.dataset) == 200 and aug.shortfall == 0
    synth_labels = aug.dataset.labels[100:]
    assert np.bincount(synth_labels).tolist() == [50, 50]


def test_build_shortfall(caplog):
    real, pool = _ds(100), _ds(30, offset=1000)
    with caplog.at_level(logging.WARNING):
        aug = build_augmented_set(real, pool, SelectionConfig(), seed=0)
    assert aug.n_synthetic == 30 and aug.shortfall == 70
    assert "short by 70" in caplog.text


def test_build_ratio_half():
    aug = build_augmented_set(_ds(200), _ds(500, offset=1000), SelectionConfig(ratio=0.5), seed=0)
    assert aug.n_synthetic == 100


def test_build_tops_up_from_other_class():
    pool = _ds(60, labels=[0] * 10 + [1] * 50, offset=1000)
    aug = build_augmented_set(_ds(40), pool, SelectionConfig(), seed=1)
    assert np.bincount(aug.dataset.labels[40:]).tolist() == [10, 30]


def test_build_empty_real_rejected():
    with pytest.raises(InputError):
        build_augmented_set(None, _ds(10), SelectionConfig(), seed=0)


@settings(max_examples=20, deadline=None)
@given(n_real=st.integers(1, 60), n_pool=st.integers(1, 80), ratio=st.floats(0.1, 3.0),
       balance=st.booleans(), seed=st.integers(0, 100))
def test_build_set_level_invariants(n_real, n_pool, ratio, balance, seed):
    real, pool = _ds(n_real), _ds(n_pool, offset=1000)
    before = real.images.copy()
    aug = build_augmented_set(real, pool, SelectionConfig(ratio=ratio, class_balance=balance), seed)
    assert aug.n_synthetic == min(int(np.floor(ratio * n_real)), n_pool)
    assert np.array_equal(real.images, before)
    assert np.array_equal(aug.dataset.images[:n_real], before)
    ids = aug.dataset.images[n_real:, 0, 0, 0]
    assert len(set(ids.tolist())) == len(ids)  # no synthetic duplicated
    assert (ids >= 1000).all()
    again = build_augmented_set(real, pool, SelectionConfig(ratio=ratio, class_balance=balance), seed)
    assert np.array_equal(again.synthetic_index, aug.synthetic_index)


def test_selection_config_validation():
    with pytest.raises(ConfigError):
        SelectionConfig(tau=0)
    with pytest.raises(ConfigError):
        SelectionConfig(conf_threshold=1.0)
    with pytest.raises(ConfigError):
        SelectionConfig(conf_threshold=0.5).check_classes(2)


def test_provenance_sidecar(tmp_path):
    path = write_provenance(str(tmp_path), checkpoint="abc", tau=0.7, conf_threshold=0.6, seed=3)
    assert json.loads(open(path).read()) == {"checkpoint": "abc", "tau": 0.7, "conf_threshold": 0.6, "seed": 3}
