import pytest
import torch
import torch.nn.functional as F

from helpers import autograd_grad, central_diff, rel_err
from vitcgan.conditioning import CondLayerNorm, LatentBatch, cond_layer_norm, split_latent
from vitcgan.errors import ConfigError, InputError


def test_split_latent_default_dims():
    z = torch.randn(3, 256)
    chunks = split_latent(LatentBatch(z, torch.tensor([0, 1, 1])), 4, 2)
    assert [c.chunk.shape for c in chunks] == [(3, 64)] * 4
    assert torch.equal(torch.cat([c.chunk for c in chunks], dim=1), z)
    for c in chunks:
        assert torch.equal(c.onehot.sum(1), torch.ones(3))
        assert c.onehot.argmax(1).tolist() == [0, 1, 1]


def test_split_latent_indivisible():
    with pytest.raises(ConfigError):
        split_latent(LatentBatch(torch.randn(2, 10), torch.tensor([0, 1])), 4, 2)


def test_latent_batch_validation():
    with pytest.raises(InputError):
        LatentBatch(torch.tensor([[float("nan")]]), torch.tensor([0]))
    with pytest.raises(InputError):
        split_latent(LatentBatch(torch.randn(1, 8), torch.tensor([5])), 4, 2)


def test_cond_layer_norm_scalar_example():
    a = torch.tensor([[[1.0, 3.0]]], dtype=torch.float64)
    cond = torch.ones(1, 1, dtype=torch.float64)
    w_g = torch.full((1, 2), 2.0, dtype=torch.float64)
    w_b = torch.full((1, 2), 0.5, dtype=torch.float64)
    out = cond_layer_norm(a, cond, w_g, w_b, eps=1e-12)
    torch.testing.assert_close(out, torch.tensor([[[-1.5, 2.5]]], dtype=torch.float64), rtol=0, atol=1e-9)


def test_constant_tokens_map_to_beta():
    a = torch.full((2, 3, 8), 4.25)
    cond = torch.randn(2, 5)
    w_g, w_b = torch.randn(5, 8), torch.randn(5, 8)
    out = cond_layer_norm(a, cond, w_g, w_b)
    beta = (cond @ w_b).unsqueeze(1).expand(-1, 3, -1)
    torch.testing.assert_close(out, beta, rtol=0, atol=1e-6)


def test_identity_affine_is_layer_norm():
    a = torch.randn(4, 6, 16)
    cond = torch.zeros(4, 3)
    ln = CondLayerNorm(16, 3)
    torch.testing.assert_close(ln(a, cond), F.layer_norm(a, (16,), eps=1e-5), rtol=0, atol=1e-6)


def test_pre_affine_statistics_over_1000_tokens():
    torch.manual_seed(11)
    a = torch.randn(10, 100, 8, dtype=torch.float64) * 3 + 1.7
    cond = torch.zeros(10, 1, dtype=torch.float64)
    normed = cond_layer_norm(a, cond, torch.zeros(1, 8, dtype=torch.float64), torch.zeros(1, 8, dtype=torch.float64),
                             b_gamma=torch.ones(8, dtype=torch.float64), eps=1e-5)
    assert normed.mean(-1).abs().max() <= 1e-5
    var = normed.var(-1, unbiased=False)
    assert ((var - 1).abs() <= 1e-3).all()


def test_class_change_changes_affine():
    ln = CondLayerNorm(8, 2 + 4)
    z = torch.randn(1, 4)
    c0 = torch.cat([torch.tensor([[1.0, 0.0]]), z], 1)
    c1 = torch.cat([torch.tensor([[0.0, 1.0]]), z], 1)
    g0, b0 = ln.affine(c0)
    g1, b1 = ln.affine(c1)
    assert not torch.equal(g0, g1) and not torch.equal(b0, b1)
    a = torch.randn(1, 3, 8)
    assert not torch.equal(ln(a, c0), ln(a, c1))


def test_same_condition_same_affine_for_every_token():
    ln = CondLayerNorm(8, 3)
    cond = torch.randn(2, 3)
    a = torch.zeros(2, 5, 8)  # zero-variance tokens expose beta directly
    out = ln(a, cond)
    assert torch.equal(out[:, :1].expand_as(out), out)


def test_eps_must_be_positive():
    with pytest.raises(ConfigError):
        cond_layer_norm(torch.randn(1, 2, 4), torch.randn(1, 1), torch.randn(1, 4), torch.randn(1, 4), eps=0)
    with pytest.raises(ConfigError):
        CondLayerNorm(4, 2, eps=-1)


@pytest.mark.parametrize("target", ["a", "w_gamma", "w_beta"])
def test_gradients_match_finite_differences(target):
    torch.manual_seed(5)
    args = {"a": torch.randn(2, 3, 4, dtype=torch.float64),
            "w_gamma": torch.randn(3, 4, dtype=torch.float64),
            "w_beta": torch.randn(3, 4, dtype=torch.float64)}
    cond = torch.randn(2, 3, dtype=torch.float64)
    weights = torch.randn(2, 3, 4, dtype=torch.float64)

    def f(v):
        kw = dict(args)
        kw[target] = v
        return (cond_layer_norm(kw["a"], cond, kw["w_gamma"], kw["w_beta"]) * weights).sum()

    assert rel_err(autograd_grad(f, args[target]), central_diff(f, args[target])) < 1e-4
