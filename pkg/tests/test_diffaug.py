import pytest
import torch
from hypothesis import given, settings, strategies as st

from helpers import central_diff, rel_err
from vitcgan.diffaug import OPS, PAD_VALUE, AugPolicy, apply_policy, sample_draw
from vitcgan.errors import ConfigError, InputError


def _imgs(n=4, size=32, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 3, size, size, generator=g) * 1.8 - 0.9


def test_empty_policy_is_identity():
    x = _imgs()
    pol = AugPolicy.parse("")
    assert apply_policy(x, pol, sample_draw(pol, 4, (32, 32))) is x


def test_cutout_half_ratio_zeroes_one_16x16_square():
    x = _imgs() + 5.0  # no pixel is 0 before the cutout
    pol = AugPolicy.parse("cutout=0.5")
    draw = sample_draw(pol, 4, (32, 32), torch.Generator().manual_seed(1))
    out = apply_policy(x, pol, draw)
    for i in range(4):
        zero = (out[i] == 0).all(0)
        assert int(zero.sum()) == 256
        rows, cols = zero.any(1).nonzero().flatten(), zero.any(0).nonzero().flatten()
        assert len(rows) == 16 and len(cols) == 16
        assert int(rows[-1] - rows[0]) == 15 and int(cols[-1] - cols[0]) == 15
        assert torch.equal(out[i][:, ~zero], x[i][:, ~zero])


def test_shared_draw_applies_identical_transform():
    pol = AugPolicy.parse("color,translation,cutout,scaling,rotation")
    draw = sample_draw(pol, 3, (32, 32), torch.Generator().manual_seed(5))
    # applying to a batch and to a shifted copy must move pixels identically
    a = _imgs(3, seed=1)
    b = _imgs(3, seed=2)
    geo = AugPolicy.parse("translation,cutout")
    gdraw = sample_draw(geo, 3, (32, 32), torch.Generator().manual_seed(5))
    ones = torch.full_like(a, 0.5)
    ma, mb = apply_policy(ones, geo, gdraw), apply_policy(ones * 0.25, geo, gdraw)
    assert torch.equal(ma == 0, mb == 0)  # identical cutout positions
    assert torch.equal(ma == PAD_VALUE, mb == PAD_VALUE)  # identical shifts
    assert torch.equal(apply_policy(a, pol, draw), apply_policy(a.clone(), pol, draw))
    assert apply_policy(b, pol, draw).shape == b.shape


def test_translation_pads_with_background():
    pol = AugPolicy([("translation", 0.25)])
    draw = sample_draw(pol, 1, (8, 8))
    draw.params["translation"] = {"dx": torch.tensor([2]), "dy": torch.tensor([-1])}
    x = torch.zeros(1, 3, 8, 8)
    out = apply_policy(x, pol, draw)
    assert (out[..., :, :2] == PAD_VALUE).all()
    assert (out[..., 7, :] == PAD_VALUE).all()
    assert (out[..., :7, 2:] == 0).all()


@pytest.mark.parametrize("op", ["scaling", "rotation"])
def test_affine_ops_pad_with_background(op):
    pol = AugPolicy([(op, {"scaling": 0.25, "rotation": 15.0}[op])])
    draw = sample_draw(pol, 1, (16, 16))
    if op == "scaling":
        draw.params[op] = {"scale": torch.tensor([0.75])}
    else:
        draw.params[op] = {"angle": torch.tensor([0.26])}
    out = apply_policy(torch.ones(1, 3, 16, 16), pol, draw)
    assert torch.allclose(out[0, :, 0, 0], torch.full((3,), PAD_VALUE))
    assert torch.allclose(out[0, :, 8, 8], torch.ones(3))


def test_color_stays_in_range():
    pol = AugPolicy.parse("color=0.5")
    x = torch.rand(64, 3, 8, 8) * 2 - 1
    out = apply_policy(x, pol, sample_draw(pol, 64, (8, 8), torch.Generator().manual_seed(0)))
    assert out.min() >= -1 and out.max() <= 1


@pytest.mark.parametrize("text", ["translation=0.3", "cutout=0.6", "scaling=0.3", "rotation=20", "color=0.7", "blur",
                                  "color=abc"])
def test_out_of_range_strength(text):
    with pytest.raises(ConfigError):
        AugPolicy.parse(text)


def test_draw_size_mismatch():
    pol = AugPolicy.parse("cutout")
    with pytest.raises(InputError):
        apply_policy(_imgs(2), pol, sample_draw(pol, 3, (32, 32)))


def test_draw_is_pure_function_of_generator_state():
    pol = AugPolicy.parse(",".join(OPS))
    d1 = sample_draw(pol, 5, (32, 32), torch.Generator().manual_seed(9))
    d2 = sample_draw(pol, 5, (32, 32), torch.Generator().manual_seed(9))
    x = _imgs(5)
    assert torch.equal(apply_policy(x, pol, d1), apply_policy(x, pol, d2))


def test_gradient_matches_finite_differences_away_from_boundaries():
    # clamp and cutout edges are the only kinks; keep pixels well inside (-1, 1)
    pol = AugPolicy.parse("color=0.1,translation,cutout,scaling,rotation")
    draw = sample_draw(pol, 1, (8, 8), torch.Generator().manual_seed(3))
    x = (torch.rand(1, 3, 8, 8, dtype=torch.float64) - 0.5) * 0.5
    f = lambda v: apply_policy(v, pol, draw).mean()
    xg = x.clone().requires_grad_(True)
    g, = torch.autograd.grad(f(xg), xg)
    assert rel_err(g, central_diff(f, x)) < 1e-3


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), ops=st.lists(st.sampled_from(OPS), min_size=1, max_size=5, unique=True))
def test_shape_and_range_preserved(seed, ops):
    pol = AugPolicy.parse(",".join(ops))
    x = torch.rand(2, 3, 16, 16) * 2 - 1
    out = apply_policy(x, pol, sample_draw(pol, 2, (16, 16), torch.Generator().manual_seed(seed)))
    assert out.shape == x.shape
    assert out.min() >= -1 - 1e-5 and out.max() <= 1 + 1e-5
