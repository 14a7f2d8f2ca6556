"""Differentiable augmentation shared between real and fake discriminator batches.

A policy is sampled once per step into an :class:`AugDraw`; applying the same
draw to two batches of equal size yields identical transforms, which is what
keeps the real/fake comparison fair.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import torch
import torch.nn.functional as F

from .errors import ConfigError, InputError

OPS = ("color", "translation", "cutout", "scaling", "rotation")

# default strength and admissible (low, high) range per op
DEFAULTS = {"color": 0.5, "translation": 0.125, "cutout": 0.5, "scaling": 0.25, "rotation": 15.0}
LIMITS = {"color": (0.0, 0.5), "translation": (0.0, 0.25), "cutout": (0.0, 0.5),
          "scaling": (0.0, 0.25), "rotation": (0.0, 15.0)}

PAD_VALUE = -1.0


@dataclass
class AugPolicy:
    ops: List[Tuple[str, float]] = field(default_factory=list)

    def __post_init__(self):
        for name, s in self.ops:
            if name not in OPS:
                raise ConfigError(f"unknown augmentation op {name!r}")
            lo, hi = LIMITS[name]
            if not lo <= s <= hi:
                raise ConfigError(f"{name} strength {s} outside [{lo}, {hi}]")

    @classmethod
    def parse(cls, text):
        """Parse ``"color,translation=0.125,cutout=0.5"``; empty text is the identity policy."""
        ops = []
        for item in filter(None, (t.strip() for t in (text or "").split(","))):
            name, _, val = item.partition("=")
            name = name.strip()
            if name not in OPS:
                raise ConfigError(f"unknown augmentation op {name!r}")
            try:
                strength = float(val) if val else DEFAULTS[name]
            except ValueError as exc:
                raise ConfigError(f"bad strength for {name}: {val!r}") from exc
            ops.append((name, strength))
        return cls(ops)

    def __str__(self):
        return ",".join(f"{n}={s:g}" for n, s in self.ops)


@dataclass
class AugDraw:
    n: int
    size: Tuple[int, int]
    params: Dict[str, Dict[str, torch.Tensor]] = field(default_factory=dict)


def sample_draw(policy: AugPolicy, n, size, generator=None):
    h, w = size
    params = {}
    u = lambda *shape: torch.rand(*shape, generator=generator)
    for name, s in policy.ops:
        if name == "color":
            params[name] = {"brightness": (u(n) * 2 - 1) * s,
                            "saturation": 1 + (u(n) * 2 - 1) * s,
                            "contrast": 1 + (u(n) * 2 - 1) * s}
        elif name == "translation":
            sx, sy = int(w * s + 0.5), int(h * s + 0.5)
            params[name] = {"dx": torch.randint(-sx, sx + 1, (n,), generator=generator),
                            "dy": torch.randint(-sy, sy + 1, (n,), generator=generator)}
        elif name == "cutout":
            ch, cw = int(h * s + 0.5), int(w * s + 0.5)
            params[name] = {"y0": torch.randint(0, h - ch + 1, (n,), generator=generator),
                            "x0": torch.randint(0, w - cw + 1, (n,), generator=generator),
                            "size": torch.tensor([ch, cw])}
        elif name == "scaling":
            params[name] = {"scale": 1 + (u(n) * 2 - 1) * s}
        elif name == "rotation":
            params[name] = {"angle": (u(n) * 2 - 1) * math.radians(s)}
    return AugDraw(n, (h, w), params)


def _color(x, p):
    x = x + p["brightness"].view(-1, 1, 1, 1).to(x)
    mean = x.mean(dim=1, keepdim=True)
    x = (x - mean) * p["saturation"].view(-1, 1, 1, 1).to(x) + mean
    mean = x.mean(dim=(1, 2, 3), keepdim=True)
    x = (x - mean) * p["contrast"].view(-1, 1, 1, 1).to(x) + mean
    return x.clamp(-1, 1)


def _translation(x, p):
    n, c, h, w = x.shape
    pad = max(int(p["dx"].abs().max()), int(p["dy"].abs().max()), 0)
    if pad == 0:
        return x
    xp = F.pad(x, [pad] * 4, value=PAD_VALUE)
    gy = torch.arange(h).view(1, h, 1) + pad - p["dy"].view(n, 1, 1)
    gx = torch.arange(w).view(1, 1, w) + pad - p["dx"].view(n, 1, 1)
    idx = torch.arange(n).view(n, 1, 1)
    return xp.permute(0, 2, 3, 1)[idx, gy, gx].permute(0, 3, 1, 2)


def _cutout(x, p):
    n, c, h, w = x.shape
    ch, cw = int(p["size"][0]), int(p["size"][1])
    ys = torch.arange(h).view(1, h, 1)
    xs = torch.arange(w).view(1, 1, w)
    y0 = p["y0"].view(n, 1, 1)
    x0 = p["x0"].view(n, 1, 1)
    inside = (ys >= y0) & (ys < y0 + ch) & (xs >= x0) & (xs < x0 + cw)
    return x * (~inside).unsqueeze(1).to(x)


def _affine(x, theta):
    grid = F.affine_grid(theta.to(x), list(x.shape), align_corners=False)
    # sample (x + 1) with zero padding so that out-of-frame pixels come back as -1
    return F.grid_sample(x - PAD_VALUE, grid, mode="bilinear", padding_mode="zeros",
                         align_corners=False) + PAD_VALUE


def _scaling(x, p):
    inv = 1.0 / p["scale"]
    theta = torch.zeros(x.shape[0], 2, 3)
    theta[:, 0, 0] = inv
    theta[:, 1, 1] = inv
    return _affine(x, theta)


def _rotation(x, p):
    a = p["angle"]
    theta = torch.zeros(x.shape[0], 2, 3)
    theta[:, 0, 0] = torch.cos(a)
    theta[:, 0, 1] = -torch.sin(a)
    theta[:, 1, 0] = torch.sin(a)
    theta[:, 1, 1] = torch.cos(a)
    return _affine(x, theta)


_APPLY = {"color": _color, "translation": _translation, "cutout": _cutout,
          "scaling": _scaling, "rotation": _rotation}


def apply_policy(images, policy: AugPolicy, draw: AugDraw):
    """Apply ``policy`` to ``(N, 3, H, W)`` images using the pre-sampled ``draw``."""
    if not policy.ops:
        return images
    if images.shape[0] != draw.n or tuple(images.shape[2:]) != tuple(draw.size):
        raise InputError(f"draw sampled for n={draw.n}, size={draw.size}; got {tuple(images.shape)}")
    x = images
    for name, _ in policy.ops:
        x = _APPLY[name](x, draw.params[name])
    return x
