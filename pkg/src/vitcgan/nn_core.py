"""Convolution-free building blocks: ViT encoders, grid (window) attention and
the two upsampling primitives used by the generator stages.

Token maps are plain tensors of shape ``(N, T, C)``. When tokens carry a
spatial layout the grid ``(h, w)`` is passed alongside, with tokens stored in
row-major order (``t = i * w + j``).
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError


@dataclass
class EncoderConfig:
    embed_dim: int
    num_heads: int = 4
    mlp_ratio: float = 4.0
    dropout: float = 0.0

    def __post_init__(self):
        if self.embed_dim <= 0 or self.num_heads <= 0:
            raise ConfigError("embed_dim and num_heads must be positive")
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if not self.mlp_ratio > 0:
            raise ConfigError("mlp_ratio must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


def pick_num_heads(dim, max_heads=4, min_head_dim=4):
    """Largest head count <= max_heads dividing ``dim`` with head width >= min_head_dim."""
    for h in range(max_heads, 0, -1):
        if dim % h == 0 and dim // h >= min_head_dim:
            return h
    return 1


def _check_channels(x, dim):
    if x.dim() != 3:
        raise ConfigError(f"expected (N, T, C) tokens, got shape {tuple(x.shape)}")
    if x.shape[-1] != dim:
        raise ConfigError(f"token channels {x.shape[-1]} != embed_dim {dim}")


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product multi-head self-attention over the token axis."""

    def __init__(self, cfg: EncoderConfig, fused=False):
        super().__init__()
        self.cfg = cfg
        self.fused = fused
        self.num_heads = cfg.num_heads
        self.head_dim = cfg.embed_dim // cfg.num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(cfg.embed_dim, 3 * cfg.embed_dim)
        self.proj = nn.Linear(cfg.embed_dim, cfg.embed_dim)
        self.attn_drop = nn.Dropout(cfg.dropout)

    def attention_weights(self, x):
        n, t, c = x.shape
        qkv = self.qkv(x).reshape(n, t, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        return attn.softmax(dim=-1), v

    def forward(self, x):
        _check_channels(x, self.cfg.embed_dim)
        n, t, c = x.shape
        if self.fused:
            # fused kernel has no double backward; only for modules outside the gradient penalty
            qkv = self.qkv(x).reshape(n, t, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
            drop = self.cfg.dropout if self.training else 0.0
            out = F.scaled_dot_product_attention(qkv[0], qkv[1], qkv[2], dropout_p=drop)
        else:
            attn, v = self.attention_weights(x)
            out = self.attn_drop(attn) @ v
        return self.proj(out.transpose(1, 2).reshape(n, t, c))


class MLP(nn.Module):
    def __init__(self, dim, hidden, dropout=0.0):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.drop(self.fc2(self.drop(F.gelu(self.fc1(x)))))


class EncoderBlock(nn.Module):
    """Pre-norm ViT encoder: ``x + Attn(LN(x))`` followed by ``x + MLP(LN(x))``."""

    def __init__(self, cfg: EncoderConfig, fused=False):
        super().__init__()
        self.cfg = cfg
        self.norm1 = nn.LayerNorm(cfg.embed_dim)
        self.attn = MultiHeadSelfAttention(cfg, fused)
        self.norm2 = nn.LayerNorm(cfg.embed_dim)
        self.mlp = MLP(cfg.embed_dim, int(round(cfg.embed_dim * cfg.mlp_ratio)), cfg.dropout)

    def forward(self, x):
        _check_channels(x, self.cfg.embed_dim)
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def self_attention(x, module: MultiHeadSelfAttention):
    return module(x)


def encoder_block(x, module: EncoderBlock):
    return module(x)


def _check_grid(x, h, w):
    if x.dim() != 3 or x.shape[1] != h * w:
        raise ConfigError(f"tokens {tuple(x.shape)} do not match grid {h}x{w}")


def grid_partition(x, h, w, window):
    """Regroup a ``(N, h*w, C)`` map into ``(N * nW, window**2, C)`` windows.

    Windows are ordered row-major over the window grid; tokens inside a window
    are row-major as well.
    """
    _check_grid(x, h, w)
    if window <= 0 or h % window or w % window:
        raise ConfigError(f"window {window} does not divide grid {h}x{w}")
    n, _, c = x.shape
    x = x.reshape(n, h // window, window, w // window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, window * window, c)


def grid_merge(windows, h, w, window):
    """Inverse of :func:`grid_partition`."""
    if window <= 0 or h % window or w % window:
        raise ConfigError(f"window {window} does not divide grid {h}x{w}")
    nw = (h // window) * (w // window)
    if windows.shape[0] % nw or windows.shape[1] != window * window:
        raise ConfigError(f"window tensor {tuple(windows.shape)} inconsistent with grid {h}x{w}")
    c = windows.shape[-1]
    x = windows.reshape(-1, h // window, w // window, window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, h * w, c)


class GridEncoderBlock(nn.Module):
    """Encoder block whose attention is restricted to non-overlapping windows."""

    def __init__(self, cfg: EncoderConfig, window, fused=False):
        super().__init__()
        self.block = EncoderBlock(cfg, fused)
        self.window = window

    def forward(self, x, h, w):
        win = grid_partition(x, h, w, self.window)
        return grid_merge(self.block(win), h, w, self.window)


def tokens_to_image(x, h, w):
    _check_grid(x, h, w)
    return x.transpose(1, 2).reshape(x.shape[0], x.shape[2], h, w)


def image_to_tokens(img):
    n, c, h, w = img.shape
    return img.reshape(n, c, h * w).transpose(1, 2)


def pixel_shuffle_upsample(x, h, w):
    """Depth-to-space 2x: ``(N, h*w, C) -> (N, 4*h*w, C/4)``.

    Sub-pixel order is row-major inside each 2x2 block: channel ``4c + 2a + b``
    lands at ``(2i + a, 2j + b)`` of output channel ``c``.
    """
    if x.shape[-1] % 4:
        raise ConfigError(f"pixel shuffle needs channels divisible by 4, got {x.shape[-1]}")
    img = F.pixel_shuffle(tokens_to_image(x, h, w), 2)
    return image_to_tokens(img)


def pixel_unshuffle_downsample(x, h, w):
    """Inverse of :func:`pixel_shuffle_upsample`; ``(h, w)`` is the fine grid."""
    if h % 2 or w % 2:
        raise ConfigError(f"grid {h}x{w} is not divisible by 2")
    return image_to_tokens(F.pixel_unshuffle(tokens_to_image(x, h, w), 2))


def interpolate_upsample_2x(x, h, w, mode="bicubic"):
    """Spatial 2x interpolation with half-pixel alignment; channels unchanged."""
    if mode not in ("bicubic", "bilinear"):
        raise ConfigError(f"unsupported interpolation mode {mode!r}")
    img = F.interpolate(tokens_to_image(x, h, w), scale_factor=2, mode=mode, align_corners=False)
    return image_to_tokens(img)
