"""Four-stage conditional transformer generator.

Stage k (1..4) applies: conditional layer norm driven by latent chunk k-1,
2x upsampling (bicubic at stage 1, pixel shuffle afterwards), a learned
position embedding, then its encoder stack (windowed at stages 3-4).
"""

import torch
import torch.nn as nn

from .conditioning import CondLayerNorm, LatentBatch, one_hot, split_latent
from .config import GeneratorConfig
from .errors import InputError
from .nn_core import (EncoderBlock, EncoderConfig, GridEncoderBlock, interpolate_upsample_2x,
                      pick_num_heads, pixel_shuffle_upsample)


class GeneratorStage(nn.Module):
    def __init__(self, cfg: GeneratorConfig, stage):
        super().__init__()
        self.stage = stage
        self.in_dim = cfg.stage_channels(stage - 1)
        self.dim = cfg.stage_channels(stage)
        self.interp_mode = cfg.interp_mode
        self.cln = CondLayerNorm(self.in_dim, cfg.n_classes + cfg.chunk_dim, eps=cfg.eps)
        h, w = cfg.stage_resolution(stage)
        self.pos_embed = nn.Parameter(torch.randn(1, h * w, self.dim) * 0.02)
        enc = EncoderConfig(self.dim, pick_num_heads(self.dim, cfg.num_heads), cfg.mlp_ratio)
        self.window = cfg.window_sizes.get(stage)
        if self.window is None:
            self.blocks = nn.ModuleList(EncoderBlock(enc, fused=True) for _ in range(cfg.encoders_per_stage[stage - 1]))
        else:
            self.blocks = nn.ModuleList(GridEncoderBlock(enc, self.window, fused=True)
                                        for _ in range(cfg.encoders_per_stage[stage - 1]))

    def forward(self, x, h, w, cond):
        x = self.cln(x, cond)
        if self.stage == 1:
            x = interpolate_upsample_2x(x, h, w, self.interp_mode)
        else:
            x = pixel_shuffle_upsample(x, h, w)
        h, w = 2 * h, 2 * w
        x = x + self.pos_embed
        for blk in self.blocks:
            x = blk(x) if self.window is None else blk(x, h, w)
        return x, h, w


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        h0, w0 = cfg.init_grid
        self.proj = nn.Linear(cfg.z_dim + cfg.n_classes, h0 * w0 * cfg.stage_dims[0])
        self.pos_embed = nn.Parameter(torch.randn(1, h0 * w0, cfg.stage_dims[0]) * 0.02)
        self.stages = nn.ModuleList(GeneratorStage(cfg, k) for k in range(1, 5))
        self.head_norm = nn.LayerNorm(cfg.stage_channels(4))
        self.head = nn.Linear(cfg.stage_channels(4), 3)

    def _check(self, z, labels):
        if z.dim() != 2 or z.shape[1] != self.cfg.z_dim:
            raise InputError(f"z must be (N, {self.cfg.z_dim}), got {tuple(z.shape)}")
        labels = torch.as_tensor(labels, device=z.device)
        if labels.shape != (z.shape[0],):
            raise InputError("labels must be a length-N vector")
        if labels.numel() and (labels.min() < 0 or labels.max() >= self.cfg.n_classes):
            raise InputError(f"labels outside [0, {self.cfg.n_classes})")
        return labels.long()

    def initial_tokens(self, z, labels):
        labels = self._check(z, labels)
        c = one_hot(labels, self.cfg.n_classes, z.dtype)
        h0, w0 = self.cfg.init_grid
        tok = self.proj(torch.cat([z, c], dim=1)).reshape(z.shape[0], h0 * w0, self.cfg.stage_dims[0])
        return tok + self.pos_embed

    def forward(self, z, labels, chunks=None, return_stages=False):
        """Generate ``(N, 3, H, W)`` images in [-1, 1].

        ``chunks`` overrides the per-stage ``[c, z_chunk]`` conditions (the
        initial projection still consumes the full ``z``); it exists for
        activation-capture checks of the skip-z wiring.
        """
        labels = self._check(z, labels)
        if chunks is None:
            chunks = split_latent(LatentBatch(z, labels), 4, self.cfg.n_classes)
        x = self.initial_tokens(z, labels)
        h, w = self.cfg.init_grid
        captured = [x]
        for stage, ch in zip(self.stages, chunks):
            x, h, w = stage(x, h, w, ch.vector())
            captured.append(x)
        img = torch.tanh(self.head(self.head_norm(x)))
        img = img.transpose(1, 2).reshape(z.shape[0], 3, h, w)
        if return_stages:
            return img, captured
        return img


def generate(gen: Generator, z, labels):
    """Channels-last convenience wrapper: returns ``(N, H, W, 3)`` images."""
    return gen(z, labels).permute(0, 2, 3, 1)
