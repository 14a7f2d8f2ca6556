"""Multi-scale transformer discriminator with class and critic heads."""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DiscriminatorConfig
from .errors import ConfigError
from .nn_core import EncoderBlock, EncoderConfig, image_to_tokens, tokens_to_image


@dataclass
class DiscOutput:
    class_logits: torch.Tensor
    critic_score: torch.Tensor
    features: torch.Tensor = None


def patchify(images, patch):
    """``(N, 3, H, W)`` -> ``(N, (H/p)*(W/p), 3*p*p)`` non-overlapping patches, row-major."""
    n, c, h, w = images.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} not divisible by patch {patch}")
    x = images.reshape(n, c, h // patch, patch, w // patch, patch)
    x = x.permute(0, 2, 4, 1, 3, 5)
    return x.reshape(n, (h // patch) * (w // patch), c * patch * patch)


def avg_pool_tokens(x, h, w, ceil_mode=False):
    img = F.avg_pool2d(tokens_to_image(x, h, w), 2, ceil_mode=ceil_mode)
    return image_to_tokens(img), img.shape[2], img.shape[3]


class Discriminator(nn.Module):
    """Patch pyramid -> 3 x (encoders + 2x2 avg pool) -> class/source tokens -> 2 encoders.

    Level k of the pyramid (patch size ``patch_sizes[k]``) enters stage k+1.
    Levels 1 and 2 are concatenated channel-wise with the pooled output of the
    previous stage and re-projected to the stage width.
    """

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dims
        self.embeds = nn.ModuleList(nn.Linear(3 * p * p, d[i]) for i, p in enumerate(cfg.patch_sizes))
        self.pos_embeds = nn.ParameterList(
            nn.Parameter(torch.randn(1, gh * gw, d[i]) * 0.02)
            for i, (gh, gw) in enumerate(cfg.level_grid(k) for k in range(3)))
        self.merges = nn.ModuleList([nn.Linear(d[0] + d[1], d[1]), nn.Linear(d[1] + d[2], d[2])])
        self.stages = nn.ModuleList()
        for i in range(3):
            enc = EncoderConfig(d[i], cfg.num_heads, cfg.mlp_ratio)
            self.stages.append(nn.ModuleList(EncoderBlock(enc) for _ in range(cfg.encoders_per_stage[i])))
        enc = EncoderConfig(d[2], cfg.num_heads, cfg.mlp_ratio)
        self.final_blocks = nn.ModuleList(EncoderBlock(enc) for _ in range(cfg.encoders_per_stage[3]))
        self.cls_token = nn.Parameter(torch.randn(1, 1, d[2]) * 0.02)
        self.src_token = nn.Parameter(torch.randn(1, 1, d[2]) * 0.02)
        self.norm = nn.LayerNorm(d[2])
        self.class_head = nn.Linear(d[2], cfg.n_classes)
        self.critic_head = nn.Linear(d[2], 1)

    def _check(self, images):
        if images.dim() != 4 or images.shape[1] != 3 or tuple(images.shape[2:]) != self.cfg.in_resolution:
            raise ConfigError(
                f"expected (N, 3, {self.cfg.in_resolution[0]}, {self.cfg.in_resolution[1]}) images, "
                f"got {tuple(images.shape)}")

    def patch_pyramid_embed(self, images):
        self._check(images)
        return [emb(patchify(images, p)) for emb, p in zip(self.embeds, self.cfg.patch_sizes)]

    def tokens(self, images, return_grids=False):
        """Run stages 1-4 and return the final token sequence ``[cls, src, spatial...]``."""
        pyramid = self.patch_pyramid_embed(images)
        grids = []
        x = pyramid[0] + self.pos_embeds[0]
        h, w = self.cfg.level_grid(0)
        for i in range(3):
            for blk in self.stages[i]:
                x = blk(x)
            # the last pool may see an odd grid at 96px (3x3 -> 2x2)
            x, h, w = avg_pool_tokens(x, h, w, ceil_mode=(i == 2))
            grids.append((h, w))
            if i < 2:
                if (h, w) != self.cfg.level_grid(i + 1):
                    raise ConfigError(f"pooled grid {(h, w)} != pyramid grid {self.cfg.level_grid(i + 1)}")
                lvl = pyramid[i + 1] + self.pos_embeds[i + 1]
                x = self.merges[i](torch.cat([x, lvl], dim=-1))
        n = x.shape[0]
        x = torch.cat([self.cls_token.expand(n, -1, -1), self.src_token.expand(n, -1, -1), x], dim=1)
        for blk in self.final_blocks:
            x = blk(x)
        x = self.norm(x)
        if return_grids:
            return x, grids
        return x

    def classify(self, images):
        return self.class_head(self.tokens(images)[:, 0])

    def forward(self, images):
        x = self.tokens(images)
        return DiscOutput(self.class_head(x[:, 0]), self.critic_head(x[:, 1]).squeeze(-1), x[:, 0])


def discriminate(disc: Discriminator, images):
    return disc(images)
