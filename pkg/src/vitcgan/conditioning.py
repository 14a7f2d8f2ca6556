"""Skip-z latent chunking and conditional layer normalization."""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, InputError


@dataclass
class LatentBatch:
    z: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self):
        if self.z.dim() != 2:
            raise InputError(f"z must be (N, z_dim), got {tuple(self.z.shape)}")
        if self.labels.shape != (self.z.shape[0],):
            raise InputError("labels must be a length-N vector")
        if not torch.isfinite(self.z).all():
            raise InputError("z contains non-finite values")


@dataclass
class ConditionChunk:
    chunk: torch.Tensor
    onehot: torch.Tensor

    def vector(self):
        """The ``[c, z_chunk]`` concatenation fed to the class projection."""
        return torch.cat([self.onehot, self.chunk], dim=1)


def one_hot(labels, n_classes, dtype=torch.float32):
    labels = torch.as_tensor(labels)
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"labels outside [0, {n_classes})")
    return F.one_hot(labels.long(), n_classes).to(dtype)


def split_latent(batch: LatentBatch, n_stages, n_classes):
    """Split ``z`` into ``n_stages`` equal chunks, each paired with the one-hot labels."""
    z_dim = batch.z.shape[1]
    if n_stages <= 0 or z_dim % n_stages:
        raise ConfigError(f"z_dim {z_dim} not divisible into {n_stages} stages")
    oh = one_hot(batch.labels, n_classes, batch.z.dtype)
    return [ConditionChunk(c, oh) for c in torch.chunk(batch.z, n_stages, dim=1)]


def cond_layer_norm(a, cond, w_gamma, w_beta, b_gamma=None, b_beta=None, eps=1e-5):
    """Normalize each token over channels, then apply a condition-dependent affine.

    ``a`` is ``(N, T, C)``; ``cond`` is ``(N, D)`` (the ``[c, z_chunk]`` vector);
    ``w_gamma``/``w_beta`` are ``(D, C)`` so that ``gamma = cond @ w_gamma``.
    The denominator is ``sqrt(var + eps)`` with the biased (population) variance.
    """
    if not eps > 0:
        raise ConfigError("eps must be > 0")
    gamma = cond @ w_gamma
    beta = cond @ w_beta
    if b_gamma is not None:
        gamma = gamma + b_gamma
    if b_beta is not None:
        beta = beta + b_beta
    mu = a.mean(dim=-1, keepdim=True)
    var = a.var(dim=-1, unbiased=False, keepdim=True)
    normed = (a - mu) / torch.sqrt(var + eps)
    return normed * gamma.unsqueeze(1) + beta.unsqueeze(1)


class CondLayerNorm(nn.Module):
    """Layer norm whose gain and bias are linear in ``[c, z_chunk]``.

    Biases start at (1, 0) so an untrained layer behaves like plain layer norm
    plus a small condition-dependent perturbation.
    """

    def __init__(self, dim, cond_dim, eps=1e-5, init_std=0.02):
        super().__init__()
        if not eps > 0:
            raise ConfigError("eps must be > 0")
        self.eps = eps
        self.w_gamma = nn.Parameter(torch.randn(cond_dim, dim) * init_std)
        self.w_beta = nn.Parameter(torch.randn(cond_dim, dim) * init_std)
        self.b_gamma = nn.Parameter(torch.ones(dim))
        self.b_beta = nn.Parameter(torch.zeros(dim))

    def affine(self, cond):
        return cond @ self.w_gamma + self.b_gamma, cond @ self.w_beta + self.b_beta

    def forward(self, a, cond):
        return cond_layer_norm(a, cond, self.w_gamma, self.w_beta,
                               self.b_gamma, self.b_beta, self.eps)
