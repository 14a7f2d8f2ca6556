"""Adversarial, classification and loss-weighting objectives.

Class losses are indexed as in the joint objective:

* ``l1`` - generator's class loss on fakes (conditioned labels),
* ``l2`` - discriminator's class loss on reals,
* ``l3`` - discriminator's class loss on fakes.

The WGAN-GP terms carry weight exactly 1 unless the ``weight-all`` ablation
scenario is selected.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import SCENARIOS
from .errors import ConfigError, InputError


def gradient_penalty(critic, real, fake, coeff=10.0, eps=None, generator=None):
    """``coeff * mean((||grad D(x_hat)||_2 - 1)^2)`` on per-sample interpolates.

    ``eps`` may be given explicitly (shape ``(N,)``); otherwise it is drawn
    uniformly per sample from ``generator``.
    """
    if real.shape != fake.shape:
        raise InputError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} differ in shape")
    n = real.shape[0]
    if eps is None:
        eps = torch.rand(n, generator=generator, device=real.device, dtype=real.dtype)
    eps = torch.as_tensor(eps, dtype=real.dtype, device=real.device).reshape(n, *([1] * (real.dim() - 1)))
    x_hat = (eps * real + (1 - eps) * fake).detach().requires_grad_(True)
    score = critic(x_hat)
    grad, = torch.autograd.grad(score.sum(), x_hat, create_graph=True)
    norm = grad.reshape(n, -1).norm(2, dim=1)
    return coeff * ((norm - 1) ** 2).mean()


def critic_losses(critic_real, critic_fake):
    """Return ``(d_source_loss, g_source_loss)`` for the Wasserstein critic."""
    d = -critic_real.mean() + critic_fake.mean()
    g = -critic_fake.mean()
    return d, g


def class_nll(logits, labels):
    return F.cross_entropy(logits, torch.as_tensor(labels, device=logits.device).long())


def scaled_class_nll(logits, labels, sigma, exact=False):
    """Temperature-scaled class loss.

    Default is the approximated form ``exp(-sigma) * CE + sigma``. With
    ``exact=True`` the cross entropy of ``softmax(exp(-sigma) * logits)`` is
    returned instead (no additive regularizer).
    """
    sigma = torch.as_tensor(sigma, dtype=logits.dtype, device=logits.device)
    if exact:
        return class_nll(torch.exp(-sigma) * logits, labels)
    return torch.exp(-sigma) * class_nll(logits, labels) + sigma


def kendall_joint(losses, gammas):
    """Uncertainty weighting: ``sum L_i / (2 gamma_i^2) + sum log gamma_i``."""
    if len(losses) != len(gammas):
        raise InputError("need one gamma per loss")
    total = 0.0
    for loss, g in zip(losses, gammas):
        g = torch.as_tensor(g)
        if not bool((g > 0).all()):
            raise ConfigError(f"Kendall weighting requires gamma > 0, got {float(g)}")
        total = total + loss / (2 * g ** 2) + torch.log(g)
    return total


def weighted_joint(l1, l2, l3, weights):
    """``sum exp(-sigma_i) l_i + sum sigma_i`` over the three class losses."""
    s = weights.sigmas()
    return sum(torch.exp(-si) * li for si, li in zip(s, (l1, l2, l3))) + sum(s)


class LossWeights(nn.Module):
    """Trainable temperatures for the weighted objective.

    ``sigma1`` belongs to the generator's optimizer, ``sigma2``/``sigma3`` to
    the discriminator's. ``sigma_src_g``/``sigma_src_d`` are only used by the
    ``weight-all`` ablation; ``gamma*`` only by the ``kendall`` ablation.
    """

    def __init__(self):
        super().__init__()
        self.sigma1 = nn.Parameter(torch.zeros(()))
        self.sigma2 = nn.Parameter(torch.zeros(()))
        self.sigma3 = nn.Parameter(torch.zeros(()))
        self.sigma_src_g = nn.Parameter(torch.zeros(()))
        self.sigma_src_d = nn.Parameter(torch.zeros(()))
        self.gamma1 = nn.Parameter(torch.ones(()))
        self.gamma2 = nn.Parameter(torch.ones(()))
        self.gamma3 = nn.Parameter(torch.ones(()))

    @classmethod
    def from_values(cls, sigma1=0.0, sigma2=0.0, sigma3=0.0):
        w = cls()
        with torch.no_grad():
            w.sigma1.fill_(sigma1)
            w.sigma2.fill_(sigma2)
            w.sigma3.fill_(sigma3)
        return w

    def sigmas(self):
        return (self.sigma1, self.sigma2, self.sigma3)

    def generator_params(self):
        return [self.sigma1, self.sigma_src_g, self.gamma1]

    def discriminator_params(self):
        return [self.sigma2, self.sigma3, self.sigma_src_d, self.gamma2, self.gamma3]


def d_objective(l_s_d, gp, l2, l3, weights, scenario="ours", exact=False, logits=None):
    """Discriminator total and its logged source-term coefficient.

    ``exact`` swaps the approximated class terms for the scaled-logit softmax
    form; it then needs ``logits = ((real_logits, real_labels), (fake_logits, fake_labels))``.
    """
    _check_scenario(scenario)
    src = l_s_d + gp
    coeff = torch.ones(())
    if scenario == "none":
        return src + l2 + l3, coeff
    if scenario == "kendall":
        return src + kendall_joint((l2, l3), (weights.gamma2, weights.gamma3)), coeff
    if scenario == "weight-all":
        coeff = torch.exp(-weights.sigma_src_d)
        src = coeff * src + weights.sigma_src_d
    cls = _class_terms(((l2, weights.sigma2), (l3, weights.sigma3)), exact, logits)
    return src + cls, coeff


def g_objective(l_s_g, l1, weights, scenario="ours", exact=False, logits=None):
    _check_scenario(scenario)
    coeff = torch.ones(())
    src = l_s_g
    if scenario == "none":
        return src + l1, coeff
    if scenario == "kendall":
        return src + kendall_joint((l1,), (weights.gamma1,)), coeff
    if scenario == "weight-all":
        coeff = torch.exp(-weights.sigma_src_g)
        src = coeff * src + weights.sigma_src_g
    return src + _class_terms(((l1, weights.sigma1),), exact, logits), coeff


def _class_terms(pairs, exact, logits):
    if not exact:
        return sum(torch.exp(-s) * l + s for l, s in pairs)
    if logits is None or len(logits) != len(pairs):
        raise ConfigError("exact scaled softmax needs the raw logits for every class term")
    return sum(scaled_class_nll(lg, y, s, exact=True) for (lg, y), (_, s) in zip(logits, pairs))


def _check_scenario(scenario):
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown weighting scenario {scenario!r}")


@dataclass
class LossReport:
    g_total: float
    d_total: float
    l_s_g: float
    l_s_d: float
    gp: float
    l1: float
    l2: float
    l3: float
    sigmas: Dict[str, float] = field(default_factory=dict)
    weights: Dict[str, float] = field(default_factory=dict)
    source_coeff_g: float = 1.0
    source_coeff_d: float = 1.0
    step: int = 0

    def to_dict(self):
        return asdict(self)

    def is_finite(self):
        vals = [self.g_total, self.d_total, self.l_s_g, self.l_s_d, self.gp, self.l1, self.l2, self.l3]
        vals += list(self.sigmas.values()) + list(self.weights.values())
        return all(math.isfinite(v) for v in vals)


def assemble_totals(l_s_d, l_s_g, gp, l1, l2, l3, weights, scenario="ours"):
    """Compose both totals and return ``(d_total, g_total, LossReport)``."""
    d_total, cd = d_objective(l_s_d, gp, l2, l3, weights, scenario)
    g_total, cg = g_objective(l_s_g, l1, weights, scenario)
    report = make_report(d_total, g_total, l_s_d, l_s_g, gp, l1, l2, l3, weights, cd, cg)
    return d_total, g_total, report


def make_report(d_total, g_total, l_s_d, l_s_g, gp, l1, l2, l3, weights, coeff_d=1.0, coeff_g=1.0, step=0):
    f = lambda t: float(torch.as_tensor(t).detach())
    s = [f(x) for x in weights.sigmas()]
    return LossReport(
        g_total=f(g_total), d_total=f(d_total), l_s_g=f(l_s_g), l_s_d=f(l_s_d), gp=f(gp),
        l1=f(l1), l2=f(l2), l3=f(l3),
        sigmas={"sigma1": s[0], "sigma2": s[1], "sigma3": s[2]},
        weights={"w1": math.exp(-s[0]), "w2": math.exp(-s[1]), "w3": math.exp(-s[2])},
        source_coeff_g=f(coeff_g), source_coeff_d=f(coeff_d), step=step)
