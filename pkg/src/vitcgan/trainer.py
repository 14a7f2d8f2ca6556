"""Alternating GAN optimization with co-trained loss temperatures, FID-based
checkpoint selection, and checkpoint I/O."""

import json
import logging
import os
import shutil
from dataclasses import dataclass

import numpy as np
import torch

from . import config as C
from .config import GanConfig, TrainConfig
from .diffaug import AugPolicy, apply_policy, sample_draw
from .discriminator import Discriminator
from .errors import ConfigError, InputError, NumericalError
from .generator import Generator
from .losses import (LossWeights, class_nll, critic_losses, d_objective, g_objective,
                     gradient_penalty, make_report)
from .metrics import extract_features, fid

log = logging.getLogger(__name__)


@dataclass
class GanState:
    gan_cfg: GanConfig
    train_cfg: TrainConfig
    gen: Generator
    disc: Discriminator
    weights: LossWeights
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    rng: torch.Generator
    policy: AugPolicy
    step: int = 0
    d_updates: int = 0
    g_updates: int = 0
    dump_dir: str = None


def build_state(gan_cfg: GanConfig, train_cfg: TrainConfig):
    torch.manual_seed(train_cfg.seed)
    gen = Generator(gan_cfg.generator)
    disc = Discriminator(gan_cfg.discriminator)
    weights = LossWeights()
    betas = (train_cfg.adam_beta1, train_cfg.adam_beta2)
    opt_g = torch.optim.Adam(list(gen.parameters()) + weights.generator_params(), lr=train_cfg.lr, betas=betas)
    opt_d = torch.optim.Adam(list(disc.parameters()) + weights.discriminator_params(), lr=train_cfg.lr, betas=betas)
    rng = torch.Generator().manual_seed(train_cfg.seed + 1)
    return GanState(gan_cfg, train_cfg, gen, disc, weights, opt_g, opt_d, rng,
                    AugPolicy.parse(gan_cfg.aug_policy))


def _guard(state, named):
    bad = [k for k, v in named.items() if not torch.isfinite(torch.as_tensor(v)).all()]
    if not bad:
        return
    path = None
    if state.dump_dir:
        os.makedirs(state.dump_dir, exist_ok=True)
        path = os.path.join(state.dump_dir, f"nan_step{state.step:07d}.pt")
        torch.save({"step": state.step, "gen": state.gen.state_dict(), "disc": state.disc.state_dict(),
                    "weights": state.weights.state_dict(),
                    "losses": {k: float(torch.as_tensor(v).detach()) for k, v in named.items()}}, path)
    raise NumericalError(f"non-finite loss at step {state.step}: {bad} (state dump: {path})")


def sample_conditions(state, n):
    z = torch.randn(n, state.gan_cfg.generator.z_dim, generator=state.rng)
    labels = torch.randint(0, state.gan_cfg.generator.n_classes, (n,), generator=state.rng)
    return z, labels


def discriminator_step(state, real, real_labels, fake, fake_labels, draw=None, gp_eps=None):
    """One D update on fixed inputs; returns the loss components."""
    lc = state.gan_cfg.loss
    if draw is not None:
        real = apply_policy(real, state.policy, draw)
        fake = apply_policy(fake, state.policy, draw)
    out_r = state.disc(real)
    out_f = state.disc(fake)
    l_s_d, _ = critic_losses(out_r.critic_score, out_f.critic_score)
    if lc.gp_coeff > 0:
        gp = gradient_penalty(lambda x: state.disc(x).critic_score, real, fake, lc.gp_coeff,
                              eps=gp_eps, generator=state.rng)
    else:
        gp = torch.zeros(())
    l2 = class_nll(out_r.class_logits, real_labels)
    l3 = class_nll(out_f.class_logits, fake_labels)
    logits = ((out_r.class_logits, real_labels), (out_f.class_logits, fake_labels))
    d_total, coeff = d_objective(l_s_d, gp, l2, l3, state.weights, lc.scenario,
                                 lc.exact_scaled_softmax, logits)
    _guard(state, {"d_total": d_total, "l_s_d": l_s_d, "gp": gp, "l2": l2, "l3": l3})
    state.opt_d.zero_grad(set_to_none=True)
    d_total.backward()
    state.opt_d.step()
    state.d_updates += 1
    return dict(d_total=d_total, l_s_d=l_s_d, gp=gp, l2=l2, l3=l3, coeff_d=coeff)


def generator_step(state, z, labels, draw=None):
    lc = state.gan_cfg.loss
    fake = state.gen(z, labels)
    if draw is not None:
        fake = apply_policy(fake, state.policy, draw)
    state.disc.requires_grad_(False)  # no D parameter grads needed for the G update
    try:
        out = state.disc(fake)
    finally:
        state.disc.requires_grad_(True)
    l_s_g = -out.critic_score.mean()
    l1 = class_nll(out.class_logits, labels)
    g_total, coeff = g_objective(l_s_g, l1, state.weights, lc.scenario, lc.exact_scaled_softmax,
                                 ((out.class_logits, labels),))
    _guard(state, {"g_total": g_total, "l_s_g": l_s_g, "l1": l1})
    state.opt_g.zero_grad(set_to_none=True)
    g_total.backward()
    state.opt_g.step()
    state.g_updates += 1
    return dict(g_total=g_total, l_s_g=l_s_g, l1=l1, coeff_g=coeff)


def train_step(state, real, real_labels):
    """``d_steps_per_g`` discriminator updates followed by one generator update."""
    n = real.shape[0]
    size = tuple(real.shape[2:])
    d = None
    for _ in range(state.train_cfg.d_steps_per_g):
        z, yf = sample_conditions(state, n)
        with torch.no_grad():
            fake = state.gen(z, yf)
        draw = sample_draw(state.policy, n, size, state.rng)
        d = discriminator_step(state, real, real_labels, fake, yf, draw)
    z, yf = sample_conditions(state, n)
    draw = sample_draw(state.policy, n, size, state.rng)
    g = generator_step(state, z, yf, draw)
    state.step += 1
    return make_report(d["d_total"], g["g_total"], d["l_s_d"], g["l_s_g"], d["gp"],
                       g["l1"], d["l2"], d["l3"], state.weights, d["coeff_d"], g["coeff_g"], state.step)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(state, path, epoch=None, fid_value=None):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    torch.save({
        "gen": state.gen.state_dict(),
        "disc": state.disc.state_dict(),
        "weights": state.weights.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "rng_state": state.rng.get_state(),
        "gan_config": json.dumps(C.to_dict(state.gan_cfg), sort_keys=True),
        "train_config": json.dumps(C.to_dict(state.train_cfg), sort_keys=True),
        "config_hash": C.config_hash(state.gan_cfg),
        "step": state.step, "d_updates": state.d_updates, "g_updates": state.g_updates,
        "epoch": epoch, "fid": fid_value,
    }, path)
    return path


def load_checkpoint(path):
    """Rebuild a :class:`GanState` and check the stored config round-trips exactly."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    gan_dict = json.loads(blob["gan_config"])
    gan_cfg = C.from_dict(GanConfig, gan_dict)
    if C.to_dict(gan_cfg) != gan_dict:
        raise ConfigError(f"{path}: stored GAN config does not round-trip")
    train_cfg = C.from_dict(TrainConfig, json.loads(blob["train_config"]))
    state = build_state(gan_cfg, train_cfg)
    state.gen.load_state_dict(blob["gen"])
    state.disc.load_state_dict(blob["disc"])
    state.weights.load_state_dict(blob["weights"])
    state.opt_g.load_state_dict(blob["opt_g"])
    state.opt_d.load_state_dict(blob["opt_d"])
    state.rng.set_state(blob["rng_state"])
    state.step, state.d_updates, state.g_updates = blob["step"], blob["d_updates"], blob["g_updates"]
    return state, blob


# -- fit -----------------------------------------------------------------------

@dataclass
class CheckpointRecord:
    epoch: int
    fid: float
    path: str
    config_hash: str

    def __post_init__(self):
        if not self.fid >= 0:
            raise NumericalError(f"invalid FID {self.fid}")


def select_best(records):
    """Minimal FID; the earliest epoch wins ties."""
    if not records:
        raise InputError("no checkpoint records")
    return min(records, key=lambda r: (r.fid, r.epoch))


def epoch_batches(n, batch_size, seed, epoch):
    """Batch index order as a pure function of (seed, epoch); the last partial batch is dropped."""
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]


@torch.no_grad()
def generator_fid(gen, ref_features, n, extractor, seed, n_classes, batch_size=64):
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(n, gen.cfg.z_dim, generator=g)
    labels = torch.arange(n) % n_classes
    was = gen.training
    gen.eval()
    imgs = torch.cat([gen(z[i:i + batch_size], labels[i:i + batch_size]) for i in range(0, n, batch_size)])
    gen.train(was)
    return fid(extract_features(imgs, extractor), ref_features)


def fit(train_ds, val_ds, gan_cfg: GanConfig, train_cfg: TrainConfig, out_dir, state=None,
        on_epoch=None):
    """Train, evaluating FID at epoch 0 and every ``fid_every`` epochs (plus the last).

    Writes ``train_log.jsonl`` (one LossReport per step), a checkpoint per
    evaluated epoch, ``checkpoints.json`` and ``best.ckpt``. Returns the best
    :class:`CheckpointRecord`.
    """
    if len(train_ds) < train_cfg.batch_size:
        raise InputError(f"dataset of {len(train_ds)} items is smaller than batch size {train_cfg.batch_size}")
    os.makedirs(out_dir, exist_ok=True)
    state = state or build_state(gan_cfg, train_cfg)
    state.dump_dir = out_dir
    images = torch.as_tensor(train_ds.images)
    labels = torch.as_tensor(train_ds.labels)
    ref = val_ds.images[:train_cfg.fid_sample_count]
    ref_feats = extract_features(torch.as_tensor(ref), train_cfg.fid_extractor)
    n_classes = gan_cfg.generator.n_classes
    records = []

    def evaluate(epoch):
        value = generator_fid(state.gen, ref_feats, train_cfg.fid_sample_count, train_cfg.fid_extractor,
                              train_cfg.seed + 7, n_classes)
        path = save_checkpoint(state, os.path.join(out_dir, f"ckpt_epoch{epoch:04d}.pt"), epoch, value)
        rec = CheckpointRecord(epoch, value, path, C.config_hash(gan_cfg))
        records.append(rec)
        with open(os.path.join(out_dir, "checkpoints.json"), "w") as fh:
            json.dump([r.__dict__ for r in records], fh, indent=2)
        log.info("epoch %d FID %.4f", epoch, value)
        return rec

    evaluate(0)
    with open(os.path.join(out_dir, "train_log.jsonl"), "a") as logf:
        for epoch in range(1, train_cfg.epochs + 1):
            batches = epoch_batches(len(train_ds), train_cfg.batch_size, train_cfg.seed, epoch)
            if train_cfg.max_steps_per_epoch:
                batches = batches[:train_cfg.max_steps_per_epoch]
            for idx in batches:
                idx = torch.as_tensor(idx)
                report = train_step(state, images[idx], labels[idx])
                row = report.to_dict()
                row["epoch"] = epoch
                logf.write(json.dumps(row) + "\n")
            logf.flush()
            if epoch % train_cfg.fid_every == 0 or epoch == train_cfg.epochs:
                evaluate(epoch)
            if on_epoch is not None:
                on_epoch(epoch, state)
    best = select_best(records)
    shutil.copyfile(best.path, os.path.join(out_dir, "best.ckpt"))
    return best
