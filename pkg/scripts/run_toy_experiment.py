"""Toy pipeline end to end: train the GAN, gate synthetic images, compare classifiers.

    python scripts/run_toy_experiment.py --out runs/toy --epochs 30

Writes the GAN run directory, the gated synthetic pool and ``results.json``
under ``--out``, and prints the baseline vs augmented table.
"""

import argparse
import json
import logging
import os

import torch

from vitcgan.classifier import ClassifierSpec, run_repetitions
from vitcgan.config import GanConfig, SelectionConfig, TrainConfig
from vitcgan.data import LabeledDataset, make_toy_dataset, save_image_folder, subsample_fraction
from vitcgan.metrics import format_table
from vitcgan.sampler import build_augmented_set, filter_by_confidence, synthesize
from vitcgan.trainer import fit, load_checkpoint


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000, help="toy dataset size")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--fraction", type=float, default=0.1, help="real training fraction for the classifiers")
    p.add_argument("--candidates", type=int, default=1200, help="synthetic images drawn before gating")
    p.add_argument("--reps", type=int, default=5)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    ds = make_toy_dataset(args.n, 32, seed=args.seed)
    train, val, test = ds.split("train"), ds.split("val"), ds.split("test")
    run_dir = os.path.join(args.out, "gan")
    best = fit(train, val, GanConfig(), TrainConfig(epochs=args.epochs), run_dir)
    print(f"best checkpoint: epoch {best.epoch}, FID {best.fid:.3f}")

    state, _ = load_checkpoint(best.path)
    sel = SelectionConfig()
    labels = torch.arange(args.candidates) % 2
    cand = synthesize(state.gen, labels, sel.tau, seed=args.seed)
    state.disc.eval()
    kept, kept_labels, _ = filter_by_confidence(cand, labels, state.disc.classify, sel.conf_threshold)
    pool = LabeledDataset(kept.numpy(), kept_labels.numpy(), 2)
    save_image_folder(pool, os.path.join(args.out, "synthetic"))
    print(f"gate kept {len(pool)} of {len(cand)} candidates")

    sub = subsample_fraction(train, args.fraction, seed=0)
    aug = build_augmented_set(sub, pool, sel, seed=0)
    seeds = tuple(range(args.reps))
    spec = ClassifierSpec()
    base = run_repetitions(sub, val, test, spec, seeds)
    augmented = run_repetitions(aug.dataset, val, test, spec, seeds)
    print(format_table({"real only": base.reports, "real + synthetic": augmented.reports},
                       title=f"{len(sub)} real + {aug.n_synthetic} synthetic"))
    with open(os.path.join(args.out, "results.json"), "w") as fh:
        json.dump({"best_epoch": best.epoch, "best_fid": best.fid, "kept": len(pool),
                   "real-only": base.summary(), "augmented": augmented.summary()}, fh, indent=2)


if __name__ == "__main__":
    main()
