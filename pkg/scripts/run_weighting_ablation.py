"""Train each loss-weighting scenario for a fixed number of steps on the toy set.

    python scripts/run_weighting_ablation.py --steps 200 --out runs/ablation.json

Reports the final losses, the learned sigmas and the source-loss coefficients
per scenario. Short runs only check that each scenario trains; they say
nothing about which one generates better images.
"""

import argparse
import json

import torch

from vitcgan.config import SCENARIOS, GanConfig, LossConfig, TrainConfig
from vitcgan.data import make_toy_dataset
from vitcgan.trainer import build_state, epoch_batches, train_step


def run(scenario, ds, steps, seed):
    state = build_state(GanConfig(loss=LossConfig(scenario=scenario)), TrainConfig(seed=seed))
    x, y = torch.as_tensor(ds.images), torch.as_tensor(ds.labels)
    reports, epoch = [], 0
    while len(reports) < steps:
        epoch += 1
        for idx in epoch_batches(len(ds), state.train_cfg.batch_size, seed, epoch):
            if len(reports) == steps:
                break
            idx = torch.as_tensor(idx)
            reports.append(train_step(state, x[idx], y[idx]))
    return reports


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenarios", nargs="+", default=list(SCENARIOS), choices=SCENARIOS)
    p.add_argument("--out", help="optional JSON file for the per-step reports")
    args = p.parse_args()

    ds = make_toy_dataset(args.n, 32, seed=7).split("train")
    results = {}
    for scenario in args.scenarios:
        reports = run(scenario, ds, args.steps, args.seed)
        last = reports[-1]
        finite = all(r.is_finite() for r in reports)
        print(f"{scenario:>10}: finite={finite} g_total={last.g_total:.4f} d_total={last.d_total:.4f} "
              f"coeff_d={last.source_coeff_d:.4f} coeff_g={last.source_coeff_g:.4f} sigmas={last.sigmas}")
        results[scenario] = [r.to_dict() for r in reports]
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh)


if __name__ == "__main__":
    main()
