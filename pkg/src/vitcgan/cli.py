"""Command line entry point: ``vitcgan <command> [flags]``.

Every command writes its fully resolved ``run_config.json`` into ``--out``.
Failures print one ``error: <kind>: <message>`` line on stderr and exit 1;
usage errors exit 2 (argparse).
"""

import argparse
import csv
import json
import logging
import os
import shutil
import sys

import numpy as np
import torch

from . import config as C
from .classifier import ClassifierSpec, HeadClassifier, run_repetitions
from .data import LabeledDataset, load_dataset, make_toy_dataset, save_image_folder, subsample_fraction
from .errors import ConfigError, InputError, VitCGANError
from .metrics import UndefinedAUCError, classification_report, extract_features, format_table
from .sampler import build_augmented_set, filter_by_confidence, synthesize, write_provenance
from .trainer import fit, generator_fid, load_checkpoint

DATA_ROOT_ENV = "VITCGAN_DATA_ROOT"

log = logging.getLogger("vitcgan")


def _data_path(path):
    root = os.environ.get(DATA_ROOT_ENV)
    if path is None:
        if root is None:
            raise ConfigError(f"--data not given and {DATA_ROOT_ENV} is unset")
        return root
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _run_config(args, **sections):
    cfg = C.load_run_config(args.config) if getattr(args, "config", None) else C.RunConfig()
    data = C.to_dict(cfg)
    for section, values in sections.items():
        for key, val in values.items():
            if val is not None:
                if section == "root":
                    data[key] = val
                elif section in ("generator", "discriminator", "loss"):
                    data["gan"][section][key] = val
                elif section == "gan":
                    data["gan"][key] = val
                else:
                    data[section][key] = val
    return C.from_dict(C.RunConfig, data)


def _write_run_config(out, cfg, command, args):
    os.makedirs(out, exist_ok=True)
    blob = C.to_dict(cfg)
    blob["command"] = command
    blob["args"] = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    C.dump_json(blob, os.path.join(out, "run_config.json"))


# -- commands ----------------------------------------------------------------

def cmd_make_toy(args):
    cfg = _run_config(args, root={"data_root": args.out})
    ds = make_toy_dataset(args.n, args.res, args.seed)
    path = save_image_folder(ds, args.out)
    _write_run_config(args.out, cfg, "make-toy", args)
    print(f"wrote {len(ds)} images and {path}")


def cmd_train_gan(args):
    data = _data_path(args.data)
    cfg = _run_config(
        args, root={"data_root": data},
        train={"epochs": args.epochs, "seed": args.seed, "batch_size": args.batch_size,
               "fid_every": args.fid_every, "fid_sample_count": args.fid_samples,
               "max_steps_per_epoch": args.max_steps_per_epoch, "d_steps_per_g": args.d_steps},
        loss={"gp_coeff": args.gp_coeff, "scenario": args.scenario},
        gan={"aug_policy": args.aug_policy})
    ds = load_dataset(data)
    train, val = ds.split("train"), ds.split("val")
    if args.fraction is not None:
        train = subsample_fraction(train, args.fraction, cfg.train.seed)
    _write_run_config(args.out, cfg, "train-gan", args)
    best = fit(train, val, cfg.gan, cfg.train, args.out)
    print(json.dumps(best.__dict__))


def cmd_generate(args):
    cfg = _run_config(args, selection={"tau": args.tau})
    state, blob = load_checkpoint(args.ckpt)
    n_classes = state.gan_cfg.generator.n_classes
    if args.cls is None:
        labels = np.arange(args.n) % n_classes
    else:
        if not 0 <= args.cls < n_classes:
            raise InputError(f"--class {args.cls} outside [0, {n_classes})")
        labels = np.full(args.n, args.cls)
    imgs = synthesize(state.gen, labels, cfg.selection.tau, args.seed)
    ds = LabeledDataset(imgs.numpy(), labels, n_classes)
    save_image_folder(ds, args.out, prefix="gen")
    write_provenance(args.out, checkpoint=os.path.abspath(args.ckpt), config_hash=blob["config_hash"],
                     checkpoint_epoch=blob.get("epoch"), tau=cfg.selection.tau, seed=args.seed,
                     n=args.n, cls=args.cls)
    _write_run_config(args.out, cfg, "generate", args)
    print(f"generated {args.n} images into {args.out}")


def cmd_select(args):
    cfg = _run_config(args, selection={"conf_threshold": args.lam})
    state, blob = load_checkpoint(args.ckpt)
    cfg.selection.check_classes(state.gan_cfg.generator.n_classes)
    ds = load_dataset(args.inp, n_classes=state.gan_cfg.generator.n_classes)
    state.disc.eval()
    _, _, mask = filter_by_confidence(torch.as_tensor(ds.images), torch.as_tensor(ds.labels),
                                      state.disc.classify, cfg.selection.conf_threshold)
    keep = np.flatnonzero(mask.numpy())
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for i in keep:
        rel = ds.paths[i]
        dst = os.path.join(args.out, rel)
        os.makedirs(os.path.dirname(dst), exist_ok=True)
        shutil.copyfile(os.path.join(args.inp, rel), dst)
        rows.append((rel, int(ds.labels[i]), "train"))
    with open(os.path.join(args.out, "manifest.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "split"])
        w.writerows(rows)
    prov = {}
    src = os.path.join(args.inp, "provenance.json")
    if os.path.exists(src):
        with open(src) as fh:
            prov = json.load(fh)
    prov.update(selection_checkpoint=os.path.abspath(args.ckpt), conf_threshold=cfg.selection.conf_threshold,
                n_in=len(ds), n_kept=len(rows))
    write_provenance(args.out, **prov)
    _write_run_config(args.out, cfg, "select", args)
    print(f"kept {len(rows)} of {len(ds)}")


def cmd_augment_train(args):
    data = _data_path(args.data)
    cfg = _run_config(args, root={"data_root": data}, selection={"ratio": args.ratio})
    ds = load_dataset(data)
    train = subsample_fraction(ds.split("train"), args.fraction, args.seed)
    val, test = ds.split("val"), ds.split("test")
    spec = ClassifierSpec(kind=args.classifier, epochs=args.cls_epochs)
    if args.classifier == "model-head" and args.ckpt:
        state, _ = load_checkpoint(args.ckpt)
        spec.disc_config = state.gan_cfg.discriminator
        spec.init_state = state.disc.state_dict()
    seeds = list(range(args.seed, args.seed + args.reps))
    rows = {"real-only": run_repetitions(train, val, test, spec, seeds)}
    aug_info = None
    if args.synth:
        pool = load_dataset(args.synth, n_classes=ds.n_classes)
        aug = build_augmented_set(train, pool, cfg.selection, args.seed)
        aug_info = {"n_real": aug.n_real, "n_synthetic": aug.n_synthetic, "shortfall": aug.shortfall}
        rows["augmented"] = run_repetitions(aug.dataset, val, test, spec, seeds)
    _write_run_config(args.out, cfg, "augment-train", args)
    table = format_table({k: v.reports for k, v in rows.items()}, title=f"classifier={args.classifier}")
    result = {k: {"rows": v.rows(), "summary": v.summary()} for k, v in rows.items()}
    result["augmentation"] = aug_info
    C.dump_json(result, os.path.join(args.out, "results.json"))
    with open(os.path.join(args.out, "table.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)


def cmd_evaluate(args):
    data = _data_path(args.data)
    cfg = _run_config(args, root={"data_root": data})
    state, _ = load_checkpoint(args.ckpt)
    ds = load_dataset(data, split=args.split, n_classes=state.gan_cfg.generator.n_classes)
    head = HeadClassifier(state.disc).eval()
    with torch.no_grad():
        probs = torch.softmax(head(torch.as_tensor(ds.images)), 1).numpy()
    try:
        report = classification_report(probs[:, 1], ds.labels)
    except UndefinedAUCError as exc:
        report = exc.report
    if not args.no_fid:
        feats = extract_features(torch.as_tensor(ds.images), cfg.train.fid_extractor)
        report.fid = generator_fid(state.gen, feats, args.fid_samples, cfg.train.fid_extractor,
                                   args.seed, state.gan_cfg.generator.n_classes)
    _write_run_config(args.out, cfg, "evaluate", args)
    C.dump_json(report.to_dict(), os.path.join(args.out, "metrics.json"))
    with open(os.path.join(args.out, "metrics.txt"), "w") as fh:
        fh.write(format_table({"class head": [report]}) + "\n")
    print(report.to_json())


def cmd_export_embeddings(args):
    cfg = _run_config(args)
    state, _ = load_checkpoint(args.ckpt)
    src = _data_path(args.data)
    ds = load_dataset(src, split=args.split, n_classes=state.gan_cfg.generator.n_classes)
    head = HeadClassifier(state.disc).eval()
    with torch.no_grad():
        feats = torch.cat([head.features(torch.as_tensor(ds.images[i:i + 256]))
                           for i in range(0, len(ds), 256)]).numpy()
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "embeddings.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label"] + [f"f{i}" for i in range(feats.shape[1])])
        for p, y, f in zip(ds.paths, ds.labels, feats):
            w.writerow([p, int(y)] + [f"{v:.6g}" for v in f])
    _write_run_config(args.out, cfg, "export-embeddings", args)
    print(f"wrote {len(ds)} x {feats.shape[1]} embeddings to {path}")


def build_parser():
    p = argparse.ArgumentParser(prog="vitcgan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.set_defaults(func=func)
        return sp

    sp = add("make-toy", cmd_make_toy, "write the procedural two-class toy dataset")
    sp.add_argument("--n", type=int, default=2000)
    sp.add_argument("--res", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("train-gan", cmd_train_gan, "train the conditional GAN")
    sp.add_argument("--data")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--fid-every", type=int)
    sp.add_argument("--fid-samples", type=int)
    sp.add_argument("--max-steps-per-epoch", type=int)
    sp.add_argument("--d-steps", type=int)
    sp.add_argument("--gp-coeff", type=float)
    sp.add_argument("--scenario", choices=C.SCENARIOS)
    sp.add_argument("--aug-policy")
    sp.add_argument("--fraction", type=float, help="stratified fraction of the train split to use")

    sp = add("generate", cmd_generate, "sample class-conditional images from a checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--class", dest="cls", type=int, help="class id (default: cycle all classes)")
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--tau", type=float, default=0.7)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("select", cmd_select, "keep generated images passing the confidence gate")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--lambda", dest="lam", type=float, default=0.6)

    sp = add("augment-train", cmd_augment_train, "classifier runs with and without synthetic data")
    sp.add_argument("--data")
    sp.add_argument("--synth", help="selected synthetic image folder")
    sp.add_argument("--fraction", type=float, default=0.1)
    sp.add_argument("--ratio", type=float, default=1.0)
    sp.add_argument("--reps", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--classifier", choices=("reference", "model-head"), default="reference")
    sp.add_argument("--cls-epochs", type=int, default=30)
    sp.add_argument("--ckpt", help="GAN checkpoint to initialise the model-head classifier")

    sp = add("evaluate", cmd_evaluate, "class-head metrics and generator FID on a split")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data")
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.add_argument("--no-fid", action="store_true")
    sp.add_argument("--fid-samples", type=int, default=512)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("export-embeddings", cmd_export_embeddings, "class-token features as CSV")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data")
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except VitCGANError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {exc.kind}: {msg}", file=sys.stderr)
        return 1
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
