"""Experiment orchestration: train-classifier, invert, reconstruct, ood, evaluate."""

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ManifestWriter, derive_seed, parse_config, write_resolved
from .data import SynthSpec, load_idx, synth_dataset
from .errors import ConfigError, DivergenceError, NetinvError
from .inversion import InversionConfig, inversion_accuracy, train_generator
from .models import Classifier, ClassifierSpec, Generator, GeneratorSpec
from .ood import OodCycleConfig, evaluate_grid, ood_training_cycle, threshold_report
from .privacy import privacy_score
from .reconstruction import ReconConfig, generate_samples, train_reconstructor
from .serialize import load_checkpoint, save_checkpoint, write_csv, write_pgm_grid
from .training import accuracy, train_classifier

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3


def _load_datasets(cfg):
    if cfg["dataset"] == "synth":
        spec = SynthSpec(family=cfg["synth.family"], classes=cfg["synth.classes"],
                         size=cfg["synth.size"], noise=cfg["synth.noise"],
                         channels=cfg["synth.channels"],
                         seed=derive_seed(cfg["seed"], "dataset"))
        return synth_dataset(spec, cfg["synth.train"], cfg["synth.test"])
    if cfg["dataset"] == "idx":
        missing = [k for k in ("idx.train_images", "idx.train_labels",
                               "idx.test_images", "idx.test_labels") if not cfg[k]]
        if missing:
            raise ConfigError("missing IDX paths: " + ", ".join(missing))
        limit = cfg["idx.limit"] or None
        train = load_idx(cfg["idx.train_images"], cfg["idx.train_labels"],
                         name="idx", split="train", limit=limit)
        test = load_idx(cfg["idx.test_images"], cfg["idx.test_labels"],
                        name="idx", split="test", limit=limit)
        return train, test
    raise ConfigError(f"unknown dataset kind {cfg['dataset']!r}")


def _classifier_spec(cfg, in_shape, classes):
    return ClassifierSpec(kind=cfg["model.kind"], in_shape=tuple(in_shape),
                          classes=classes)


def _generator_spec(cfg, out_shape, classes, cond_mode=None):
    hidden = tuple(int(s) for s in cfg["gen.hidden"].split(","))
    return GeneratorSpec(z_dim=cfg["gen.z_dim"],
                         cond_mode=cond_mode or cfg["gen.cond_mode"],
                         cond_dim=cfg["gen.cond_dim"], classes=classes,
                         dropout=cfg["gen.dropout"], hidden=hidden,
                         out_shape=tuple(out_shape))


def _inversion_config(cfg, seed):
    return InversionConfig(alpha=cfg["inv.alpha"], beta=cfg["inv.beta"],
                           gamma=cfg["inv.gamma"], delta=cfg["inv.delta"],
                           batch_size=cfg["inv.batch"], steps=cfg["inv.steps"],
                           lr=cfg["inv.lr"], soften=cfg["inv.soften"],
                           target_accuracy=cfg["inv.target_accuracy"],
                           eval_every=cfg["inv.eval_every"],
                           eval_samples=cfg["inv.eval_samples"], seed=seed)


def _prepare(args, require_config=True):
    cfg = parse_config(args.config, overrides={"seed": args.seed} if args.seed is not None else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    return cfg, out, ManifestWriter(out, cfg)


def cmd_train_classifier(args):
    cfg, out, manifest = _prepare(args)
    manifest.start("train")
    train, test = _load_datasets(cfg)
    clf = Classifier(_classifier_spec(cfg, train.image_shape, train.n_classes),
                     rng=np.random.default_rng(derive_seed(cfg["seed"], "classifier-init")))
    rng = np.random.default_rng(derive_seed(cfg["seed"], "classifier-train"))
    rows = []
    history = train_classifier(clf, train.images, train.labels,
                               epochs=cfg["train.epochs"], batch_size=cfg["train.batch"],
                               lr=cfg["train.lr"], optimizer=cfg["train.optimizer"], rng=rng)
    test_acc = accuracy(clf, test.images, test.labels)
    for epoch, (loss, acc) in enumerate(history):
        rows.append([epoch, loss, acc])
    manifest.stop()
    ckpt = out / "classifier.ninv"
    save_checkpoint(clf, ckpt, seed=cfg["seed"],
                    meta={"dataset": train.name, "test_accuracy": test_acc})
    write_csv(rows, ["epoch", "train_loss", "train_accuracy"], out / "metrics.csv")
    manifest.record(ckpt)
    manifest.record(out / "metrics.csv")
    manifest.write(extra={"test_accuracy": test_acc})
    return EXIT_OK


def cmd_invert(args):
    cfg, out, manifest = _prepare(args)
    clf, info = load_checkpoint(args.classifier)
    if not isinstance(clf, Classifier):
        raise ConfigError(f"{args.classifier} is not a classifier checkpoint")
    clf.freeze()
    manifest.start("invert")
    gen = Generator(_generator_spec(cfg, clf.spec.in_shape, clf.spec.classes),
                    rng=np.random.default_rng(derive_seed(cfg["seed"], "generator-init")))
    inv_cfg = _inversion_config(cfg, cfg["seed"])
    rng = np.random.default_rng(derive_seed(cfg["seed"], "inversion"))
    rows = []

    def log(step, breakdown, acc):
        rows.append([step, breakdown.terms["kl"], breakdown.terms["ce"],
                     breakdown.terms["cosine"], breakdown.terms["ortho"],
                     breakdown.total, "" if acc is None else acc])

    _, final_acc = train_generator(gen, clf, inv_cfg, rng=rng, on_step=log)
    manifest.stop()
    write_csv(rows, ["step", "kl", "ce", "cosine", "ortho", "total", "accuracy"],
              out / "inversion_loss.csv")
    manifest.record(out / "inversion_loss.csv")
    grid_rng = np.random.default_rng(derive_seed(cfg["seed"], "sample-grid"))
    for k in range(clf.spec.classes):
        _, images = generate_samples(gen, 16, grid_rng, classes=[k])
        path = out / f"samples_class{k}.pgm" if clf.spec.in_shape[0] == 1 \
            else out / f"samples_class{k}.ppm"
        write_pgm_grid(images, 4, path)
        manifest.record(path)
    ckpt = out / "generator.ninv"
    save_checkpoint(gen, ckpt, seed=cfg["seed"], meta={"inversion_accuracy": final_acc})
    manifest.record(ckpt)
    manifest.write(extra={"inversion_accuracy": final_acc})
    return EXIT_OK


def cmd_reconstruct(args):
    cfg, out, manifest = _prepare(args)
    clf, info = load_checkpoint(args.classifier)
    if not isinstance(clf, Classifier):
        raise ConfigError(f"{args.classifier} is not a classifier checkpoint")
    clf.freeze()
    train, holdout = _load_datasets(cfg)
    manifest.start("reconstruct")
    gen = Generator(_generator_spec(cfg, clf.spec.in_shape, clf.spec.classes,
                                    cond_mode=cfg["recon.cond_mode"]),
                    rng=np.random.default_rng(derive_seed(cfg["seed"], "generator-init")))
    inv = _inversion_config(cfg, cfg["seed"])
    rcfg = ReconConfig(alpha=inv.alpha, beta=inv.beta, gamma=cfg["recon.gamma"],
                       delta=inv.delta, batch_size=inv.batch_size,
                       steps=cfg["recon.steps"], lr=inv.lr, soften=inv.soften,
                       seed=cfg["seed"], alpha_pert=cfg["recon.alpha_pert"],
                       beta_pert=cfg["recon.beta_pert"], eta_var=cfg["recon.eta_var"],
                       eta_pix=cfg["recon.eta_pix"], eta_grad=cfg["recon.eta_grad"],
                       eps_pert=cfg["recon.eps_pert"])
    rng = np.random.default_rng(derive_seed(cfg["seed"], "reconstruction"))
    train_reconstructor(gen, clf, rcfg, rng=rng)
    labels, recons = generate_samples(gen, cfg["recon.samples"], rng)
    manifest.stop()
    report = privacy_score(recons, train.images, reference_id=train.name)
    holdout_report = privacy_score(recons, holdout.images, reference_id=holdout.name)
    rows = [[i, int(report.match_index[i]), float(report.match_ssim[i])]
            for i in range(len(recons))]
    rows.append(["mean", "", report.mean_ssim])
    write_csv(rows, ["recon_id", "match_id", "ssim"], out / "privacy.csv")
    manifest.record(out / "privacy.csv")
    grid = out / ("reconstructions.pgm" if recons.shape[1] == 1 else "reconstructions.ppm")
    write_pgm_grid(recons, 8, grid)
    manifest.record(grid)
    manifest.write(extra={
        "mean_max_ssim_train": report.mean_ssim,
        "mean_max_ssim_holdout": holdout_report.mean_ssim,
        "memorization_direction_holds": report.mean_ssim > holdout_report.mean_ssim,
    })
    return EXIT_OK


def cmd_ood(args):
    cfg, out, manifest = _prepare(args)
    train, test = _load_datasets(cfg)
    n = train.n_classes
    manifest.start("ood")
    clf = Classifier(_classifier_spec(cfg, train.image_shape, n + 1),
                     rng=np.random.default_rng(derive_seed(cfg["seed"], "classifier-init")))
    inv_cfg = _inversion_config(cfg, cfg["seed"])
    inv_cfg.steps = cfg["ood.inv_steps"]

    gen_rng = np.random.default_rng(derive_seed(cfg["seed"], "generator-init"))

    def gen_factory(cycle):
        return Generator(_generator_spec(cfg, train.image_shape, n + 1), rng=gen_rng)

    ocfg = OodCycleConfig(cycles=cfg["ood.cycles"], epochs_per_cycle=cfg["ood.epochs"],
                          batch_size=cfg["train.batch"], lr=cfg["train.lr"],
                          garbage_init=cfg["ood.garbage_init"],
                          budget=cfg["ood.budget"] or None,
                          capacity_factor=cfg["ood.capacity_factor"],
                          inversion=inv_cfg, seed=cfg["seed"])
    rng = np.random.default_rng(derive_seed(cfg["seed"], "ood-cycle"))
    grids = []

    def on_cycle(report, images):
        path = out / (f"inverted_cycle{report.cycle}.pgm" if train.image_shape[0] == 1
                      else f"inverted_cycle{report.cycle}.ppm")
        write_pgm_grid(images[:16], 4, path)
        grids.append(path)

    clf, reports = ood_training_cycle(clf, gen_factory, train, ocfg, rng=rng,
                                      id_test=test, on_cycle=on_cycle)
    manifest.stop()
    rows = [[r.cycle, r.id_train_accuracy, r.id_test_accuracy, r.inversion_accuracy,
             r.garbage_size, r.mean_ue_inverted, r.threshold_gap, r.ood_misrouted]
            for r in reports]
    write_csv(rows, ["cycle", "id_train_acc", "id_test_acc", "inversion_acc",
                     "garbage_size", "mean_ue_inverted", "threshold_gap",
                     "ood_misrouted"], out / "cycles.csv")
    manifest.record(out / "cycles.csv")
    for path in grids:
        manifest.record(path)
    ckpt = out / "ood_classifier.ninv"
    final_acc = accuracy(clf, test.images, test.labels)
    save_checkpoint(clf, ckpt, seed=cfg["seed"],
                    meta={"id_test_accuracy": final_acc, "garbage_class": n})
    manifest.record(ckpt)
    manifest.write(extra={"id_test_accuracy": final_acc})
    return EXIT_OK


def cmd_evaluate(args):
    cfg, out, manifest = _prepare(args)
    pairs = [p for p in cfg["eval.pairs"].split(",") if p]
    if not pairs:
        raise ConfigError("eval.pairs must list name=checkpoint entries")
    models, datasets = {}, {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"malformed eval.pairs entry {pair!r}")
        name, path = pair.split("=", 1)
        clf, _ = load_checkpoint(path)
        models[name] = clf
        spec = SynthSpec(family=name, classes=cfg["synth.classes"],
                         size=cfg["synth.size"], noise=cfg["synth.noise"],
                         channels=cfg["synth.channels"],
                         seed=derive_seed(cfg["seed"], "dataset"))
        _, test = synth_dataset(spec, cfg["synth.train"], cfg["synth.test"])
        datasets[name] = test
    manifest.start("evaluate")
    row_names, col_names, matrix = evaluate_grid(models, datasets)
    rows = [[rname] + list(matrix[i]) for i, rname in enumerate(row_names)]
    write_csv(rows, ["train\\test"] + col_names, out / "matrix.csv")
    manifest.record(out / "matrix.csv")
    thr_rows = []
    for mname, clf in models.items():
        ds = datasets[mname]
        for oname, ods in datasets.items():
            if oname == mname:
                continue
            rep = threshold_report(clf, ds.images, ds.labels, ods.images)
            thr_rows.append([mname, oname, rep.min_id_confidence,
                             rep.max_ood_confidence, rep.gap,
                             rep.n_ood_misrouted, int(rep.ood_all_routed)])
    write_csv(thr_rows, ["model", "ood_dataset", "min_id_conf", "max_ood_conf",
                         "gap", "ood_misrouted", "all_routed"],
              out / "threshold.csv")
    manifest.record(out / "threshold.csv")
    manifest.stop()
    manifest.write()
    return EXIT_OK


COMMANDS = {
    "train-classifier": (cmd_train_classifier, "Train an n-class classifier"),
    "invert": (cmd_invert, "Train a conditioned generator against a classifier"),
    "reconstruct": (cmd_reconstruct, "Training-like reconstruction + privacy audit"),
    "ood": (cmd_ood, "Garbage-class train/invert/exclude cycle"),
    "evaluate": (cmd_evaluate, "Cross-dataset accuracy matrix and threshold report"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="netinv")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=False, default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        if name in ("invert", "reconstruct"):
            p.add_argument("--classifier", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        return fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NetinvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
