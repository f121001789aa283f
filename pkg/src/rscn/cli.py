"""Command-line entry point: ``rscn <command> --config file.toml [--set key=value ...]``.

Exit codes: 0 success, 1 user error, 2 internal failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .datasets import (
    DataFormatError, Dataset, list_images, load_csv_dataset, load_csv_matrix, load_idx,
    load_image_dir, save_csv_matrix, stack_images, synth_images, synth_subspaces, write_pgm,
)
from .evaluation import VARIANTS, emit_report, read_results_csv, render_report, run_variants
from .model import CheckpointError, SubspaceNet
from .spectral import make_pseudo_labels
from .trainer import TrainLog, pretrain_autoencoder, pretrain_dscnet, train_full

log = logging.getLogger("rscn")

OUTPUT_ENV = "RSCN_OUTPUT_DIR"


class UserError(Exception):
    pass


# -- helpers -------------------------------------------------------------------

def load_dataset(cfg, base=Path(".")):
    """Materialize the dataset described by the [data] section."""
    d = cfg.data

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    if d.source == "synth_subspaces":
        ds = synth_subspaces(d.k, d.subspace_dim, d.ambient_dim, d.n_per_class, d.noise_sigma,
                             d.outlier_frac, d.outlier_mag, cfg.seed)
    elif d.source == "synth_images":
        ds = synth_images(d.k, d.n_per_class, d.image_size, d.subspace_dim, d.noise_sigma, cfg.seed)
    elif d.source == "idx":
        X = load_idx(resolve(d.path))
        labels = load_idx(resolve(d.labels_path), scale=False).astype(int) if d.labels_path else None
        ds = Dataset(X[:, None] if X.ndim == 3 else X, labels, d.k, d.subspace_dim, Path(d.path).stem)
    elif d.source == "image_dir":
        ds = load_image_dir(resolve(d.path), d.extension or None, d.subspace_dim)
        if ds.k != d.k:
            raise UserError(f"{d.path} has {ds.k} class directories but data.k = {d.k}")
    elif d.source == "csv":
        ds = load_csv_dataset(resolve(d.path), resolve(d.labels_path) if d.labels_path else None,
                              d.k, d.subspace_dim)
    else:
        raise UserError(f"unknown data.source {d.source!r}")
    ds.name = cfg.name
    if d.limit:
        ds = ds.subset(np.arange(min(d.limit, len(ds))))
    return ds


def output_dir(args):
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out, command, cfg=None, extra=None):
    manifest = {
        "command": command,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if cfg is not None:
        manifest.update(config_sha256=cfg.digest(), seed=cfg.seed, config=cfg.to_dict())
    manifest.update(extra or {})
    (Path(out) / f"manifest-{command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _load_model(path):
    try:
        return SubspaceNet.load(path)
    except (OSError, CheckpointError) as err:
        raise UserError(f"cannot load checkpoint {path}: {err}") from err


def _write_labels(path, labels, epoch):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "label", "epoch"])
        for i, lab in enumerate(labels):
            w.writerow([i, int(lab), epoch])


# -- commands ------------------------------------------------------------------

def cmd_gen_synth(args, cfg):
    out = output_dir(args)
    ds = load_dataset(cfg, args.base)
    if cfg.data.source == "synth_images":
        for i, (img, lab) in enumerate(zip(ds.samples, ds.labels)):
            cdir = out / "images" / f"class_{lab:03d}"
            cdir.mkdir(parents=True, exist_ok=True)
            write_pgm(cdir / f"img_{i:05d}.pgm", img[0])
        print(f"wrote {len(ds)} images to {out / 'images'}")
    elif cfg.data.source == "synth_subspaces":
        save_csv_matrix(out / "data.csv", ds.samples)
        save_csv_matrix(out / "labels.csv", ds.labels[:, None])
        print(f"wrote {out / 'data.csv'} and {out / 'labels.csv'}")
    else:
        raise UserError("gen-synth needs data.source = synth_subspaces or synth_images")
    write_manifest(out, "gen-synth", cfg)


def _stage_model(args):
    return _load_model(args.init) if args.init else None


def cmd_pretrain_ae(args, cfg):
    out = output_dir(args)
    ds = load_dataset(cfg, args.base)
    model, tlog = pretrain_autoencoder(ds.unlabeled(), cfg, _stage_model(args))
    model.save(out / "ae.bin")
    tlog.to_csv(out / "ae_log.csv", cfg.output.record_timing)
    write_manifest(out, "pretrain-ae", cfg)
    print(f"wrote {out / 'ae.bin'}")


def cmd_pretrain_dsc(args, cfg):
    out = output_dir(args)
    ds = load_dataset(cfg, args.base)
    model = _stage_model(args)
    if model is None:
        model, _ = pretrain_autoencoder(ds.unlabeled(), cfg)
    model, tlog = pretrain_dscnet(ds.unlabeled(), cfg, model)
    model.save(out / "dsc.bin")
    tlog.to_csv(out / "dsc_log.csv", cfg.output.record_timing)
    write_manifest(out, "pretrain-dsc", cfg)
    print(f"wrote {out / 'dsc.bin'}")


def cmd_train(args, cfg):
    out = output_dir(args)
    ds = load_dataset(cfg, args.base)
    data = ds.unlabeled()
    model = _stage_model(args)
    tlog = TrainLog()
    if model is None:
        model, tlog = pretrain_autoencoder(data, cfg, trainlog=tlog)
    if model.C is None or model.C.shape[0] != len(ds):
        model, tlog = pretrain_dscnet(data, cfg, model, tlog)
    model, tlog, pseudo = train_full(data, cfg, model, tlog)
    model.save(out / "model.bin")
    tlog.to_csv(out / "trainlog.csv", cfg.output.record_timing)
    _write_labels(out / "pseudo_labels.csv", pseudo.labels, pseudo.epoch)
    write_manifest(out, "train", cfg, {"stop_reasons": tlog.stop_reasons,
                                       "refinement_epochs": tlog.refinement_epochs()})
    print(f"wrote {out / 'model.bin'}, {out / 'trainlog.csv'}, {out / 'pseudo_labels.csv'}")


def cmd_cluster(args, cfg):
    out = output_dir(args)
    model = _load_model(args.checkpoint)
    if model.C is None:
        raise UserError(f"{args.checkpoint} has no representation matrix")
    cfg = cfg or ExperimentConfig()
    state = make_pseudo_labels(model.C, model.k, cfg.postprocess_config, seed=cfg.seed,
                               restarts=cfg.schedule.kmeans_restarts)
    _write_labels(out / "pseudo_labels.csv", state.labels, 0)
    write_manifest(out, "cluster", cfg, {"checkpoint": str(args.checkpoint)})
    print(f"wrote {out / 'pseudo_labels.csv'}")


def _predict_inputs(path):
    path = Path(path)
    if path.is_dir():
        files = list_images(path)
        if not files:
            files = sorted(p for sub in sorted(path.iterdir()) if sub.is_dir() for p in list_images(sub))
        if not files:
            raise UserError(f"no images found under {path}")
        return [str(f) for f in files], stack_images(files)
    if path.suffix.lower() == ".csv":
        X = load_csv_matrix(path)
        return [f"{path.name}:{i}" for i in range(len(X))], X
    raise UserError(f"--input must be an image directory or a CSV file: {path}")


def cmd_predict(args, cfg):
    out = output_dir(args)
    model = _load_model(args.checkpoint)
    names, X = _predict_inputs(args.input)
    try:
        pred = model.predict(X)
    except ValueError as err:
        raise UserError(str(err)) from err
    target = out / "predictions.csv"
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "class_id"])
        for n, p in zip(names, pred):
            w.writerow([n, int(p)])
    write_manifest(out, "predict", None, {"checkpoint": str(args.checkpoint), "input": str(args.input)})
    print(f"wrote {target}")


def _grid(args, cfg, variants, command):
    out = output_dir(args)
    ds = load_dataset(cfg, args.base)
    records = run_variants(ds, cfg, variants)
    csv_path, md_path = emit_report(records, out, cfg.output.record_timing)
    write_manifest(out, command, cfg)
    print(f"wrote {csv_path} and {md_path}")


def cmd_evaluate(args, cfg):
    _grid(args, cfg, [(cfg.model.error, cfg.model.regularizer)], "evaluate")


def cmd_ablate(args, cfg):
    _grid(args, cfg, VARIANTS, "ablate")


def cmd_report(args, cfg):
    out = output_dir(args)
    path = Path(args.results)
    if not path.is_file():
        raise UserError(f"results file not found: {path}")
    (out / "report.md").write_text(render_report(read_results_csv(path)))
    write_manifest(out, "report", None, {"results": str(path)})
    print(f"wrote {out / 'report.md'}")


COMMANDS = {
    "gen-synth": (cmd_gen_synth, "write the configured synthetic dataset to disk"),
    "pretrain-ae": (cmd_pretrain_ae, "pretrain the autoencoder"),
    "pretrain-dsc": (cmd_pretrain_dsc, "train the self-expression layer with the autoencoder"),
    "train": (cmd_train, "run the full self-supervised training"),
    "cluster": (cmd_cluster, "pseudo-labels from a checkpoint's representation matrix"),
    "predict": (cmd_predict, "classify unseen samples with encoder + softmax head"),
    "evaluate": (cmd_evaluate, "run the configured variant on every fold"),
    "ablate": (cmd_ablate, "run all four error/regularizer variants on every fold"),
    "report": (cmd_report, "render report.md from a results.csv"),
}

# cluster and predict read everything they need from the checkpoint
NEEDS_CONFIG = {"gen-synth", "pretrain-ae", "pretrain-dsc", "train", "evaluate", "ablate"}


def build_parser():
    parser = argparse.ArgumentParser(prog="rscn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name in NEEDS_CONFIG)
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config entry, e.g. schedule.t_max=100")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./runs)")
        if name in ("pretrain-ae", "pretrain-dsc", "train"):
            p.add_argument("--init", help="checkpoint to start from")
        if name in ("cluster", "predict"):
            p.add_argument("--checkpoint", required=True)
        if name == "predict":
            p.add_argument("--input", required=True, help="image directory or CSV matrix")
        if name == "report":
            p.add_argument("--results", required=True)
    return parser


def dispatch(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        cfg = None
        args.base = Path(".")
        if args.config:
            cfg = load_config(args.config, args.overrides)
            args.base = Path(args.config).resolve().parent
        func(args, cfg)
    except (UserError, ConfigError, DataFormatError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        print("internal failure (see traceback above)", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
