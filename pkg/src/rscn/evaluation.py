"""Accuracy metric, fold runs, the four-variant ablation and report files."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .datasets import stratified_folds
from .spectral import contingency
from .trainer import fit

log = logging.getLogger(__name__)

VARIANTS = (("cim", "bd"), ("cim", "l2"), ("mse", "bd"), ("mse", "l2"))
RESULT_COLUMNS = ("dataset", "variant", "fold", "split", "accuracy", "epochs_run", "wall_seconds")


def variant_name(error, regularizer):
    return f"{error.upper()}+{regularizer.upper()}"


def clustering_accuracy(pred, truth, k=None):
    """Best agreement over relabelings of ``pred`` (Hungarian on the contingency table)."""
    pred, truth = np.asarray(pred, dtype=int), np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        return 0.0
    k = k or int(max(pred.max(), truth.max())) + 1
    M = contingency(pred, truth, k)
    rows, cols = linear_sum_assignment(-M)
    return float(M[rows, cols].sum() / pred.size)


@dataclass(frozen=True)
class ResultRecord:
    dataset: str
    variant: str
    fold: int
    split: str
    accuracy: float
    epochs_run: int
    wall_seconds: float

    def row(self, timing=True):
        acc = "nan" if math.isnan(self.accuracy) else f"{self.accuracy:.6f}"
        wall = f"{self.wall_seconds:.3f}" if timing and not math.isnan(self.wall_seconds) else ""
        return [self.dataset, self.variant, self.fold, self.split, acc, self.epochs_run, wall]


def run_fold(dataset, fold, variant, cfg, fold_id=0):
    """Train on the fold's train split and score seen (pseudo-label) and unseen
    (classifier head) accuracy. A failed run yields records with NaN accuracy."""
    error, reg = variant
    cfg = cfg.with_variant(error, reg)
    name = variant_name(error, reg)
    train = dataset.subset(fold.train)
    test = dataset.subset(fold.test)
    t0 = time.perf_counter()
    try:
        result = fit(train.unlabeled(), cfg)
    except Exception as err:  # a failed fold must not stop the grid
        log.error("fold %d variant %s failed: %s", fold_id, name, err)
        wall = time.perf_counter() - t0
        return (ResultRecord(dataset.name, name, fold_id, "seen", math.nan, -1, wall),
                ResultRecord(dataset.name, name, fold_id, "unseen", math.nan, -1, wall))
    wall = time.perf_counter() - t0
    epochs = len(result.log.records)
    seen = clustering_accuracy(result.pseudo.labels, train.labels, dataset.k)
    unseen = math.nan
    if len(test) and cfg.schedule.t_max > 0:
        unseen = clustering_accuracy(result.model.predict(test.samples), test.labels, dataset.k)
    return (ResultRecord(dataset.name, name, fold_id, "seen", seen, epochs, wall),
            ResultRecord(dataset.name, name, fold_id, "unseen", unseen, epochs, wall))


def fold_plan(dataset, cfg):
    f = cfg.folds
    return stratified_folds(dataset.labels, f.num_folds, cfg.seed, f.regime, f.train_fraction)


def run_variants(dataset, cfg, variants=VARIANTS, plan=None):
    plan = plan or fold_plan(dataset, cfg)
    records = []
    for variant in variants:
        for i, fold in enumerate(plan):
            records += run_fold(dataset, fold, variant, cfg, i)
            log.info("%s fold %d: seen=%.4f unseen=%.4f", variant_name(*variant), i,
                     records[-2].accuracy, records[-1].accuracy)
    return records


# -- report files ------------------------------------------------------------------

def write_results_csv(path, records, timing=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in records:
            w.writerow(r.row(timing))


def read_results_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ResultRecord(
                row["dataset"], row["variant"], int(row["fold"]), row["split"],
                float(row["accuracy"]), int(row["epochs_run"]),
                float(row["wall_seconds"]) if row["wall_seconds"] else math.nan))
    return out


def _summary(values):
    ok = [v for v in values if not math.isnan(v)]
    if not ok:
        return None, None
    mean = sum(ok) / len(ok)
    std = math.sqrt(sum((v - mean) ** 2 for v in ok) / (len(ok) - 1)) if len(ok) > 1 else 0.0
    return mean, std


def render_report(records):
    if not records:
        raise ValueError("no records to report")
    lines = ["# Accuracy report", "",
             "Mean and sample standard deviation (N-1 denominator) across folds.", ""]
    footnote = False
    for dataset in sorted({r.dataset for r in records}):
        rows = [r for r in records if r.dataset == dataset]
        lines += [f"## {dataset}", "",
                  "| variant | folds | seen mean | seen stddev | unseen mean | unseen stddev | failed |",
                  "|---|---:|---:|---:|---:|---:|---:|"]
        for variant in sorted({r.variant for r in rows}):
            vrows = [r for r in rows if r.variant == variant]
            cells = []
            for split in ("seen", "unseen"):
                accs = [r.accuracy for r in vrows if r.split == split]
                mean, std = _summary(accs)
                n_ok = sum(not math.isnan(a) for a in accs)
                if mean is None:
                    cells += ["n/a", "n/a"]
                else:
                    mark = "" if n_ok > 1 else " *"
                    footnote |= n_ok == 1
                    cells += [f"{mean:.5f}", f"{std:.5f}{mark}"]
            folds = len({r.fold for r in vrows})
            failed = len({r.fold for r in vrows if r.epochs_run < 0})
            lines.append(f"| {variant} | {folds} | " + " | ".join(cells) + f" | {failed} |")
        lines.append("")
    if footnote:
        lines += ["\\* single successful fold: standard deviation reported as 0.", ""]
    return "\n".join(lines)


def emit_report(records, out_dir, timing=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(out / "results.csv", records, timing)
    # render from the CSV so regenerating from results.csv is byte-identical
    text = render_report(read_results_csv(out / "results.csv"))
    (out / "report.md").write_text(text)
    return out / "results.csv", out / "report.md"
