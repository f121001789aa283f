"""Staged training: autoencoder pretraining, DSC pretraining and the full
self-supervised model with periodic pseudo-label refinement.

None of the functions here accept ground-truth labels. They take raw
sample arrays, or :class:`~rscn.datasets.Dataset` views whose labels were
stripped with ``Dataset.unlabeled()``.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .classifier import update_centroids
from .datasets import Dataset
from .losses import (
    CimConfig, center_loss, cq_loss, cross_entropy_loss, median_sigma,
    reconstruction_loss, symmetry_loss, total_loss,
)
from .model import SubspaceNet
from .nn import NonFiniteError, make_optimizer
from .selfexpr import error_loss, regularizer, self_express, zero_diagonal
from .spectral import PseudoLabelState, align_labels, make_pseudo_labels, one_hot

log = logging.getLogger(__name__)

PART_NAMES = ("rec", "se", "cq", "ce", "cnt", "sym")


class TrainingDiverged(RuntimeError):
    """Loss or gradient became non-finite; ``model`` holds the last good parameters."""

    def __init__(self, message, model=None):
        super().__init__(message)
        self.model = model


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    events: list = field(default_factory=list)
    stop_reasons: dict = field(default_factory=dict)

    def append(self, **record):
        self.records.append(record)

    def event(self, stage, epoch, kind, detail=""):
        self.events.append({"stage": stage, "epoch": epoch, "kind": kind, "detail": detail})

    def stage(self, name):
        return [r for r in self.records if r["stage"] == name]

    def refinement_epochs(self, stage="full"):
        return [r["epoch"] for r in self.records if r["stage"] == stage and r["refined"]]

    def epochs_run(self, stage="full"):
        return len(self.stage(stage))

    def totals(self, stage):
        return np.array([r["total"] for r in self.stage(stage)])

    def to_csv(self, path, timing=True):
        cols = ["stage", "epoch", *PART_NAMES, "total", "lr", "sigma", "refined"]
        if timing:
            cols.append("wall_seconds")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow([_fmt(r[c]) for c in cols])


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _samples(data):
    if isinstance(data, Dataset):
        if data.labels is not None:
            raise ValueError("trainer must not receive ground-truth labels; pass dataset.unlabeled()")
        return np.asarray(data.samples, dtype=float)
    return np.asarray(data, dtype=float)


# -- schedules -----------------------------------------------------------------

def _stalled(history, patience, min_delta):
    if len(history) <= patience:
        return False
    return min(history[-patience:]) > min(history[:-patience]) - min_delta


def lr_schedule_step(history, current_lr, cfg):
    """Plateau rule: reduce the rate when the best total loss has not improved by
    ``plateau_min_delta`` within ``plateau_patience`` epochs. ``history`` holds the
    total losses since the last rate change."""
    if _stalled(list(history), cfg.plateau_patience, cfg.plateau_min_delta):
        return max(current_lr * cfg.plateau_factor, cfg.lr_min)
    return current_lr


def should_stop(history, cfg):
    return cfg.early_stop and _stalled(list(history), cfg.early_stop_patience, cfg.early_stop_min_delta)


def is_refinement_epoch(epoch, warmup, t0):
    return epoch > warmup and (epoch - warmup) % t0 == 0


# -- loss evaluation ---------------------------------------------------------------

def kernel_width(E, cfg):
    if cfg.cim.sigma > 0:
        return float(cfg.cim.sigma)
    return cfg.cim.sigma_scale * median_sigma(E)


def loss_and_grads(model, X, cfg, stage, pseudo=None):
    """All active loss parts for ``stage`` in {'ae', 'dsc', 'full'} and gradients
    keyed like ``model.parameters()``. Returns (total, parts, grads, info)."""
    w = cfg.weights
    parts = dict.fromkeys(PART_NAMES, 0.0)
    grads = {}
    info = {"sigma": float("nan")}
    Zrows, enc_acts = model.encoder.forward(model._as_batch(X), keep=True)
    gZ = np.zeros_like(Zrows)

    if model.decoder is not None and (w.lambda1 > 0 or stage == "ae"):
        Xhat, dec_acts = model.decoder.forward(Zrows, keep=True)
        parts["rec"], gXhat = reconstruction_loss(enc_acts[0], Xhat, with_grad=True)
        gZd, gdec = model.decoder.backward(dec_acts, w.lambda1 * gXhat)
        gZ += gZd
        grads.update({f"dec.{n}": g for n, g in gdec.items()})

    if stage in ("dsc", "full"):
        C = model.C
        Z = Zrows.T
        _, E = self_express(Z, C)
        cim_cfg = None
        if cfg.model.error == "cim":
            info["sigma"] = kernel_width(E, cfg)
            cim_cfg = CimConfig(sigma=info["sigma"], distance=cfg.cim.distance)
        err, gE = error_loss(E, cfg.model.error, cim_cfg)
        gC = -Z.T @ gE
        reg = 0.0
        if w.gamma > 0:
            reg, gR = regularizer(C, cfg.model.regularizer, cfg.k, cfg.model.eig_method)
            gC = gC + w.gamma * gR
        parts["se"] = err + w.gamma * reg
        gC = w.lambda2 * gC
        gZ += w.lambda2 * (gE - gE @ C.T).T

        if stage == "full":
            if w.lambda3 > 0:
                parts["cq"], g = cq_loss(C, pseudo.Q, with_grad=True)
                gC = gC + w.lambda3 * g
            if w.lambda6 > 0:
                parts["sym"], g = symmetry_loss(C, with_grad=True)
                gC = gC + w.lambda6 * g
        grads["C"] = zero_diagonal(np.array(gC))

    if stage == "full":
        logits = model.head.forward(Zrows)
        model.centroids = update_centroids(logits, pseudo.labels, model.centroids, model.k)
        parts["ce"], g_ce = cross_entropy_loss(logits, pseudo.Q, with_grad=True)
        parts["cnt"], g_cnt = center_loss(logits, pseudo.labels, model.centroids, with_grad=True)
        g_logits = w.lambda4 * g_ce + w.lambda5 * g_cnt
        gZh, ghead = model.head.backward(Zrows, g_logits)
        gZ += gZh
        grads.update({f"head.{n}": g for n, g in ghead.items()})

    if model.encoder.parameters():
        _, genc = model.encoder.backward(enc_acts, gZ)
        grads.update({f"enc.{n}": g for n, g in genc.items()})

    weights = w if stage != "ae" else _ae_weights(w)
    total = total_loss([parts[p] for p in PART_NAMES], weights)
    return total, parts, grads, info


def _ae_weights(w):
    from .losses import LossWeights

    return LossWeights(lambda1=w.lambda1, lambda2=0, lambda3=0, lambda4=0, lambda5=0, lambda6=0)


# -- stage runner ----------------------------------------------------------------

def _snapshot(params):
    return {n: p.copy() for n, p in params.items()}


def _restore(params, snap):
    for n, p in params.items():
        p[...] = snap[n]


def _run_stage(model, X, cfg, stage, epochs, lr, trainlog, pseudo=None, on_epoch_end=None):
    s = cfg.schedule
    params = model.parameters(include_head=(stage == "full"), include_C=(stage != "ae"))
    opt = make_optimizer(cfg.model.optimizer, lr)
    history, since_change = [], []
    t_start = time.perf_counter()
    trainlog.stop_reasons[stage] = "epoch budget reached" if epochs else "zero epoch budget"
    for epoch in range(1, epochs + 1):
        last_good = _snapshot(params)
        total, parts, grads, info = loss_and_grads(model, X, cfg, stage, pseudo)
        try:
            if not np.isfinite(total):
                raise NonFiniteError(f"non-finite total loss at {stage} epoch {epoch}")
            opt.step(params, {n: grads[n] for n in params}, lr)
            if not all(np.all(np.isfinite(p)) for p in params.values()):
                raise NonFiniteError(f"non-finite parameters after {stage} epoch {epoch}")
        except NonFiniteError as err:
            _restore(params, last_good)
            trainlog.stop_reasons[stage] = f"diverged: {err}"
            raise TrainingDiverged(str(err), model) from err
        if model.C is not None and stage != "ae":
            zero_diagonal(model.C)

        refined = False
        if on_epoch_end is not None:
            pseudo, refined = on_epoch_end(epoch, pseudo)
        trainlog.append(stage=stage, epoch=epoch, **parts, total=total, lr=lr,
                        sigma=info["sigma"], refined=refined,
                        wall_seconds=time.perf_counter() - t_start)
        history.append(total)
        since_change.append(total)
        new_lr = lr_schedule_step(since_change, lr, s)
        if new_lr != lr:
            trainlog.event(stage, epoch, "lr", f"{lr!r} -> {new_lr!r}")
            lr, since_change = new_lr, []
        if should_stop(history, s):
            trainlog.stop_reasons[stage] = (
                f"early stop: total loss did not improve by {s.early_stop_min_delta} "
                f"in {s.early_stop_patience} epochs")
            trainlog.event(stage, epoch, "early_stop", trainlog.stop_reasons[stage])
            break
    return pseudo


def new_model(samples, cfg):
    samples = np.asarray(samples)
    shape = samples.shape[1:]
    if cfg.model.encoder and len(shape) == 2:
        shape = (1,) + shape
    return SubspaceNet(shape, cfg.k, cfg.model.encoder, seed=cfg.seed)


def pretrain_autoencoder(data, cfg, model=None, trainlog=None):
    """Train encoder/decoder on reconstruction alone. No-op for the shallow model."""
    X = _samples(data)
    model = model or new_model(X, cfg)
    trainlog = trainlog if trainlog is not None else TrainLog()
    if model.shallow:
        trainlog.stop_reasons["ae"] = "shallow model: nothing to pretrain"
        return model, trainlog
    _run_stage(model, X, cfg, "ae", cfg.schedule.ae_epochs, cfg.schedule.ae_lr, trainlog)
    return model, trainlog


def pretrain_dscnet(data, cfg, model=None, trainlog=None):
    """Add the self-expression layer (C initialized to zero) and train it jointly."""
    X = _samples(data)
    model = model or new_model(X, cfg)
    trainlog = trainlog if trainlog is not None else TrainLog()
    if model.C is None or model.C.shape[0] != len(X):
        model.init_C(len(X))
    _run_stage(model, X, cfg, "dsc", cfg.schedule.dsc_epochs, cfg.schedule.dsc_lr, trainlog)
    return model, trainlog


def pseudo_labels_from(model, cfg, epoch=0):
    return make_pseudo_labels(model.C, cfg.k, cfg.postprocess_config, seed=cfg.seed,
                              restarts=cfg.schedule.kmeans_restarts, epoch=epoch)


def train_full(data, cfg, model, trainlog=None):
    """Full model: self-expression + FC head + self-supervision, refining
    pseudo-labels every T0 epochs once the warm-up is over."""
    X = _samples(data)
    if model.C is None:
        raise ValueError("train_full needs a model with a self-expression layer (run pretrain_dscnet)")
    trainlog = trainlog if trainlog is not None else TrainLog()
    s = cfg.schedule
    pseudo = pseudo_labels_from(model, cfg)
    trainlog.event("full", 0, "init_labels", "pseudo-labels from pretrained C")

    def refine(epoch, current):
        if not is_refinement_epoch(epoch, s.warmup, s.t0):
            return current, False
        fresh = pseudo_labels_from(model, cfg, epoch)
        if len(np.unique(fresh.labels)) < cfg.k:
            log.warning("refinement at epoch %d produced fewer than %d clusters; keeping labels", epoch, cfg.k)
            trainlog.event("full", epoch, "refine_skipped", "fewer than k nonempty clusters")
            return current, True
        labels = align_labels(fresh.labels, current.labels, cfg.k)
        trainlog.event("full", epoch, "refine", "")
        return PseudoLabelState(labels, one_hot(labels, cfg.k), model.centroids.copy(), epoch), True

    pseudo = _run_stage(model, X, cfg, "full", s.t_max, s.lr_start, trainlog, pseudo, refine)
    return model, trainlog, pseudo


@dataclass
class FitResult:
    model: SubspaceNet
    log: TrainLog
    pseudo: PseudoLabelState | None
    dsc_labels: np.ndarray | None = None


def fit(data, cfg):
    """Run every stage in order and return the trained model, its log, and
    the pseudo-labels recomputed from the final representation matrix."""
    X = _samples(data)
    model, trainlog = pretrain_autoencoder(X, cfg)
    model, trainlog = pretrain_dscnet(X, cfg, model, trainlog)
    dsc_labels = pseudo_labels_from(model, cfg).labels
    pseudo = None
    if cfg.schedule.t_max > 0:
        model, trainlog, pseudo = train_full(X, cfg, model, trainlog)
    final = pseudo_labels_from(model, cfg, epoch=trainlog.epochs_run("full"))
    return FitResult(model, trainlog, final, dsc_labels)
