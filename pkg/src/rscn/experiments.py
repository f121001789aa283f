"""Desk-scale experiments shared by scripts/ and the acceptance tests."""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from .cli import load_dataset
from .config import load_config
from .evaluation import clustering_accuracy, fold_plan, run_fold
from .selfexpr import off_block_mass, postprocess_C
from .trainer import fit

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"
DATASET_CONFIGS = ("mnist", "coil20", "coil100", "eyaleb")


def config_path(name):
    return CONFIG_DIR / f"{name}.toml"


@dataclass(frozen=True)
class RecoveryResult:
    accuracy: float
    off_block: float
    dsc_accuracy: float
    seconds: float


def synthetic_recovery(config="synth", overrides=()):
    """Train the configured pipeline on the whole synthetic set and score the
    final pseudo-labels and the post-processed representation matrix."""
    cfg = load_config(config_path(config), list(overrides))
    ds = load_dataset(cfg)
    t0 = time.perf_counter()
    result = fit(ds.unlabeled(), cfg)
    C = postprocess_C(result.model.C, cfg.postprocess_config)
    return RecoveryResult(
        accuracy=clustering_accuracy(result.pseudo.labels, ds.labels, ds.k),
        off_block=off_block_mass(C, ds.labels),
        dsc_accuracy=clustering_accuracy(result.dsc_labels, ds.labels, ds.k),
        seconds=time.perf_counter() - t0,
    )


def robustness_trial(seed, config="synth_corrupted", overrides=()):
    """CIM and MSE variants on the same corrupted draw; returns {error: RecoveryResult}."""
    out = {}
    for error in ("cim", "mse"):
        out[error] = synthetic_recovery(config, [f"seed={seed}", f'model.error="{error}"', *overrides])
    return out


def cim_beats_mse(trial):
    cim, mse = trial["cim"], trial["mse"]
    return cim.off_block < mse.off_block and cim.accuracy >= mse.accuracy


def unseen_folds(config="tiny_images", overrides=()):
    """Per-fold (seen, unseen) accuracy of the configured variant."""
    cfg = load_config(config_path(config), list(overrides))
    ds = load_dataset(cfg)
    variant = (cfg.model.error, cfg.model.regularizer)
    rows = []
    for i, fold in enumerate(fold_plan(ds, cfg)):
        seen, unseen = run_fold(ds, fold, variant, cfg, i)
        rows.append((i, seen.accuracy, unseen.accuracy))
    return rows


SCHEDULE_PROBE = (
    'data.source="synth_subspaces"', "data.k=3", "data.subspace_dim=2", "data.ambient_dim=10",
    "data.n_per_class=6", "data.limit=0", "model.encoder=[]", "postprocess.rank=6",
    "schedule.dsc_epochs=20", "schedule.early_stop=false",
)


def schedule_refinements(config, overrides=()):
    """Run a dataset config's full-stage schedule (T_max, T0, warm-up) on a small
    shallow synthetic problem and return (cfg, logged refinement epochs)."""
    cfg = load_config(config_path(config), [*SCHEDULE_PROBE, *overrides])
    data = load_dataset(cfg).unlabeled()
    result = fit(data, cfg)
    return cfg, result.log.refinement_epochs()
