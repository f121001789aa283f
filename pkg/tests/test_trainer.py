import inspect

import numpy as np
import pytest

from conftest import fd_gradient, rel_err, small_config
from rscn import trainer
from rscn.config import ExperimentConfig, ScheduleConfig
from rscn.datasets import synth_images, synth_subspaces
from rscn.evaluation import clustering_accuracy
from rscn.selfexpr import off_block_mass, postprocess_C
from rscn.trainer import (
    TrainingDiverged, TrainLog, fit, is_refinement_epoch, lr_schedule_step, pretrain_autoencoder,
    pretrain_dscnet, should_stop, train_full,
)

TINY_ENCODER = [{"filters": 4, "kernel": 3, "stride": 2}, {"filters": 8, "kernel": 3, "stride": 2}]


def image_config(**schedule):
    sched = {"ae_epochs": 50, "ae_lr": 0.01, "dsc_epochs": 20, "dsc_lr": 0.005, "t_max": 20,
             "early_stop": False}
    sched.update(schedule)
    return small_config(model={"encoder": TINY_ENCODER}, schedule=sched)


@pytest.fixture(scope="module")
def images():
    return synth_images(3, 8, size=16, seed=0).samples


# -- schedules -------------------------------------------------------------------------

def test_decreasing_loss_keeps_lr():
    s = ScheduleConfig(plateau_patience=3)
    assert lr_schedule_step([5, 4, 3, 2, 1], 0.1, s) == 0.1


def test_flat_loss_reduces_lr():
    s = ScheduleConfig(plateau_patience=3, plateau_factor=0.1, lr_min=1e-9)
    assert lr_schedule_step([1.0] * 4, 0.1, s) == pytest.approx(0.01)
    # patience not yet exhausted
    assert lr_schedule_step([1.0] * 3, 0.1, s) == 0.1


def test_lr_clamped_at_minimum():
    s = ScheduleConfig(plateau_patience=2, plateau_factor=0.1, lr_min=1e-4)
    assert lr_schedule_step([1.0] * 5, 1e-4, s) == 1e-4
    assert lr_schedule_step([1.0] * 5, 5e-4, s) == 1e-4


def test_early_stop_rule():
    s = ScheduleConfig(early_stop_patience=3, early_stop_min_delta=1e-3)
    assert should_stop([1.0, 0.9, 0.9, 0.9, 0.9], s)
    assert not should_stop([1.0, 0.9, 0.8, 0.7, 0.6], s)
    assert not should_stop([1.0] * 10, ScheduleConfig(early_stop=False))


def test_refinement_epochs():
    assert [e for e in range(1, 200) if is_refinement_epoch(e, 50, 30)] == [80, 110, 140, 170]


# -- stages -----------------------------------------------------------------------------

def test_autoencoder_halves_reconstruction_loss(images):
    _, log = pretrain_autoencoder(images, image_config())
    rec = [r["rec"] for r in log.stage("ae")]
    assert len(rec) == 50
    assert rec[-1] < 0.5 * rec[0]


def test_zero_epoch_budget_leaves_weights(images):
    cfg = image_config(ae_epochs=0)
    ref = trainer.new_model(images, cfg)
    model, log = pretrain_autoencoder(images, cfg)
    for name, p in ref.parameters().items():
        assert np.array_equal(p, model.parameters()[name])
    assert log.stop_reasons["ae"] == "zero epoch budget"


def test_same_seed_same_final_loss(images):
    cfg = image_config(ae_epochs=10, dsc_epochs=10)
    a = pretrain_dscnet(images, cfg, *pretrain_autoencoder(images, cfg))[1]
    b = pretrain_dscnet(images, cfg, *pretrain_autoencoder(images, cfg))[1]
    assert a.records[-1]["total"] == b.records[-1]["total"]


def test_dsc_without_self_expression_is_autoencoder_training(images):
    degenerate = small_config(model={"encoder": TINY_ENCODER}, loss={"lambda2": 0.0, "gamma": 0.0},
                              schedule={"ae_epochs": 0, "dsc_epochs": 15, "dsc_lr": 0.01, "early_stop": False})
    ae_only = small_config(model={"encoder": TINY_ENCODER},
                           schedule={"ae_epochs": 15, "ae_lr": 0.01, "early_stop": False})
    _, log_ae = pretrain_autoencoder(images, ae_only)
    _, log_dsc = pretrain_dscnet(images, degenerate)
    np.testing.assert_allclose([r["rec"] for r in log_dsc.stage("dsc")],
                               [r["rec"] for r in log_ae.stage("ae")], rtol=1e-12)


def test_shallow_dsc_recovers_blocks():
    ds = synth_subspaces(3, 2, 10, 8, seed=3)
    cfg = small_config(schedule={"dsc_epochs": 600}, cim={"sigma_scale": 0.5}, loss={"gamma": 0.1})
    model, _ = pretrain_dscnet(ds.samples, cfg)
    assert off_block_mass(postprocess_C(model.C, cfg.postprocess_config), ds.labels) < 0.05


def test_dsc_curve_non_increasing():
    ds = synth_subspaces(3, 2, 10, 8, seed=3)
    cfg = small_config(schedule={"dsc_epochs": 400, "dsc_lr": 0.005}, model={"error": "mse"})
    _, log = pretrain_dscnet(ds.samples, cfg)
    totals = log.totals("dsc")
    assert np.all(np.diff(totals) <= 1e-3)


def test_warmup_equal_to_budget_means_no_refinement():
    ds = synth_subspaces(3, 2, 10, 6, seed=0)
    cfg = small_config(schedule={"t_max": 25, "warmup": 25, "t0": 5})
    model, log = pretrain_dscnet(ds.samples, cfg)
    _, log, _ = train_full(ds.samples, cfg, model, log)
    assert log.refinement_epochs() == []


@pytest.mark.parametrize("warmup,t0,t_max", [(10, 5, 30), (3, 7, 40), (0, 4, 13)])
def test_refinement_count(warmup, t0, t_max):
    ds = synth_subspaces(3, 2, 10, 6, seed=0)
    cfg = small_config(schedule={"t_max": t_max, "warmup": warmup, "t0": t0})
    model, log = pretrain_dscnet(ds.samples, cfg)
    _, log, _ = train_full(ds.samples, cfg, model, log)
    run = log.epochs_run("full")
    assert run == t_max
    assert len(log.refinement_epochs()) == (run - warmup) // t0
    assert log.refinement_epochs() == [warmup + j * t0 for j in range(1, (run - warmup) // t0 + 1)]


def test_self_supervision_does_not_hurt_pseudo_labels():
    ds = synth_subspaces(3, 3, 15, 15, noise_sigma=0.05, seed=5)
    cfg = small_config(schedule={"dsc_epochs": 300, "t_max": 100, "warmup": 20, "t0": 10},
                       cim={"sigma_scale": 0.5}, postprocess={"rank": 9})
    result = fit(ds.samples, cfg)
    final = clustering_accuracy(result.pseudo.labels, ds.labels, 3)
    assert final >= clustering_accuracy(result.dsc_labels, ds.labels, 3)


def test_early_stop_records_rule():
    ds = synth_subspaces(3, 2, 10, 6, seed=0)
    cfg = small_config(schedule={"dsc_epochs": 5000, "early_stop": True, "early_stop_patience": 20,
                                 "early_stop_min_delta": 1e-3})
    _, log = pretrain_dscnet(ds.samples, cfg)
    assert log.epochs_run("dsc") < 5000
    assert log.stop_reasons["dsc"].startswith("early stop: total loss")
    assert any(e["kind"] == "early_stop" for e in log.events)


def test_divergence_restores_last_good_parameters(monkeypatch):
    ds = synth_subspaces(3, 2, 10, 6, seed=0)
    cfg = small_config(schedule={"dsc_epochs": 10})
    real = trainer.loss_and_grads
    calls = {"n": 0}
    seen = {}

    def flaky(model, X, cfg, stage, pseudo=None):
        calls["n"] += 1
        if calls["n"] == 4:
            seen["C"] = model.C.copy()
            return float("nan"), {}, {}, {"sigma": 1.0}
        return real(model, X, cfg, stage, pseudo)

    monkeypatch.setattr(trainer, "loss_and_grads", flaky)
    log = TrainLog()
    with pytest.raises(TrainingDiverged) as info:
        pretrain_dscnet(ds.samples, cfg, trainlog=log)
    assert np.array_equal(info.value.model.C, seen["C"])
    assert log.stop_reasons["dsc"].startswith("diverged")
    assert log.epochs_run("dsc") == 3


def test_log_has_one_record_per_epoch(tmp_path):
    ds = synth_subspaces(3, 2, 10, 6, seed=0)
    cfg = small_config()
    result = fit(ds.samples, cfg)
    assert result.log.epochs_run("dsc") == 40
    assert result.log.epochs_run("full") == 30
    assert [r["epoch"] for r in result.log.stage("full")] == list(range(1, 31))
    result.log.to_csv(tmp_path / "log.csv", timing=False)
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert "wall_seconds" not in header and "total" in header


# -- label isolation ----------------------------------------------------------------------

def test_trainer_refuses_labelled_dataset():
    ds = synth_subspaces(3, 2, 10, 6, seed=0)
    with pytest.raises(ValueError, match="ground-truth"):
        fit(ds, small_config())
    fit(ds.unlabeled(), small_config(schedule={"dsc_epochs": 2, "t_max": 2}))


def test_training_entry_points_take_no_labels():
    for fn in (fit, pretrain_autoencoder, pretrain_dscnet, train_full, trainer.loss_and_grads):
        params = set(inspect.signature(fn).parameters)
        assert not params & {"labels", "y", "truth", "targets", "dataset"}, fn.__name__
    assert "labels" not in ExperimentConfig().to_dict()["data"]


# -- full-stage gradient -------------------------------------------------------------------

def test_full_stage_gradients_match_fd(monkeypatch):
    X = np.random.default_rng(0).uniform(0, 1, (9, 1, 6, 6))
    cfg = small_config(
        model={"encoder": [{"filters": 2, "kernel": 3, "stride": 2}]},
        loss={"lambda3": 0.3, "lambda4": 0.7, "lambda5": 0.2, "lambda6": 0.4, "gamma": 0.05},
        cim={"sigma": 1.5}, postprocess={"rank": 4},
    )
    model = trainer.new_model(X, cfg)
    model.init_C(len(X))
    model.C[:] = np.random.default_rng(1).normal(0, 0.1, model.C.shape)
    np.fill_diagonal(model.C, 0)
    pseudo = trainer.pseudo_labels_from(model, cfg)
    centroids = np.random.default_rng(2).standard_normal((3, 3))
    # centres are a running statistic, not a parameter; hold them still for the probe
    monkeypatch.setattr(trainer, "update_centroids", lambda *a: centroids)

    _, _, grads, _ = trainer.loss_and_grads(model, X, cfg, "full", pseudo)
    params = model.parameters()
    for name in ("C", "enc.0.W", "dec.1.W", "head.W", "head.b"):
        p = params[name]

        def f(value, p=p):
            saved = p.copy()
            p[...] = value
            out = trainer.loss_and_grads(model, X, cfg, "full", pseudo)[0]
            p[...] = saved
            return out

        num = fd_gradient(f, p)
        if name == "C":
            np.fill_diagonal(num, 0)
        assert rel_err(grads[name], num) < 1e-4, name
