import pytest

from rscn.config import ConfigError, ExperimentConfig, apply_overrides, dumps_toml, load_config, parse_override
from rscn.experiments import CONFIG_DIR, DATASET_CONFIGS, config_path


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.name == path.stem


def test_unknown_top_level_key_is_named(tmp_path):
    (tmp_path / "c.toml").write_text("name = 'x'\nlearning_rate = 3\n")
    with pytest.raises(ConfigError, match="learning_rate"):
        load_config(tmp_path / "c.toml")


def test_unknown_section_key_is_named(tmp_path):
    (tmp_path / "c.toml").write_text("[schedule]\nt_maxx = 3\n")
    with pytest.raises(ConfigError, match="schedule.'t_maxx'"):
        load_config(tmp_path / "c.toml")


def test_missing_file_names_path(tmp_path):
    with pytest.raises(ConfigError, match="nope.toml"):
        load_config(tmp_path / "nope.toml")


def test_bad_toml(tmp_path):
    (tmp_path / "c.toml").write_text("[schedule\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(tmp_path / "c.toml")


def test_type_and_range_checks():
    with pytest.raises(ConfigError, match="must be of type"):
        ExperimentConfig.from_dict({"schedule": {"t_max": "many"}})
    with pytest.raises(ConfigError, match="model.error"):
        ExperimentConfig.from_dict({"model": {"error": "huber"}})
    with pytest.raises(ConfigError, match="loss.gamma"):
        ExperimentConfig.from_dict({"loss": {"gamma": -1.0}})
    with pytest.raises(ConfigError, match="encoder"):
        ExperimentConfig.from_dict({"model": {"encoder": [{"filters": 2, "pad": 1}]}})


def test_overrides():
    cfg = load_config(config_path("synth"), ["schedule.t_max=7", 'model.error="mse"', "seed=3"])
    assert (cfg.schedule.t_max, cfg.model.error, cfg.seed) == (7, "mse", 3)
    assert parse_override("data.path=some/file") == (("data", "path"), "some/file")
    with pytest.raises(ConfigError):
        parse_override("no-equals-sign")
    with pytest.raises(ConfigError):
        apply_overrides({"seed": 1}, ["seed.x=2"])


def test_int_promoted_to_float():
    cfg = ExperimentConfig.from_dict({"loss": {"gamma": 1}})
    assert isinstance(cfg.loss.gamma, float)


def test_toml_round_trip(tmp_path):
    cfg = load_config(config_path("tiny_images"))
    (tmp_path / "c.toml").write_text(dumps_toml(cfg))
    again = load_config(tmp_path / "c.toml")
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_dataset_config_schedules():
    # (folds, T_max, T0, W, initial lr, minimum lr) per dataset
    expected = {
        "mnist": (15, 9000, 30, 50, 1e-3, 1e-6),
        "coil20": (5, 4000, 50, 100, 1e-4, 1e-6),
        "coil100": (5, 4000, 40, 80, 1e-4, 1e-7),
        "eyaleb": (5, 9000, 30, 50, 1e-4, 1e-6),
    }
    assert set(expected) == set(DATASET_CONFIGS)
    for name, values in expected.items():
        cfg = load_config(config_path(name))
        s = cfg.schedule
        assert (cfg.folds.num_folds, s.t_max, s.t0, s.warmup, s.lr_start, s.lr_min) == values, name
