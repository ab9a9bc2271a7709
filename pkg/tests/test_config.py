import pytest

from nutripipe.config import (
    PipelineConfig,
    dumps_config,
    load_config,
    loads_config,
    parse_utc,
    save_config,
)
from nutripipe.errors import ConfigError


def test_round_trip_lossless(tmp_path):
    cfg = PipelineConfig(
        food_db="/data/db.csv", posts="/data/posts.jsonl", out_dir="run7",
        threshold=0.62, tasks=["engagement"], master_seed=99,
        explain_feature_sets=["C+N", "C+N+F+E"],
    )
    path = tmp_path / "cfg.toml"
    save_config(cfg, path)
    again = load_config(path)
    assert again == cfg
    assert dumps_config(again) == dumps_config(cfg)


def test_defaults_embedded():
    cfg = loads_config("[paths]\nfood_db = \"db.csv\"\nposts = \"p.jsonl\"\n")
    assert cfg.sample_size == 5000
    assert cfg.quantile == 0.999
    assert cfg.kcal_low == 32.0 and cfg.kcal_high == 717.0
    assert cfg.engagement_estimators == 26 and cfg.engagement_depth == 4
    assert cfg.resonance_estimators == 36 and cfg.resonance_depth == 2


def test_comments_and_blank_lines_tolerated():
    cfg = loads_config("# top\n\n[paths]\n# inner\nfood_db = \"x\"\nposts = \"y\"\n")
    assert cfg.food_db == "x"


def test_unknown_section_and_key_rejected():
    with pytest.raises(ConfigError):
        loads_config("[mystery]\nx = 1\n")
    with pytest.raises(ConfigError):
        loads_config("[paths]\nbad_key = 1\n")


def test_bad_value_rejected():
    with pytest.raises(ConfigError):
        loads_config("[paths]\nfood_db = unquoted\n")


def test_key_outside_section_rejected():
    with pytest.raises(ConfigError):
        loads_config("food_db = \"x\"\n")


def test_validate_requires_paths():
    with pytest.raises(ConfigError):
        PipelineConfig().validate()


def test_validate_checks_bounds_and_tasks():
    cfg = PipelineConfig(food_db="a", posts="b", kcal_low=800.0)
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = PipelineConfig(food_db="a", posts="b", tasks=["nope"])
    with pytest.raises(ConfigError):
        cfg.validate()


def test_stage_seed_is_pure_function():
    cfg = PipelineConfig(master_seed=7)
    assert cfg.stage_seed("train") == cfg.stage_seed("train")
    assert cfg.stage_seed("train") != cfg.stage_seed("evaluate")
    assert PipelineConfig(master_seed=8).stage_seed("train") != cfg.stage_seed("train")


def test_parse_utc():
    assert parse_utc("2020-03-01T00:00:00Z") == 1583020800
    assert parse_utc("2020-03-01") == 1583020800
    with pytest.raises(ConfigError):
        parse_utc("not-a-date")
