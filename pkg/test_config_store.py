"""
运行配置测试: 配置文件解析、覆盖顺序、校验、配置哈希

用法: pytest test_config_store.py
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from app.exceptions import ConfigurationError
from app.models.schemas import AdaptScope, DatasetKind, ReweighMode, RunConfig
from app.services.config_store import (
    DEFAULT_CONFIG,
    build_config,
    config_hash,
    describe_config,
    dump_config_text,
    flatten_config,
    load_config_file,
    parse_config_text,
    parse_overrides,
)


def test_defaults_match_the_schema():
    config = build_config()
    assert config == RunConfig()
    flat = flatten_config(config)
    assert list(flat) == list(DEFAULT_CONFIG)
    assert flat["mcd.rate"] == 0.75
    assert flat["dss.epsilon"] == 0.25
    assert flat["reweigh"] == "de+sl"
    assert flat["model.hidden"] == [64, 32]


def test_parse_config_text():
    text = """
    # desk-scale moons run
    dataset.kind = moons
    dataset.source_rotations = 0, 30   # two source domains
    dss.adapt = both

    reweigh = sl
    """
    values = parse_config_text(text)
    assert values == {
        "dataset.kind": "moons",
        "dataset.source_rotations": ["0", "30"],
        "dss.adapt": "both",
        "reweigh": "sl",
    }
    config = build_config(values)
    assert config.dataset.kind == DatasetKind.MOONS
    assert config.dataset.source_rotations == [0.0, 30.0]
    assert config.dss.adapt == AdaptScope.BOTH
    assert config.reweigh == ReweighMode.SL


def test_unknown_key_is_reported_with_location():
    with pytest.raises(ConfigurationError) as excinfo:
        parse_config_text("seed = 1\nschedule.epochs = 3\n", source="run.cfg")
    assert excinfo.value.key == "schedule.epochs"
    assert "run.cfg:2" in str(excinfo.value)
    with pytest.raises(ConfigurationError):
        parse_config_text("just some words")
    with pytest.raises(ConfigurationError):
        build_config({"mcd.passes": 10})


def test_later_layers_win(tmp_path):
    path = tmp_path / "base.cfg"
    path.write_text("seed = 3\nbatch.size = 32\nbatch.beta = 2\n", encoding="utf-8")
    config = build_config(
        load_config_file(path),
        parse_overrides(["batch.size=48", "dss.epsilon=0.1"]),
        {"batch.beta": 3, "dss.pretrain": None},
    )
    assert config.seed == 3
    assert config.batch.size == 48
    assert config.batch.beta == 3
    assert config.dss.epsilon == 0.1
    assert config.dss.pretrain.value == "source"


def test_validation_errors_name_the_key():
    with pytest.raises(ConfigurationError) as excinfo:
        build_config({"mcd.iterations": "1"})
    assert excinfo.value.key == "mcd.iterations"
    with pytest.raises(ConfigurationError) as excinfo:
        build_config({"dss.adapt": "everything"})
    assert excinfo.value.key == "dss.adapt"
    with pytest.raises(ConfigurationError) as excinfo:
        build_config(parse_overrides(["dss.epsilon=1.0"]))
    assert excinfo.value.key == "dss.epsilon"
    with pytest.raises(ConfigurationError):
        parse_overrides(["no-equals-sign"])


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config_file(tmp_path / "missing.cfg")


def test_hash_ignores_seed_and_output_directory():
    base = build_config()
    assert len(config_hash(base)) == 16
    assert config_hash(base) == config_hash(build_config({"seed": 9, "out_dir": "elsewhere"}))
    assert config_hash(base) != config_hash(build_config({"dss.epsilon": 0.2}))
    assert config_hash(base) != config_hash(build_config({"reweigh": "none"}))


def test_dumped_text_reloads_to_same_config():
    config = build_config({"dataset.kind": "moons", "model.hidden": [16, 8], "model.train_dropout": False, "seed": 5})
    text = dump_config_text(config)
    assert text.startswith(f"# config hash {config_hash(config)}\n")
    reloaded = build_config(parse_config_text(text))
    assert reloaded == config
    assert config_hash(reloaded) == config_hash(config)


def test_describe_config_covers_every_key():
    rows = describe_config(build_config())
    assert [key for key, _, _ in rows] == list(DEFAULT_CONFIG)
    assert ("model.hidden", "64,32", DEFAULT_CONFIG["model.hidden"]["description"]) in rows
