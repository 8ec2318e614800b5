from pathlib import Path

import pytest
import yaml

from ..config import (
    OUTPUT_ROOT_ENV,
    TRAINING_DEFAULTS,
    dump_config,
    load_config,
    parse_config,
)
from ..errors import ConfigError
from .conftest import run_document

PACKAGE = Path(__file__).resolve().parent.parent


@pytest.mark.parametrize(
    "name, mode, tasks",
    [
        ("hs_emo_config.yml", "MTL", ["HS", "EMO"]),
        ("off_emo_config.yml", "MTL", ["OFF", "EMO"]),
        ("hs_stl_config.yml", "STL", ["HS"]),
    ],
)
def test_sample_configs_load(name, mode, tasks):
    config = load_config(PACKAGE / name, check_paths=False)
    assert config.mode == mode
    assert [task.name for task in config.tasks] == tasks
    assert config.main_task == tasks[0]
    assert isinstance(config.training["lr"], float)
    assert config.source == PACKAGE / name


def test_defaults_are_filled_in(tmp_path, corpora):
    document = run_document()
    del document["training"]
    config = parse_config(document, base=tmp_path)
    assert config.training == TRAINING_DEFAULTS
    assert config.vocabulary["max_size"] is None
    assert config.encoder["layernorm_eps"] == 1e-12
    emo = config.tasks[1]
    assert emo.text_column == "text"
    assert emo.val_path == (tmp_path / "data" / "emo_dev.csv").resolve()


def test_round_trip_through_dump(tmp_path, run_config_path):
    config = load_config(run_config_path)
    dumped = dump_config(config, tmp_path / "copy" / "run_config.yml")
    assert load_config(dumped).to_dict() == config.to_dict()


def test_exponent_strings_become_floats(tmp_path, corpora):
    document = run_document()
    document["training"]["lr"] = "1e-5"
    document["encoder"]["dropout_p"] = 0
    config = parse_config(document, base=tmp_path)
    assert config.training["lr"] == 1e-5
    assert config.encoder["dropout_p"] == 0.0


def test_problems_are_reported_together(tmp_path, corpora):
    document = run_document()
    document["training"]["lr"] = "fast"
    document["training"]["warmup"] = 10
    document["encoder"]["n_layers"] = 1.5
    document["tasks"][0]["role"] = "primary"
    document["tasks"][1]["train_path"] = "data/missing.csv"
    del document["seed"]
    with pytest.raises(ConfigError) as info:
        parse_config(document, base=tmp_path)
    fields = info.value.fields
    assert {
        "seed",
        "training.lr",
        "training.warmup",
        "encoder.n_layers",
        "tasks[0].role",
        "tasks[1].train_path",
    } <= set(fields)
    assert "missing.csv" in fields["tasks[1].train_path"]


def test_stl_with_two_main_tasks(tmp_path, corpora):
    document = run_document()
    document["training"]["mode"] = "stl"
    document["tasks"][1]["role"] = "main"
    with pytest.raises(ConfigError) as info:
        parse_config(document, base=tmp_path)
    assert "found 2" in info.value.fields["tasks.role"]


def test_stl_picks_the_main_task(tmp_path, corpora):
    document = run_document()
    document["training"]["mode"] = "STL"
    config = parse_config(document, base=tmp_path)
    assert [task.name for task in config.active_tasks()] == ["HS"]
    assert len(config.tasks) == 2


def test_mtl_needs_a_main_task(tmp_path, corpora):
    document = run_document()
    document["tasks"][0]["role"] = "auxiliary"
    with pytest.raises(ConfigError, match="needs a main task"):
        parse_config(document, base=tmp_path)


def test_duplicate_task_names(tmp_path, corpora):
    document = run_document()
    document["tasks"][1]["name"] = "HS"
    with pytest.raises(ConfigError) as info:
        parse_config(document, base=tmp_path)
    assert "duplicate" in info.value.fields["tasks[1].name"]


def test_output_root_from_environment(tmp_path, corpora, monkeypatch):
    root = tmp_path / "elsewhere"
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(root))
    config = parse_config(run_document(output_dir="run1"), base=tmp_path)
    assert config.output_dir == root.resolve() / "run1"
    monkeypatch.delenv(OUTPUT_ROOT_ENV)
    config = parse_config(run_document(output_dir="run1"), base=tmp_path)
    assert config.output_dir == tmp_path.resolve() / "run1"


def test_overrides(run_config_path):
    config = load_config(run_config_path, overrides={"seed": 99, "training.epochs": 7})
    assert config.seed == 99
    assert config.training["epochs"] == 7
    assert load_config(run_config_path, overrides={"seed": None}).seed == 5


def test_invalid_yaml(tmp_path):
    path = tmp_path / "broken.yml"
    path.write_text("seed: [1, 2\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_config(path)


def test_top_level_must_be_mapping(tmp_path):
    path = tmp_path / "list.yml"
    path.write_text(yaml.safe_dump([1, 2]))
    with pytest.raises(ConfigError):
        load_config(path)
