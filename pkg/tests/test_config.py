import pytest

from protoprompt.config import DEFAULTS, RunConfig, load_config, parse_override
from protoprompt.errors import ConfigError


def test_defaults_round_trip():
    cfg = RunConfig()
    assert cfg["protoseg.alpha"] == 20.0
    assert cfg["protoseg.window"] == 4
    assert cfg["protoseg.occupancy_threshold"] == 0.95
    assert cfg["prompts.threshold"] == 0.5
    assert cfg["prompts.connectivity"] == 8
    assert cfg["train.steps"] == 100000
    assert cfg["train.learning_rate"] == 1.0e-4
    assert cfg.as_dict() == DEFAULTS


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        RunConfig({"protoseg.alhpa": 10})


def test_unknown_key_on_lookup():
    with pytest.raises(ConfigError):
        RunConfig()["nope.nope"]


def test_choice_keys_enforced():
    with pytest.raises(ConfigError, match="encoder.backend"):
        RunConfig({"encoder.backend": "resnet"})
    with pytest.raises(ConfigError, match="connectivity"):
        RunConfig({"prompts.connectivity": 6})


@pytest.mark.parametrize(
    "key,bad",
    [
        ("train.steps", 0),
        ("train.learning_rate", 0.0),
        ("train.learning_rate", -1.0e-4),
        ("protoseg.alpha", -1.0),
        ("protoseg.occupancy_threshold", 0.0),
        ("protoseg.occupancy_threshold", 1.5),
        ("prompts.threshold", 1.0),
        ("prompts.threshold", 0.0),
        ("eval.folds", 1),
        ("eval.sections", 0),
        ("prompts.points_per_kind", 0),
    ],
)
def test_range_validation(key, bad):
    with pytest.raises(ConfigError):
        RunConfig({key: bad})


def test_prompts_enabled_subset_checked():
    with pytest.raises(ConfigError, match="unknown kinds"):
        RunConfig({"prompts.enabled": ["bbox", "blob"]})
    with pytest.raises(ConfigError):
        RunConfig({"prompts.enabled": []})


def test_type_coercion():
    cfg = RunConfig({"protoseg.alpha": 5, "train.steps": 10.0, "eval.skip_empty_pairs": "true"})
    assert cfg["protoseg.alpha"] == 5.0 and isinstance(cfg["protoseg.alpha"], float)
    assert cfg["train.steps"] == 10 and isinstance(cfg["train.steps"], int)
    assert cfg["eval.skip_empty_pairs"] is True


def test_fractional_value_for_int_key_rejected():
    with pytest.raises(ConfigError, match="expected an integer"):
        RunConfig({"train.steps": 10.5})


def test_enabled_list_from_comma_string():
    cfg = RunConfig({"prompts.enabled": "bbox, cent"})
    assert cfg["prompts.enabled"] == ["bbox", "cent"]


def test_parse_override():
    assert parse_override("seed=7") == ("seed", 7)
    assert parse_override("protoseg.alpha=12.5") == ("protoseg.alpha", 12.5)
    assert parse_override("eval.support_scan=scan_01") == ("eval.support_scan", "scan_01")
    with pytest.raises(ConfigError):
        parse_override("no-equals-sign")
    with pytest.raises(ConfigError):
        parse_override("=5")


def test_with_overrides_does_not_mutate():
    base = RunConfig()
    derived = base.with_overrides({"seed": 99})
    assert base["seed"] == 0
    assert derived["seed"] == 99


def test_load_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text("protoseg:\n  alpha: 10\nseed: 3\n")
    cfg = load_config(p, overrides=("seed=4",))
    assert cfg["protoseg.alpha"] == 10.0  # nested map flattened
    assert cfg["seed"] == 4  # override beats file


def test_load_config_dotted_keys(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text("protoseg.window: 2\n")
    assert load_config(p)["protoseg.window"] == 2


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/run.yaml")


def test_load_config_rejects_non_mapping(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(p)
