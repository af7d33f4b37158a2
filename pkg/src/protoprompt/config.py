"""Flat dotted-key run configuration with file + override layering.

Config files are YAML. Keys may be written either as literal dotted strings
(``protoseg.alpha: 20``) or as nested maps (``protoseg: {alpha: 20}``) —
nested maps are flattened on load. CLI ``--set key=value`` overrides beat
file values, which beat defaults. Unknown keys are rejected so typos fail
loudly instead of silently running with defaults.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import yaml

from .errors import ConfigError

PROMPT_KINDS = ("bbox", "cent", "conf", "neg")

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "workers": 1,
    # feature extractor
    "encoder.backend": "stub",  # stub | trainable-stub | external
    "encoder.weights_path": "",
    "encoder.device": "cpu",
    "encoder.feature_dim": 64,
    "encoder.patch_stride": 14,
    # coarse prototype segmentation
    "protoseg.window": 4,
    "protoseg.occupancy_threshold": 0.95,
    "protoseg.alpha": 20.0,
    # prompt extraction
    "prompts.enabled": ["bbox", "conf", "cent"],
    "prompts.threshold": 0.5,
    "prompts.connectivity": 8,
    "prompts.points_per_kind": 1,
    # refinement backend
    "segmenter.backend": "stub-box-fill",
    "segmenter.weights_path": "",
    # end-to-end pipeline
    "pipeline.image_size": 672,
    # episodic fine-tuning
    "train.steps": 100000,
    "train.learning_rate": 1.0e-4,
    "train.image_size": 256,
    "train.adapter_rank": 4,
    "train.checkpoint_interval": 10000,
    "train.reg_weight": 1.0,
    "train.gamma_range": [0.7, 1.3],
    "train.noise_sigma": 0.02,
    "train.rotation_max_deg": 20.0,
    "train.scale_range": [0.9, 1.1],
    "train.translate_max": 0.1,
    # superpixel pseudo-labels
    "superpixels.scale": 100.0,
    "superpixels.sigma": 0.8,
    "superpixels.min_size": 400,
    "superpixels.cache_dir": "",
    # evaluation protocol
    "eval.sections": 3,
    "eval.folds": 5,
    "eval.skip_empty_pairs": False,
    "eval.support_scan": "",
    # dataset ingestion
    "data.root": "",
    "data.normalization": "minmax",  # minmax | ct-window | percentile
    "data.ct_window": [-125.0, 275.0],
    "data.percentile": [0.5, 99.5],
}

_CHOICES: dict[str, tuple] = {
    "encoder.backend": ("stub", "trainable-stub", "external"),
    "segmenter.backend": (
        "stub-box-fill",
        "stub-component-echo",
        "external-huge",
        "external-base",
        "external-medsam-base",
    ),
    "prompts.connectivity": (4, 8),
    "data.normalization": ("minmax", "ct-window", "percentile"),
}


def _flatten(tree: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in tree.items():
        if not isinstance(key, str):
            raise ConfigError(f"config keys must be strings, got {key!r}")
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(_flatten(value, prefix=f"{dotted}."))
        else:
            out[dotted] = value
    return out


def _coerce(key: str, value: Any, default: Any) -> Any:
    """Bring a raw YAML value in line with the default's type."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return list(value)
    if isinstance(default, str):
        if value is None:
            return ""
        return str(value)
    return value


class RunConfig:
    """Immutable resolved configuration; every report embeds ``as_dict()``."""

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        data = dict(DEFAULTS)
        if values:
            for key, value in values.items():
                if key not in DEFAULTS:
                    raise ConfigError(f"unknown config key {key!r}")
                data[key] = _coerce(key, value, DEFAULTS[key])
        self._data = data
        self.validate()

    def __getitem__(self, key: str) -> Any:
        try:
            return self._data[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def get(self, key: str, default: Any = None) -> Any:
        return self._data.get(key, default)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        merged = dict(self._data)
        merged.update(overrides)
        return RunConfig(merged)

    def as_dict(self) -> dict[str, Any]:
        return copy.deepcopy(self._data)

    def validate(self) -> None:
        d = self._data
        for key, allowed in _CHOICES.items():
            if d[key] not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {d[key]!r}")
        if d["train.steps"] < 1:
            raise ConfigError("train.steps must be >= 1")
        if d["train.learning_rate"] <= 0:
            raise ConfigError("train.learning_rate must be > 0")
        if d["train.adapter_rank"] < 1:
            raise ConfigError("train.adapter_rank must be >= 1")
        if d["protoseg.alpha"] <= 0:
            raise ConfigError("protoseg.alpha must be > 0")
        if not 0.0 < d["protoseg.occupancy_threshold"] <= 1.0:
            raise ConfigError("protoseg.occupancy_threshold must be in (0, 1]")
        if d["protoseg.window"] < 1:
            raise ConfigError("protoseg.window must be >= 1")
        if not 0.0 < d["prompts.threshold"] < 1.0:
            raise ConfigError("prompts.threshold must be in (0, 1)")
        bad = [k for k in d["prompts.enabled"] if k not in PROMPT_KINDS]
        if bad:
            raise ConfigError(f"prompts.enabled contains unknown kinds {bad}; allowed {PROMPT_KINDS}")
        if not d["prompts.enabled"]:
            raise ConfigError("prompts.enabled must not be empty")
        if d["prompts.points_per_kind"] < 1:
            raise ConfigError("prompts.points_per_kind must be >= 1")
        if d["eval.sections"] < 1:
            raise ConfigError("eval.sections must be >= 1")
        if d["eval.folds"] < 2:
            raise ConfigError("eval.folds must be >= 2")
        if d["pipeline.image_size"] < 1 or d["train.image_size"] < 1:
            raise ConfigError("image sizes must be >= 1")
        for key in ("train.gamma_range", "train.scale_range", "data.ct_window", "data.percentile"):
            pair = d[key]
            if len(pair) != 2:
                raise ConfigError(f"{key} must be a [low, high] pair")
            lo, hi = float(pair[0]), float(pair[1])
            if lo > hi:
                raise ConfigError(f"{key}: low {lo} exceeds high {hi}")


def parse_override(text: str) -> tuple[str, Any]:
    """Parse one ``key=value`` override; the value is read as a YAML scalar."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    return key, value


def load_config(path: Optional[str | Path] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Resolve defaults <- file <- ``key=value`` overrides, in that order."""
    values: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            tree = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config file {p}: {exc}") from exc
        if not isinstance(tree, Mapping):
            raise ConfigError(f"config file {p} must contain a mapping")
        values.update(_flatten(tree))
    for item in overrides:
        key, value = parse_override(item)
        values[key] = value
    return RunConfig(values)
