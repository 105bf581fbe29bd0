"""Flat YAML run configuration: pipeline settings plus model hyperparameters."""
import dataclasses
import math

import yaml

from .dataset import DEFAULT_RATIOS
from .l2m import L2MConfig
from .m2l import M2LConfig

MODEL_CONFIGS = {"m2l": M2LConfig, "l2m": L2MConfig}

GENERAL_DEFAULTS = {
    "dataset_root": None,
    "prepared_dir": "prepared",
    "output_dir": "runs",
    "model": "m2l",
    "seed": 0,
    "threads": 1,
    "split_ratios": list(DEFAULT_RATIOS),
    "max_seconds": 30.0,
    "downsample_factor": 10,
    "vocab_scope": "all",
    "spelling_table": None,
    "joint_names": None,
}

# filled from the prepared data rather than from the file
DATA_DERIVED = ("vocab_size", "joints")


class ConfigError(ValueError):
    pass


def _model_keys(kind):
    return {f.name for f in dataclasses.fields(MODEL_CONFIGS[kind])}


class RunConfig:
    """Explicitly given values over defaults.

    Only the given keys are serialized, so ``load -> dump`` reproduces the
    input document up to formatting.
    """

    def __init__(self, values=None):
        values = dict(values or {})
        kind = values.get("model", GENERAL_DEFAULTS["model"])
        if kind not in MODEL_CONFIGS:
            raise ConfigError(f"model must be one of {sorted(MODEL_CONFIGS)}, got {kind!r}")
        allowed = set(GENERAL_DEFAULTS) | _model_keys(kind)
        unknown = sorted(set(values) - allowed)
        if unknown:
            raise ConfigError(f"unknown config keys for model {kind}: {', '.join(unknown)}")
        if values.get("vocab_scope", "all") not in ("all", "train"):
            raise ConfigError("vocab_scope must be 'all' or 'train'")
        if "gradient_clip" in values and values["gradient_clip"] in ("inf", ".inf", "Infinity"):
            values["gradient_clip"] = math.inf
        self.values = values
        self.model_config()  # validate hyperparameters early

    def __getattr__(self, name):
        if name in GENERAL_DEFAULTS:
            return self.values.get(name, GENERAL_DEFAULTS[name])
        raise AttributeError(name)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def with_overrides(self, **kw):
        merged = dict(self.values)
        merged.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig(merged)

    def model_config(self, **data_derived):
        cls = MODEL_CONFIGS[self.model]
        keys = _model_keys(self.model)
        kwargs = {k: v for k, v in self.values.items() if k in keys}
        kwargs.update(data_derived)
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return dict(self.values)

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)


def load_config(path):
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a key-value mapping")
    return RunConfig(data)
