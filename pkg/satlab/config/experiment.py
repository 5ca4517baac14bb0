"""
Experiment configuration.

An experiment is described by flat key=value text with section prefixes:

    run.mode=sat
    corruption.scheme=corrupted_labels
    corruption.rate=0.4
    model.hidden_widths=256,256
    trades.attack.epsilon=0.031

The file is read with python-dotenv's parser (comments, quoting and blank
lines behave as in .env files). Lists are comma separated, booleans are
true/false, and optional fields are simply left out. Unknown keys are
rejected.

Sources are layered, later ones winning: built-in defaults, a preset
(presets/<name>/preset.yaml), a config file (key=value text, or the
summary.json of an earlier run), then individual overrides.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Union, get_args, get_origin, get_type_hints

from dotenv import dotenv_values

from satlab.config.settings import settings
from satlab.errors import ConfigError
from satlab.modules.adversarial import AttackSpec, TradesConfig
from satlab.modules.corruption import CorruptionSpec
from satlab.modules.datasets import SyntheticSpec
from satlab.modules.losses import SceWeights
from satlab.modules.metrics import capacity_sweep_params
from satlab.modules.numeric import ACTIVATIONS, MlpSpec
from satlab.modules.optim import OptimizerConfig
from satlab.modules.selective import DEFAULT_COVERAGES
from satlab.modules.targets import SatConfig
from satlab.objectives import ObjectiveOptions, ObjectiveRegistry

DATA_SOURCES = ("synthetic", "cifar", "idx", "snapshot")
SWEEP_AXES = ("noise_rate", "noise_scheme", "width", "alpha", "start_epoch")


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    mode: str = "sat"
    epochs: int = 120
    batch_size: int = 256
    seed: int = 0
    trials: int = 1
    output_dir: Optional[str] = None
    """Overrides SATLAB_OUTPUT_ROOT."""
    robust_eval: Optional[bool] = None
    """Score robust accuracy during training; unset means adversarial modes only."""


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    train_path: Optional[str] = None
    labels_path: Optional[str] = None
    """IDX label file for train_path."""
    test_path: Optional[str] = None
    test_labels_path: Optional[str] = None
    num_classes: int = 10
    train_count: int = 10000
    test_per_class: int = 200
    """Synthetic test-set size per class, generated with synthetic.seed + 1."""
    augment: bool = False


@dataclass(frozen=True)
class ModelConfig:
    hidden_widths: tuple[int, ...] = (256, 256)
    activation: str = "relu"


@dataclass(frozen=True)
class SatSection:
    """Unset fields fall back to the mode's defaults."""

    start_epoch: Optional[int] = None
    momentum: Optional[float] = None
    reweight: bool = True
    """Off trains on the moving-average targets with uniform sample weights."""

    @property
    def explicit(self) -> bool:
        return self.start_epoch is not None or self.momentum is not None


@dataclass(frozen=True)
class SelectiveConfig:
    coverages: tuple[float, ...] = DEFAULT_COVERAGES


@dataclass(frozen=True)
class SweepSpec:
    axis: Optional[str] = None
    values: tuple[str, ...] = ()
    auto_scale: bool = True
    """Width sweeps derive (E_s, alpha) from capacity unless sat.* is set."""
    base_width: int = 64

    def validate(self) -> list[str]:
        errors = []
        if self.axis is None:
            return errors
        if self.axis not in SWEEP_AXES:
            errors.append(f"sweep.axis must be one of {SWEEP_AXES}, got '{self.axis}'")
        if not self.values:
            errors.append("sweep.values must not be empty")
        if self.base_width < 1:
            errors.append(f"sweep.base_width must be >= 1, got {self.base_width}")
        return errors


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sat: SatSection = field(default_factory=SatSection)
    sce: SceWeights = field(default_factory=SceWeights)
    trades: TradesConfig = field(default_factory=TradesConfig)
    attack: AttackSpec = field(default_factory=AttackSpec)
    selective: SelectiveConfig = field(default_factory=SelectiveConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)

    # ------------------------------------------------------------------
    # Derived settings
    # ------------------------------------------------------------------

    def resolved_sat(self) -> SatConfig:
        """SAT hyperparameters with unset fields taken from the mode's defaults."""
        default = ObjectiveRegistry.get(self.run.mode).default_sat
        return SatConfig(
            start_epoch=default.start_epoch if self.sat.start_epoch is None else self.sat.start_epoch,
            momentum=default.momentum if self.sat.momentum is None else self.sat.momentum,
            reweight=self.sat.reweight,
        )

    def mlp_spec(self, input_dim: int, num_classes: int) -> MlpSpec:
        return MlpSpec(
            input_dim=input_dim,
            hidden_widths=tuple(self.model.hidden_widths),
            num_classes=num_classes,
            activation=self.model.activation,
            abstain=ObjectiveRegistry.get(self.run.mode).abstain,
        )

    def objective_options(self, seed: int) -> ObjectiveOptions:
        return ObjectiveOptions(sce=self.sce, trades=self.trades, seed=seed, reweight=self.sat.reweight)

    def output_root(self) -> Path:
        return Path(self.run.output_dir) if self.run.output_dir else settings.SATLAB_OUTPUT_ROOT

    def with_width_scaling(self) -> "ExperimentConfig":
        """Apply capacity-scaled (E_s, alpha) for the first hidden width unless sat.* is set."""
        if self.sat.explicit or not self.model.hidden_widths:
            return self
        start, alpha = capacity_sweep_params(self.model.hidden_widths[0], self.sweep.base_width)
        return replace(self, sat=replace(self.sat, start_epoch=start, momentum=alpha))

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------

    def validate(self) -> list[str]:
        """
        Validate every section.
        Returns list of field-level error messages, empty if all valid.
        """
        errors = []
        run = self.run
        modes = ObjectiveRegistry.list_modes()
        if run.mode not in modes:
            errors.append(f"run.mode must be one of {tuple(modes)}, got '{run.mode}'")
        if run.epochs < 1:
            errors.append(f"run.epochs must be >= 1, got {run.epochs}")
        if run.batch_size < 1:
            errors.append(f"run.batch_size must be >= 1, got {run.batch_size}")
        if run.trials < 1:
            errors.append(f"run.trials must be >= 1, got {run.trials}")
        if run.seed < 0:
            errors.append(f"run.seed must be >= 0, got {run.seed}")
        if not run.name or Path(run.name).is_absolute() or ".." in Path(run.name).parts:
            errors.append(f"run.name must be a relative directory name, got '{run.name}'")

        data = self.data
        if data.source not in DATA_SOURCES:
            errors.append(f"data.source must be one of {DATA_SOURCES}, got '{data.source}'")
        if data.train_count < 1:
            errors.append(f"data.train_count must be >= 1, got {data.train_count}")
        if data.test_per_class < 1:
            errors.append(f"data.test_per_class must be >= 1, got {data.test_per_class}")
        if data.num_classes < 2:
            errors.append(f"data.num_classes must be >= 2, got {data.num_classes}")
        if data.source == "synthetic":
            errors.extend(self.synthetic.validate())
        elif data.source in DATA_SOURCES:
            required = ["train_path"] + (["labels_path"] if data.source == "idx" else [])
            optional = ["test_path"] + (["test_labels_path"] if data.source == "idx" else [])
            for name in required:
                if getattr(data, name) is None:
                    errors.append(f"data.{name} is required for source '{data.source}'")
            for name in required + optional:
                value = getattr(data, name)
                if value is not None and not resolve_data_path(value).exists():
                    errors.append(f"data.{name} does not exist: {value}")
            if data.source == "idx" and (data.test_path is None) != (data.test_labels_path is None):
                errors.append("data.test_path and data.test_labels_path must be given together")

        errors.extend(self.corruption.validate())
        if any(w < 1 for w in self.model.hidden_widths):
            errors.append(f"model.hidden_widths must all be >= 1, got {list(self.model.hidden_widths)}")
        if self.model.activation not in ACTIVATIONS:
            errors.append(f"model.activation must be one of {ACTIVATIONS}, got '{self.model.activation}'")
        errors.extend(self.optimizer.validate())
        if run.mode in modes:
            errors.extend(self.resolved_sat().validate())
        errors.extend(self.sce.validate())
        errors.extend(self.trades.validate())
        errors.extend(self.attack.validate("attack"))
        for c in self.selective.coverages:
            if not 0.0 < c <= 1.0:
                errors.append(f"selective.coverages must lie in (0, 1], got {c}")
        errors.extend(self.sweep.validate())
        return errors

    def require_valid(self) -> "ExperimentConfig":
        errors = self.validate()
        if errors:
            raise ConfigError(errors)
        return self

    # ------------------------------------------------------------------
    # Flat key=value form
    # ------------------------------------------------------------------

    def to_flat(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for f in fields(self):
            out.update(_flatten(getattr(self, f.name), f.name))
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_flat().items())

    @classmethod
    def from_flat(cls, values: Mapping[str, str]) -> "ExperimentConfig":
        """Build a config from flat keys; raises ConfigError on unknown or malformed keys."""
        known = set(known_keys())
        errors = [f"unknown configuration key '{k}'" for k in values if k not in known]
        config = _build(cls, dict(values), "", errors, cls())
        if errors:
            raise ConfigError(errors)
        return config

    def config_hash(self) -> str:
        canonical = "\n".join(f"{k}={v}" for k, v in sorted(self.to_flat().items()))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# -----------------------------------------------------------------------------
# Flattening helpers
# -----------------------------------------------------------------------------


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def _flatten(obj, prefix: str) -> dict[str, str]:
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}.{f.name}"
        if is_dataclass(value):
            out.update(_flatten(value, key))
        elif value is not None:
            out[key] = _format(value)
    return out


def _leaf_keys(cls, prefix: str) -> list[str]:
    hints = get_type_hints(cls)
    keys = []
    for f in fields(cls):
        key = f"{prefix}.{f.name}" if prefix else f.name
        hint = hints[f.name]
        if is_dataclass(hint):
            keys.extend(_leaf_keys(hint, key))
        else:
            keys.append(key)
    return keys


def known_keys() -> list[str]:
    return _leaf_keys(ExperimentConfig, "")


_TRUE = ("true", "1", "yes", "on")
_FALSE = ("false", "0", "no", "off")


def _coerce(text: str, hint):
    origin = get_origin(hint)
    if origin is Union:
        if text.strip().lower() in ("", "none", "null"):
            return None
        inner = [a for a in get_args(hint) if a is not type(None)][0]
        return _coerce(text, inner)
    if origin is tuple:
        inner = get_args(hint)[0]
        text = text.strip()
        if not text:
            return ()
        return tuple(_coerce(part.strip(), inner) for part in text.split(","))
    if hint is bool:
        lowered = text.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(text)
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text.strip()


def _type_name(hint) -> str:
    return getattr(hint, "__name__", str(hint))


def _build(cls, values: dict[str, str], prefix: str, errors: list[str], base):
    hints = get_type_hints(cls)
    changes = {}
    for f in fields(cls):
        key = f"{prefix}.{f.name}" if prefix else f.name
        hint = hints[f.name]
        if is_dataclass(hint):
            if any(k.startswith(key + ".") for k in values):
                changes[f.name] = _build(hint, values, key, errors, getattr(base, f.name))
        elif key in values:
            try:
                changes[f.name] = _coerce(values[key], hint)
            except ValueError:
                errors.append(f"{key}: cannot parse '{values[key]}' as {_type_name(hint)}")
    return replace(base, **changes)


# -----------------------------------------------------------------------------
# Sources
# -----------------------------------------------------------------------------


def resolve_data_path(path: str) -> Path:
    """Paths that do not exist as given are looked up under SATLAB_DATA_DIR."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    return settings.SATLAB_DATA_DIR / p


def load_config_file(path) -> dict[str, str]:
    """Flat values from a key=value file or from an earlier run's summary.json."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file does not exist: {path}"])
    if path.suffix == ".json":
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict) or not isinstance(data.get("config"), dict):
            raise ConfigError([f"{path}: JSON config must contain a 'config' mapping"])
        return {str(k): str(v) for k, v in data["config"].items()}
    raw = dotenv_values(path)
    missing = [k for k, v in raw.items() if v is None]
    if missing:
        raise ConfigError([f"{path}: key '{k}' has no value" for k in missing])
    return dict(raw)


def parse_overrides(pairs) -> dict[str, str]:
    """['a.b=1', ...] -> {'a.b': '1'}."""
    out = {}
    errors = []
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            errors.append(f"override '{pair}' is not of the form key=value")
            continue
        out[key.strip()] = value.strip()
    if errors:
        raise ConfigError(errors)
    return out


def resolve_config(
    preset: Optional[str] = None,
    config_path: Optional[Union[str, os.PathLike]] = None,
    overrides: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    """Layer preset, config file and overrides over the defaults."""
    merged: dict[str, str] = {}
    if preset:
        from presets import get_preset
        merged.update(get_preset(preset).settings)
    if config_path:
        merged.update(load_config_file(config_path))
    merged.update(overrides or {})
    return ExperimentConfig.from_flat(merged)
