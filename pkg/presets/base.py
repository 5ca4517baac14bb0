"""
Preset dataclass and YAML loader for experiment profiles.
Presets are defined in preset.yaml files within each preset directory.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


@dataclass
class Preset:
    """
    Named experiment profile.
    Loaded from preset.yaml files.
    """

    name: str
    """Short title (e.g., 'Label recovery')"""

    description: str
    """What the profile reproduces and how long it takes"""

    preset_dir: Path
    """Directory containing this preset's files"""

    settings: dict[str, str] = field(default_factory=dict)
    """Flat experiment keys (e.g., {'corruption.rate': '0.4'})"""

    def get_description(self) -> str:
        """Get a human-readable description of this preset"""
        first_sentence = self.description.split('.')[0] if self.description else ""
        return f"{self.name} - {first_sentence}"


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def flatten(mapping: dict, prefix: str = "") -> dict[str, str]:
    """
    Flatten nested YAML sections into dotted keys.

    {'corruption': {'rate': 0.4}} -> {'corruption.rate': '0.4'}
    """
    flat = {}
    for key, value in mapping.items():
        dotted = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, dict):
            flat.update(flatten(value, dotted))
        elif value is not None:
            flat[dotted] = _format_value(value)
    return flat


def load_preset_from_yaml(preset_dir: Path) -> Preset:
    """
    Load a preset from a preset.yaml file.

    Args:
        preset_dir: Path to the preset directory

    Returns:
        Preset instance

    Raises:
        FileNotFoundError: If preset.yaml doesn't exist
        ValueError: If YAML is invalid or missing required fields
    """
    yaml_path = preset_dir / "preset.yaml"

    if not yaml_path.exists():
        raise FileNotFoundError(f"No preset.yaml found in {preset_dir}")

    with open(yaml_path, 'r', encoding='utf-8') as f:
        data = yaml.safe_load(f)

    if not isinstance(data, dict):
        raise ValueError(f"preset.yaml in {preset_dir} must contain a mapping")

    required_fields = ['name', 'description', 'config']
    missing_fields = [name for name in required_fields if name not in data]

    if missing_fields:
        raise ValueError(
            f"preset.yaml in {preset_dir} is missing required fields: "
            f"{', '.join(missing_fields)}"
        )

    if not isinstance(data['config'], dict):
        raise ValueError(
            f"preset.yaml in {preset_dir}: 'config' must be a mapping of sections"
        )

    return Preset(
        name=data['name'],
        description=data['description'],
        preset_dir=preset_dir,
        settings=flatten(data['config']),
    )


def discover_presets(presets_root: Path) -> dict[str, Path]:
    """
    Auto-discover all preset directories containing preset.yaml files.

    Args:
        presets_root: Root directory containing preset folders

    Returns:
        Dictionary mapping preset names (lowercase folder names) to their directories
    """
    presets = {}

    if not presets_root.exists():
        return presets

    for item in presets_root.iterdir():
        if item.is_dir() and not item.name.startswith(('_', '.')):
            if (item / "preset.yaml").exists():
                presets[item.name.lower()] = item

    return presets
