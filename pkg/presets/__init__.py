"""
Experiment presets.

Presets are automatically discovered from subdirectories containing preset.yaml files.
Just drop a new preset folder into presets/ and it will be available!
"""

from pathlib import Path
from .base import Preset, load_preset_from_yaml, discover_presets, flatten


_PRESETS_ROOT = Path(__file__).parent
_PRESET_CACHE = {}  # Cache loaded presets


def get_preset(name: str) -> Preset:
    """
    Get a preset by name.

    Args:
        name: Preset name (e.g., 'label_recovery') - matches folder name

    Returns:
        Preset instance loaded from preset.yaml

    Raises:
        ValueError: If preset name is not found or YAML is invalid
    """
    name_lower = name.lower()

    if name_lower in _PRESET_CACHE:
        return _PRESET_CACHE[name_lower]

    available_presets = discover_presets(_PRESETS_ROOT)

    if name_lower not in available_presets:
        available = ", ".join(sorted(available_presets.keys()))
        raise ValueError(f"Unknown preset '{name}'. Available: {available}")

    try:
        preset = load_preset_from_yaml(available_presets[name_lower])
    except Exception as e:
        raise ValueError(f"Failed to load preset '{name}': {e}")
    _PRESET_CACHE[name_lower] = preset
    return preset


def list_presets() -> list[str]:
    """
    Get list of available preset names.

    Returns:
        List of preset folder names (lowercase)
    """
    return sorted(discover_presets(_PRESETS_ROOT).keys())


__all__ = [
    'Preset',
    'flatten',
    'get_preset',
    'list_presets',
]
