"""
Tests for experiment presets and their YAML loader.
"""

from pathlib import Path

import pytest

from presets import Preset, flatten, get_preset, list_presets
from presets.base import discover_presets, load_preset_from_yaml
from satlab.config.experiment import ExperimentConfig

ALL_PRESETS = ["adversarial_moons", "desk_default", "double_descent", "label_recovery", "selective_overlap"]


def test_list_presets():
    """Test that every bundled preset is listed."""
    assert list_presets() == ALL_PRESETS


@pytest.mark.parametrize("name", ALL_PRESETS)
def test_preset_builds_valid_config(name):
    """Test that every shipped preset resolves to a valid configuration."""
    preset = get_preset(name)

    assert isinstance(preset, Preset)
    assert preset.description
    cfg = ExperimentConfig.from_flat(preset.settings)
    assert cfg.validate() == []
    assert cfg.run.name == name


def test_get_preset_case_insensitive():
    """Test that preset names are case-insensitive."""
    assert get_preset("DESK_DEFAULT") is get_preset("desk_default")


def test_get_preset_invalid():
    """Test that an unknown preset raises ValueError."""
    with pytest.raises(ValueError, match="Unknown preset"):
        get_preset("invalid_preset")


def test_double_descent_sweeps_width():
    """Test that the double descent preset sweeps width."""
    cfg = ExperimentConfig.from_flat(get_preset("double_descent").settings)
    assert cfg.sweep.axis == "width"
    assert cfg.sweep.values == ("4", "8", "16", "32", "64", "128")
    assert cfg.sweep.auto_scale is True


def test_selective_preset_uses_abstain_head():
    """Test that the selective preset runs selective mode."""
    cfg = ExperimentConfig.from_flat(get_preset("selective_overlap").settings)
    assert cfg.run.mode == "selective"
    assert cfg.corruption.scheme == "none"
    assert cfg.mlp_spec(2, 2).abstain is True


def test_adversarial_preset_is_unbounded():
    """Test that the adversarial preset uses moons and an unbounded attack."""
    cfg = ExperimentConfig.from_flat(get_preset("adversarial_moons").settings)
    assert cfg.synthetic.generator == "moons"
    assert cfg.attack.pixel_lo == float("-inf")
    assert cfg.trades.attack.pixel_hi == float("inf")


def test_flatten_nested_sections():
    """Test that nested YAML sections flatten to dotted keys."""
    flat = flatten({
        "corruption": {"rate": 0.4, "scheme": "gaussian"},
        "model": {"hidden_widths": [32, 16]},
        "run": {"robust_eval": True, "output_dir": None},
    })
    assert flat == {
        "corruption.rate": "0.4",
        "corruption.scheme": "gaussian",
        "model.hidden_widths": "32,16",
        "run.robust_eval": "true",
    }


def test_preset_description():
    """Test that the description keeps only its first sentence."""
    preset = Preset(name="Tiny", description="Small run. Takes seconds.", preset_dir=Path("/fake"))
    assert preset.get_description() == "Tiny - Small run"


def test_load_preset_from_yaml(tmp_path):
    """Test loading a preset from its YAML file."""
    preset_dir = tmp_path / "tiny"
    preset_dir.mkdir()
    (preset_dir / "preset.yaml").write_text(
        "name: Tiny\n"
        "description: A test preset.\n"
        "config:\n"
        "  run:\n"
        "    epochs: 3\n"
    )
    preset = load_preset_from_yaml(preset_dir)

    assert preset.name == "Tiny"
    assert preset.preset_dir == preset_dir
    assert preset.settings == {"run.epochs": "3"}


def test_load_preset_missing_yaml(tmp_path):
    """Test that a directory without preset.yaml is rejected."""
    with pytest.raises(FileNotFoundError, match="No preset.yaml"):
        load_preset_from_yaml(tmp_path)


def test_load_preset_missing_fields(tmp_path):
    """Test that missing required fields are named."""
    (tmp_path / "preset.yaml").write_text("name: Tiny\n")
    with pytest.raises(ValueError, match="missing required fields: description, config"):
        load_preset_from_yaml(tmp_path)


def test_load_preset_config_must_be_mapping(tmp_path):
    """Test that a non-mapping config is rejected."""
    (tmp_path / "preset.yaml").write_text("name: Tiny\ndescription: x\nconfig: [1, 2]\n")
    with pytest.raises(ValueError, match="'config' must be a mapping"):
        load_preset_from_yaml(tmp_path)


def test_discover_presets_skips_private_dirs(tmp_path):
    """Test that hidden, private and empty directories are skipped."""
    for name in ("Visible", "_private", ".hidden", "no_yaml"):
        (tmp_path / name).mkdir()
    for name in ("Visible", "_private", ".hidden"):
        (tmp_path / name / "preset.yaml").write_text("name: x\n")

    assert discover_presets(tmp_path) == {"visible": tmp_path / "Visible"}
