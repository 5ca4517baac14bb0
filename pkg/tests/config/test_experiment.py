"""
Tests for experiment configuration: validation, the flat key=value form and
layering of presets, config files and overrides.
"""

import json

import pytest

from satlab.config.experiment import (
    ExperimentConfig,
    known_keys,
    load_config_file,
    parse_overrides,
    resolve_config,
)
from satlab.errors import ConfigError


class TestValidation:

    def test_defaults_are_valid(self):
        """Test that the default config validates cleanly."""
        assert ExperimentConfig().validate() == []

    def test_field_level_messages(self):
        """Test that each invalid field gets its own message."""
        cfg = ExperimentConfig.from_flat({
            "corruption.rate": "1.5",
            "run.epochs": "0",
            "sat.momentum": "1.2",
        })
        errors = cfg.validate()
        assert "corruption.rate must be in [0, 1], got 1.5" in errors
        assert "run.epochs must be >= 1, got 0" in errors
        assert "sat.momentum must be in [0, 1], got 1.2" in errors

    def test_unknown_mode(self):
        """Test that an unregistered mode is reported."""
        errors = ExperimentConfig.from_flat({"run.mode": "mixup"}).validate()
        assert any(e.startswith("run.mode must be one of") for e in errors)

    def test_run_name_must_stay_inside_output_root(self):
        """Test that run names cannot leave the output directory."""
        for name in ("../escape", "/abs"):
            errors = ExperimentConfig.from_flat({"run.name": name}).validate()
            assert any(e.startswith("run.name") for e in errors)

    def test_file_sources_need_existing_paths(self, tmp_path):
        """Test that file sources need paths that exist."""
        cfg = ExperimentConfig.from_flat({"data.source": "idx", "data.train_path": str(tmp_path / "missing")})
        errors = cfg.validate()
        assert "data.labels_path is required for source 'idx'" in errors
        assert any(e.startswith("data.train_path does not exist") for e in errors)

    @pytest.mark.parametrize("key", ["run.seed", "corruption.seed", "synthetic.seed"])
    def test_negative_seed_rejected(self, key):
        """Test that a negative seed is reported against its field."""
        errors = ExperimentConfig.from_flat({key: "-1"}).validate()
        assert f"{key} must be >= 0, got -1" in errors

    def test_require_valid_raises(self):
        """Test that require_valid raises ConfigError with the messages."""
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_flat({"optimizer.name": "rmsprop"}).require_valid()
        assert any("optimizer.name" in e for e in exc.value.errors)


class TestFlatForm:

    def test_unknown_key_rejected(self):
        """Test that a misspelled key is rejected by name."""
        with pytest.raises(ConfigError, match="unknown configuration key 'corruption.ratio'"):
            ExperimentConfig.from_flat({"corruption.ratio": "0.4"})

    def test_unparseable_value_rejected(self):
        """Test that every unparseable value is reported."""
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_flat({"run.epochs": "many", "run.robust_eval": "maybe"})
        assert len(exc.value.errors) == 2
        assert exc.value.errors[0].startswith("run.epochs: cannot parse 'many'")

    def test_round_trip(self):
        """Test that a config survives conversion to flat form and back."""
        cfg = ExperimentConfig.from_flat({
            "run.mode": "trades_sat",
            "run.robust_eval": "true",
            "model.hidden_widths": "32, 16",
            "trades.attack.pixel_lo": "-inf",
            "selective.coverages": "1.0,0.8",
        })
        assert ExperimentConfig.from_flat(cfg.to_flat()) == cfg

    def test_parsed_types(self):
        """Test that flat strings parse to typed fields."""
        cfg = ExperimentConfig.from_flat({
            "model.hidden_widths": "32, 16",
            "run.robust_eval": "yes",
            "optimizer.milestones": "",
        })
        assert cfg.model.hidden_widths == (32, 16)
        assert cfg.run.robust_eval is True
        assert cfg.optimizer.milestones == ()

    def test_unset_optionals_are_omitted(self):
        """Test that unset optional fields are left out of the flat form."""
        flat = ExperimentConfig().to_flat()
        assert "sat.start_epoch" not in flat
        assert "run.output_dir" not in flat
        assert set(flat) <= set(known_keys())

    def test_nested_keys_are_known(self):
        """Test that nested section keys are listed."""
        keys = known_keys()
        assert "trades.attack.epsilon" in keys
        assert "synthetic.generator" in keys

    def test_config_hash_ignores_key_order(self):
        """Test that the config hash does not depend on key order."""
        a = ExperimentConfig.from_flat({"run.epochs": "5", "corruption.rate": "0.2"})
        b = ExperimentConfig.from_flat({"corruption.rate": "0.2", "run.epochs": "5"})
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != ExperimentConfig().config_hash()


class TestResolvedSat:

    @pytest.mark.parametrize("mode,expected", [
        ("sat", (60, 0.9)),
        ("trades_sat", (70, 0.9)),
        ("selective", (0, 0.99)),
    ])
    def test_mode_defaults(self, mode, expected):
        """Test the warm-up and momentum defaults of each mode."""
        sat = ExperimentConfig.from_flat({"run.mode": mode}).resolved_sat()
        assert (sat.start_epoch, sat.momentum) == expected

    def test_explicit_values_win(self):
        """Test that explicit SAT values override mode defaults."""
        sat = ExperimentConfig.from_flat({"run.mode": "selective", "sat.start_epoch": "5"}).resolved_sat()
        assert (sat.start_epoch, sat.momentum) == (5, 0.99)

    def test_reweight_defaults_on(self):
        """Test that confidence weighting is on unless sat.reweight says otherwise."""
        assert ExperimentConfig().resolved_sat().reweight is True
        cfg = ExperimentConfig.from_flat({"sat.reweight": "false"})
        assert cfg.resolved_sat().reweight is False
        assert cfg.objective_options(seed=3).reweight is False

    def test_reweight_survives_width_scaling(self):
        """Test that capacity scaling keeps an explicit sat.reweight."""
        cfg = ExperimentConfig.from_flat({"model.hidden_widths": "128", "sat.reweight": "false"})
        assert cfg.with_width_scaling().resolved_sat().reweight is False

    def test_selective_model_has_abstain_output(self):
        """Test that selective mode adds an abstention output."""
        spec = ExperimentConfig.from_flat({"run.mode": "selective"}).mlp_spec(2, 2)
        assert spec.output_dim == 3


class TestWidthScaling:

    def test_scaled_from_first_width(self):
        """Test that width scaling reads the first hidden width."""
        cfg = ExperimentConfig.from_flat({"model.hidden_widths": "128"}).with_width_scaling()
        assert cfg.sat.start_epoch == 20
        assert cfg.sat.momentum == pytest.approx(0.81)

    def test_explicit_sat_kept(self):
        """Test that explicit SAT values disable width scaling."""
        cfg = ExperimentConfig.from_flat({"model.hidden_widths": "128", "sat.momentum": "0.5"})
        assert cfg.with_width_scaling() is cfg


class TestSources:

    def test_load_key_value_file(self, tmp_path):
        """Test loading a key=value file with comments and quotes."""
        path = tmp_path / "exp.env"
        path.write_text("# noise level\ncorruption.rate=0.2\n\nrun.mode='erm'\n")
        assert load_config_file(path) == {"corruption.rate": "0.2", "run.mode": "erm"}

    def test_load_summary_json(self, tmp_path):
        """Test loading the config stored in a run summary."""
        path = tmp_path / "summary.json"
        path.write_text(json.dumps({"config": {"run.epochs": "7"}, "aggregate": {}}))
        assert load_config_file(path) == {"run.epochs": "7"}

    def test_json_without_config_rejected(self, tmp_path):
        """Test that JSON without a config section is rejected."""
        path = tmp_path / "other.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config_file(path)

    def test_missing_file(self, tmp_path):
        """Test that a missing config file is reported."""
        with pytest.raises(ConfigError, match="does not exist"):
            load_config_file(tmp_path / "nope.env")

    def test_key_without_value_rejected(self, tmp_path):
        """Test that a key without a value is rejected."""
        path = tmp_path / "exp.env"
        path.write_text("corruption.rate\n")
        with pytest.raises(ConfigError, match="has no value"):
            load_config_file(path)

    def test_parse_overrides(self):
        """Test that overrides are split and stripped."""
        assert parse_overrides(["run.epochs=3", " sat.momentum = 0.8 "]) == {
            "run.epochs": "3",
            "sat.momentum": "0.8",
        }
        assert parse_overrides(None) == {}

    def test_parse_overrides_rejects_bare_key(self):
        """Test that an override without '=' is rejected."""
        with pytest.raises(ConfigError, match="key=value"):
            parse_overrides(["run.epochs"])

    def test_layering_order(self, tmp_path):
        """Test that overrides beat the file and the file beats the preset."""
        path = tmp_path / "exp.env"
        path.write_text("run.epochs=50\ncorruption.rate=0.2\n")
        cfg = resolve_config("desk_default", path, {"corruption.rate": "0.6"})

        assert cfg.run.batch_size == 256       # preset
        assert cfg.run.epochs == 50            # file over preset
        assert cfg.corruption.rate == 0.6      # override over file
        assert cfg.validate() == []

    def test_unknown_preset(self):
        """Test that an unknown preset name is rejected."""
        with pytest.raises(ValueError, match="Unknown preset"):
            resolve_config("no_such_preset")
