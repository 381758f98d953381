"""Config schema, serialization, overrides, and hashing tests."""

import json

import pytest

from vqalab.config import (
    Config,
    ConfigError,
    apply_overrides,
    config_hash,
    from_dict,
    load_config,
    save_config,
    to_dict,
)


class TestRoundTrip:
    def test_default_round_trips(self, tmp_path):
        cfg = Config()
        path = tmp_path / "config.json"
        save_config(cfg, path)
        loaded = load_config(path)
        assert to_dict(loaded) == to_dict(cfg)

    def test_round_trip_preserves_overrides(self, tmp_path):
        cfg = apply_overrides(Config(), ["updn.epochs=3", "detector.sigma_f=0.25"])
        path = tmp_path / "config.json"
        save_config(cfg, path)
        loaded = load_config(path)
        assert loaded.updn.epochs == 3
        assert loaded.detector.sigma_f == 0.25

    def test_load_from_manifest_dict(self, tmp_path):
        cfg = Config()
        manifest = {"config": to_dict(cfg), "seed": 0, "command": "gen-data"}
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(manifest))
        loaded = load_config(path)
        assert to_dict(loaded) == to_dict(cfg)


class TestValidation:
    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            from_dict({"nonsense": {}})

    def test_unknown_key_names_path(self):
        with pytest.raises(ConfigError) as exc:
            from_dict({"updn": {"bogus_key": 1}})
        assert "updn.bogus_key" in str(exc.value)

    def test_type_mismatch(self):
        with pytest.raises(ConfigError):
            from_dict({"updn": {"epochs": "twelve"}})

    def test_bool_not_accepted_as_number(self):
        with pytest.raises(ConfigError):
            from_dict({"detector": {"sigma_f": True}})

    def test_nested_world_section(self):
        cfg = from_dict({"dataset": {"world": {"n_objects_min": 4}}})
        assert cfg.dataset.world.n_objects_min == 4
        with pytest.raises(ConfigError):
            from_dict({"dataset": {"world": {"bogus": 4}}})


class TestOverrides:
    def test_numeric_and_list_values(self):
        cfg = apply_overrides(Config(), ["harness.sweep_ks=[1,2,3]", "grounding.theta_s=0.7"])
        assert cfg.harness.sweep_ks == (1, 2, 3)
        assert cfg.grounding.theta_s == 0.7

    def test_string_value(self):
        cfg = apply_overrides(Config(), ["harness.eval_split=test"])
        assert cfg.harness.eval_split == "test"

    def test_bad_format_rejected(self):
        with pytest.raises(ConfigError):
            apply_overrides(Config(), ["updn.epochs"])

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            apply_overrides(Config(), ["updn.nonexistent=1"])


class TestHash:
    def test_hash_stable(self):
        assert config_hash(Config()) == config_hash(Config())

    def test_hash_sensitive_to_values(self):
        assert config_hash(Config()) != config_hash(apply_overrides(Config(), ["updn.epochs=1"]))

    def test_paper_hyperparameters_present(self):
        d = to_dict(Config())
        assert d["harness"]["theta_c"] == 0.2
        assert d["grounding"]["theta_nms1"] == 0.7
        assert d["grounding"]["theta_nms2"] == 0.4
        assert d["grounding"]["theta_s"] == 0.5
        assert d["grounding"]["theta_iou"] == 0.5
        assert d["grounding"]["n_intra"] == 3
        assert d["grounding"]["n_cross"] == 3
        assert d["grounding"]["w_neg"] == 1.0
