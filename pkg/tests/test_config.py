"""Tests for experiment configuration loading."""

from pathlib import Path

import pytest
import yaml

from fairpoi.config import (
    BPRConfig,
    ExperimentConfig,
    ModelEntry,
    PFConfig,
    config_digest,
    config_from_mapping,
    dump_config,
    grid_points,
    load_config,
    save_config,
)
from fairpoi.errors import ConfigError


def write_yaml(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data))
    return path


class TestDefaults:
    def test_no_file_gives_documented_defaults(self):
        config = load_config()
        assert config == ExperimentConfig()
        assert config.metrics.k == 10
        assert config.metrics.beta == 0.5
        assert config.metrics.epsilon == 1e-12
        assert config.split.train_frac == 0.7
        assert config.groups.user_thresholds == [19, 47, 94]
        assert [m.kind for m in config.models] == ["mostpop", "bpr", "wmf", "pf"]

    def test_minimal_file_resolves_dataset_path(self, tmp_path):
        path = write_yaml(tmp_path / "exp.yaml", {"dataset": {"checkins": "data/checkins.tsv"}})
        config = load_config(path)
        assert config.dataset.checkins == str((tmp_path / "data" / "checkins.tsv").resolve())
        assert config.dataset.min_user_checkins == 15
        assert config.dataset.min_poi_visits == 10
        assert config.metrics.user_targets["Pf1"] == [0.7, 0.1, 0.1, 0.1]
        assert config.metrics.item_targets["Pf0"] == pytest.approx([1 / 3] * 3)

    def test_empty_file_is_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_config(path) == ExperimentConfig()


class TestProblems:
    def test_unknown_key_suggests_close_match(self):
        with pytest.raises(ConfigError) as excinfo:
            config_from_mapping({"bpr": {"learnrate": 0.1}})
        message = str(excinfo.value)
        assert "bpr.learnrate" in message
        assert "bpr.learning_rate" in message

    def test_all_problems_reported_together(self):
        with pytest.raises(ConfigError) as excinfo:
            config_from_mapping(
                {"bpr": {"learnrate": 0.1}, "split": {"train_frac": "most"}, "modles": ["bpr"]}
            )
        problems = excinfo.value.problems
        assert len(problems) == 3
        assert any("modles" in p and "models" in p for p in problems)

    def test_semantic_checks(self):
        with pytest.raises(ConfigError) as excinfo:
            config_from_mapping(
                {
                    "split": {"train_frac": 0.8, "valid_frac": 0.3},
                    "groups": {"user_thresholds": [10, 5, 20]},
                    "metrics": {"user_targets": {"Pf0": [0.5, 0.5]}},
                }
            )
        assert len(excinfo.value.problems) == 3

    def test_unknown_model_kind(self):
        with pytest.raises(ConfigError, match="geosocca"):
            config_from_mapping({"models": ["geosocca"]})

    def test_external_model_needs_rankings(self):
        with pytest.raises(ConfigError, match="rankings"):
            config_from_mapping({"models": [{"name": "neural", "kind": "external"}]})

    def test_duplicate_model_names(self):
        with pytest.raises(ConfigError, match="more than once"):
            config_from_mapping({"models": ["bpr", {"name": "bpr", "kind": "wmf"}]})

    def test_bool_is_not_an_int(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"metrics": {"k": True}})

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("dataset: [unclosed")
        with pytest.raises(ConfigError, match="not valid YAML"):
            load_config(path)

    def test_exit_code(self):
        assert ConfigError("x").exit_code == 2


class TestLayers:
    def test_overrides_win_over_file(self, tmp_path):
        path = write_yaml(tmp_path / "exp.yaml", {"seed": 1, "sampling": {"fraction": 0.9}})
        config = load_config(path, {"seed": 5, "sampling.fraction": 0.25, "output.dir": "elsewhere"})
        assert config.seed == 5
        assert config.sampling.fraction == 0.25
        assert config.output.dir == "elsewhere"

    def test_models_as_mappings(self, tmp_path):
        path = write_yaml(
            tmp_path / "exp.yaml",
            {"models": ["mostpop", {"name": "neural", "kind": "external", "rankings": "ranks.csv"}]},
        )
        config = load_config(path)
        assert config.models[0] == ModelEntry(name="mostpop", kind="mostpop")
        assert config.models[1].rankings == str((tmp_path / "ranks.csv").resolve())

    def test_ints_promoted_to_floats(self):
        config = config_from_mapping({"bpr": {"learning_rate": 1}})
        assert isinstance(config.bpr.learning_rate, float)


class TestRoundTrip:
    def test_dump_and_reload_is_identity(self, tmp_path):
        original = config_from_mapping(
            {
                "dataset": {"checkins": "/data/c.tsv", "iterate": True},
                "models": ["mostpop", {"name": "ext", "kind": "external", "rankings": "/r.csv"}],
                "bpr": {"learning_rate": [0.05, 0.01]},
                "metrics": {"extra_betas": [2, -1]},
                "seed": 11,
            }
        )
        reloaded = config_from_mapping(dump_config(original))
        assert reloaded == original
        assert dump_config(reloaded) == dump_config(original)

    def test_save_and_load(self, tmp_path):
        original = config_from_mapping({"wmf": {"alpha": [10.0, 40.0]}, "threads": 2})
        save_config(original, tmp_path / "saved.yaml")
        assert load_config(tmp_path / "saved.yaml") == original

    def test_digest_tracks_content(self):
        a = config_from_mapping({"seed": 1})
        b = config_from_mapping({"seed": 1})
        c = config_from_mapping({"seed": 2})
        assert config_digest(a) == config_digest(b)
        assert config_digest(a) != config_digest(c)


class TestGrid:
    def test_scalars_give_one_point(self):
        points = grid_points(PFConfig())
        assert len(points) == 1
        assert points[0]["factors"] == 32

    def test_lists_expand_to_cartesian_product(self):
        points = grid_points(BPRConfig(factors=[8, 16], learning_rate=[0.1, 0.01, 0.001]))
        assert len(points) == 6
        assert points[0] == {
            "factors": 8,
            "learning_rate": 0.1,
            "regularization": 0.01,
            "steps_per_interaction": 30,
            "use_bias": True,
        }
        assert points[-1]["factors"] == 16 and points[-1]["learning_rate"] == 0.001
