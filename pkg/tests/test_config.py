import dataclasses

import pytest

from conceptminer.config import PipelineConfig, load_config


def test_defaults_match_documented_thresholds():
    config = PipelineConfig()
    assert config.min_clicks == 5
    assert config.window_days == 30
    assert (config.alpha, config.beta, config.delta) == (0.6, 0.8, 2)
    assert config.delta_w == 0.5
    assert config.delta_u == 0.58
    assert config.delta_t == 0.3
    assert config.budget == 10
    assert config.top_m == 3


def test_config_is_frozen():
    config = PipelineConfig()
    with pytest.raises(dataclasses.FrozenInstanceError):
        config.alpha = 0.9


def test_load_config_none_path_gives_defaults():
    assert load_config(None) == PipelineConfig()


def test_load_config_overlays_partial_file(tmp_file):
    path = tmp_file("conf.yaml", "alpha: 0.5\nmax_iters: 2\n")
    config = load_config(path)
    assert config.alpha == 0.5
    assert config.max_iters == 2
    assert config.beta == 0.8  # untouched keys keep defaults


def test_load_config_empty_file_gives_defaults(tmp_file):
    path = tmp_file("empty.yaml", "")
    assert load_config(path) == PipelineConfig()


def test_load_config_rejects_unknown_keys(tmp_file):
    path = tmp_file("typo.yaml", "alhpa: 0.5\n")
    with pytest.raises(ValueError, match="alhpa"):
        load_config(path)


def test_load_config_rejects_non_mapping(tmp_file):
    path = tmp_file("list.yaml", "- a\n- b\n")
    with pytest.raises(ValueError, match="mapping"):
        load_config(path)
