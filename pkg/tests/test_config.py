"""Configuration profiles, file loading, and validation."""

import json

import pytest

from vidcoherence.config import (ConfigError, RunConfig, profile_config)


def test_profiles_exist_and_validate():
    for name in ("paper", "desk", "tiny"):
        cfg = profile_config(name)
        cfg.validate()
        assert cfg.profile == name
    with pytest.raises(ConfigError):
        profile_config("workstation")


def test_paper_profile_headline_hyperparameters():
    cfg = profile_config("paper")
    assert cfg.clip_len == 20
    assert cfg.frame_size == 224
    assert cfg.d_model == 768
    assert cfg.n_blocks == 12
    assert cfg.n_heads == 12
    assert cfg.encoder_channels == (64, 128, 256)
    assert cfg.mask_ratio == 0.5
    assert cfg.tau == 0.5
    assert cfg.lambda_spm == 1.0
    assert cfg.lambda_tcm == 0.5
    assert cfg.lr == 5e-4
    assert cfg.weight_decay == 1e-4
    assert cfg.batch_size == 64


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        RunConfig.from_dict({"profile": "tiny", "dropout": 0.5})


def test_from_dict_merges_onto_profile():
    cfg = RunConfig.from_dict({"profile": "tiny", "tau": 0.25})
    assert cfg.tau == 0.25
    assert cfg.d_model == profile_config("tiny").d_model


def test_validation_catches_bad_values():
    for bad in ({"mask_ratio": 0.0}, {"mask_ratio": 1.0}, {"tau": 0.0},
                {"lambda_spm": -1.0}, {"d_model": 65},
                {"clip_len": 1}, {"video_len": 4},
                {"positive_source": "imagenet"}, {"negatives_scope": "global"},
                {"saliency_features": "pixels"}):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"profile": "tiny", **bad})


def test_perturbation_schedules_must_list_five_severities():
    with pytest.raises(ConfigError, match="5 severities"):
        RunConfig.from_dict({"profile": "tiny",
                             "perturbation_schedules": {"blur": [1.0]}})


def test_from_file_roundtrip_and_errors(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"profile": "tiny", "seed": 9}))
    cfg = RunConfig.from_file(p)
    assert cfg.seed == 9
    back = RunConfig.from_dict(cfg.to_dict())
    assert back == cfg

    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        RunConfig.from_file(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        RunConfig.from_file(p)
