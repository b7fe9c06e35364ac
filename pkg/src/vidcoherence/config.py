"""Run configuration: profiles, JSON loading, and strict validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


DEFAULT_PERTURBATION_SCHEDULES = {
    # severity 1..5 parameter per perturbation family
    "saturation": [0.7, 0.5, 0.35, 0.2, 0.1],     # color retention factor
    "contrast": [0.85, 0.7, 0.55, 0.4, 0.25],     # contrast factor
    "block": [2, 4, 6, 8, 10],                    # gray squares per frame
    "noise": [0.01, 0.02, 0.05, 0.1, 0.15],       # gaussian sigma
    "blur": [0.5, 1.0, 1.5, 2.5, 4.0],            # gaussian sigma (pixels)
    "pixel": [2, 4, 8, 16, 32],                   # down/upsample factor
    "compress": [0.02, 0.05, 0.1, 0.2, 0.4],      # DCT quantization step
}

PERTURBATION_KINDS = ("saturation", "contrast", "block", "noise", "blur",
                      "pixel", "compress")

FORGERY_KINDS = ("temporal-jitter", "per-frame-resample", "region-splice",
                 "blend-boundary")


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0

    # data
    clip_len: int = 20                 # frames per model input clip
    frame_size: int = 224
    video_len: int = 48                # frames per generated video
    smoothness_bound: float = 0.05     # mean-abs frame delta separating real/fake dynamics
    num_pretrain_videos: int = 300
    num_finetune_real: int = 100
    num_finetune_fake_per_kind: int = 50
    num_eval_real: int = 60
    num_eval_fake_per_kind: int = 30

    # backbone
    encoder_channels: tuple[int, int, int] = (64, 128, 256)
    d_feature: int = 256
    d_model: int = 768
    n_heads: int = 12
    n_blocks: int = 12
    d_mlp: int = 3072
    head_hidden: int = 256
    ln_eps: float = 1e-5
    pos_init_std: float = 0.02

    # self-supervised objectives
    mask_ratio: float = 0.5
    tau: float = 0.5
    sim_eps: float = 1e-8
    lambda_spm: float = 1.0
    lambda_tcm: float = 0.5
    positive_source: str = "same_video"     # or "any_real"
    negatives_scope: str = "batch"          # or "own"
    augment_positives: float = 0.0          # P(perturb the positive clip)
    augment_finetune: float = 0.0           # P(perturb a head-training clip)

    # optimization
    lr: float = 5e-4
    head_lr: float = 3e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    pretrain_steps: int = 300
    finetune_steps: int = 300
    finetune_clips_per_video: int = 3
    checkpoint_every: int = 100

    # evaluation
    eval_clips_per_video: int = 3
    decision_threshold: float = 0.5
    saliency_features: str = "encoder"      # or "decoder"
    perturbation_schedules: dict = field(
        default_factory=lambda: {k: list(v) for k, v in DEFAULT_PERTURBATION_SCHEDULES.items()})

    def validate(self) -> None:
        if not (0.0 < self.mask_ratio < 1.0):
            raise ConfigError("mask_ratio must be in (0, 1)")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.lambda_spm < 0 or self.lambda_tcm < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.clip_len < 2:
            raise ConfigError("clip_len must be at least 2")
        if self.video_len < self.clip_len:
            raise ConfigError("video_len must be >= clip_len")
        if not (0.0 <= self.augment_positives <= 1.0):
            raise ConfigError("augment_positives must be a probability")
        if not (0.0 <= self.augment_finetune <= 1.0):
            raise ConfigError("augment_finetune must be a probability")
        if self.positive_source not in ("same_video", "any_real"):
            raise ConfigError(f"unknown positive_source {self.positive_source!r}")
        if self.negatives_scope not in ("batch", "own"):
            raise ConfigError(f"unknown negatives_scope {self.negatives_scope!r}")
        if self.saliency_features not in ("encoder", "decoder"):
            raise ConfigError(f"unknown saliency_features {self.saliency_features!r}")
        for kind in PERTURBATION_KINDS:
            sched = self.perturbation_schedules.get(kind)
            if not isinstance(sched, list) or len(sched) != 5:
                raise ConfigError(f"perturbation schedule for {kind!r} must list 5 severities")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = profile_config(data.get("profile", "desk")).to_dict()
        base.update(data)
        base["encoder_channels"] = tuple(base["encoder_channels"])
        cfg = cls(**base)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path, overrides: dict | None = None) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path}: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path}: expected a JSON object")
        if overrides:
            data.update(overrides)
        return cls.from_dict(data)


_PROFILES = {
    # paper-shaped defaults
    "paper": dict(
        profile="paper", clip_len=20, frame_size=224, video_len=60,
        encoder_channels=(64, 128, 256), d_feature=256, d_model=768,
        n_heads=12, n_blocks=12, d_mlp=3072, head_hidden=256, batch_size=64,
    ),
    # CPU-tractable defaults used by the end-to-end protocols
    "desk": dict(
        profile="desk", clip_len=8, frame_size=32, video_len=24,
        encoder_channels=(16, 32, 64), d_feature=64, d_model=128,
        n_heads=4, n_blocks=3, d_mlp=256, head_hidden=64, batch_size=12,
        pretrain_steps=400, finetune_steps=400,
        num_pretrain_videos=300,
        tau=0.1, pos_init_std=0.3, augment_positives=0.5, augment_finetune=0.3,
    ),
    # minimal shapes for fast tests
    "tiny": dict(
        profile="tiny", clip_len=8, frame_size=32, video_len=16,
        encoder_channels=(8, 16, 32), d_feature=32, d_model=64,
        n_heads=4, n_blocks=2, d_mlp=128, head_hidden=32, batch_size=4,
        pretrain_steps=5, finetune_steps=20,
        num_pretrain_videos=6, num_finetune_real=6, num_finetune_fake_per_kind=2,
        num_eval_real=4, num_eval_fake_per_kind=2,
    ),
}


def profile_config(name: str) -> RunConfig:
    if name not in _PROFILES:
        raise ConfigError(f"unknown profile {name!r} (choose from {sorted(_PROFILES)})")
    cfg = RunConfig(**_PROFILES[name])
    cfg.validate()
    return cfg
