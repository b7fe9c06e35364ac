"""Stage-two forgery classifier: frozen backbone, trainable two-layer MLP head."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import Backbone
from .config import PERTURBATION_KINDS, RunConfig
from .optim import Adam, ParamStore, kaiming_uniform
from .videodata import (DatasetManifest, PerturbationSpec, SyntheticVideo,
                        VideoCache, apply_perturbation, sample_clip)

BACKBONE_NAMESPACES = ["encoder", "embedder", "transformer"]


@dataclass
class Prediction:
    video_id: str
    score: float                       # probability of class fake
    per_clip_scores: list[float]
    label_pred: str = ""

    def __post_init__(self):
        if not self.label_pred:
            self.label_pred = "fake" if self.score >= 0.5 else "real"

    def to_json(self) -> str:
        return json.dumps({"video_id": self.video_id, "score": self.score,
                           "per_clip_scores": self.per_clip_scores,
                           "label_pred": self.label_pred}, sort_keys=True)


def init_head_params(store: ParamStore, cfg: RunConfig,
                     rng: np.random.Generator, dtype=np.float32) -> None:
    store.add("head.ln.gamma", np.ones(cfg.d_model, dtype=dtype))
    store.add("head.ln.beta", np.zeros(cfg.d_model, dtype=dtype))
    store.add("head.fc1.weight",
              kaiming_uniform(rng, (cfg.d_model, cfg.head_hidden), cfg.d_model, dtype))
    store.add("head.fc1.bias", np.zeros(cfg.head_hidden, dtype=dtype))
    store.add("head.fc2.weight",
              kaiming_uniform(rng, (cfg.head_hidden, 2), cfg.head_hidden, dtype))
    store.add("head.fc2.bias", np.zeros(2, dtype=dtype))


def head_logits(z_star, store: ParamStore) -> Tensor:
    """Pooled representation(s) -> 2-class logits.

    Inputs are layer-normalized first: pooled features vary widely in scale
    across backbones, and the head optimizes poorly on raw activations.
    """
    x = z_star if isinstance(z_star, Tensor) else Tensor(z_star)
    x = ad.layer_norm(x, store["head.ln.gamma"], store["head.ln.beta"])
    h = ad.gelu(ad.linear(x, store["head.fc1.weight"], store["head.fc1.bias"]))
    return ad.linear(h, store["head.fc2.weight"], store["head.fc2.bias"])


def head_forward(z_star, store: ParamStore) -> Tensor:
    """Pooled representation(s) -> 2-class probabilities [p_real, p_fake]."""
    return ad.softmax(head_logits(z_star, store), axis=-1)


def bce_loss(probabilities: Tensor, labels: np.ndarray) -> Tensor:
    """-ln p_label averaged over the batch; probabilities clamped at 1e-12.

    labels: int array, 0 = real, 1 = fake. Accepts (2,) or (B, 2) probabilities.
    """
    p = probabilities
    if p.ndim == 1:
        p = ad.reshape(p, (1, 2))
        labels = np.atleast_1d(labels)
    b = p.shape[0]
    picked = ad.getitem(p, (np.arange(b), np.asarray(labels, dtype=int)))
    clamped = ad.maximum_scalar(picked, 1e-12)
    return ad.mul(ad.tmean(ad.log(clamped)), -1.0)


@dataclass
class DetectorModel:
    backbone: Backbone
    cfg: RunConfig

    @property
    def store(self) -> ParamStore:
        return self.backbone.store

    @classmethod
    def init(cls, cfg: RunConfig, seed: int, pretrained_checkpoint: str | Path | None = None
             ) -> "DetectorModel":
        backbone = Backbone.init(cfg, seed)
        init_head_params(backbone.store, cfg, np.random.default_rng(seed + 7))
        if pretrained_checkpoint is not None:
            from .checkpoint import load_checkpoint
            load_checkpoint(pretrained_checkpoint, backbone.store,
                            namespaces=BACKBONE_NAMESPACES)
        for ns in BACKBONE_NAMESPACES:
            backbone.store.set_trainable(ns, False)
        return cls(backbone=backbone, cfg=cfg)

    def represent_clips(self, clips: np.ndarray) -> np.ndarray:
        """Pooled representations with no gradient tracking (backbone frozen)."""
        return self.backbone.represent(clips).data

    def score_clips(self, clips: np.ndarray) -> np.ndarray:
        z = self.represent_clips(clips)
        return head_forward(z, self.store).data[:, 1]


def finetune_features(model: DetectorModel, entries, cache: VideoCache,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Precompute pooled clip features for head training (backbone is frozen)."""
    cfg = model.cfg
    feats, labels = [], []
    batch_clips, batch_labels = [], []

    def flush():
        if batch_clips:
            feats.append(model.represent_clips(np.stack(batch_clips)))
            labels.extend(batch_labels)
            batch_clips.clear()
            batch_labels.clear()

    for e in entries:
        video = cache.get(e.path)
        for _ in range(cfg.finetune_clips_per_video):
            clip = sample_clip(video, cfg.clip_len, rng, cfg.frame_size)
            if cfg.augment_finetune and rng.random() < cfg.augment_finetune:
                # train the head on corrupted clips too (labels unchanged) so
                # its decision boundary does not assume pristine inputs
                kind = PERTURBATION_KINDS[int(rng.integers(len(PERTURBATION_KINDS)))]
                spec = PerturbationSpec(kind, int(rng.integers(1, 6)),
                                        seed=int(rng.integers(2**31)))
                clip = apply_perturbation(clip, spec, cfg.perturbation_schedules)
            batch_clips.append(clip.frames)
            batch_labels.append(0 if e.label == "real" else 1)
            if len(batch_clips) >= 32:
                flush()
    flush()
    return np.concatenate(feats), np.asarray(labels, dtype=int)


def finetune(model: DetectorModel, manifest_entries, seed: int | None = None,
             cache: VideoCache | None = None, steps: int | None = None,
             log_path: str | Path | None = None) -> DetectorModel:
    """Train only the head on labeled entries; backbone stays bit-identical."""
    cfg = model.cfg
    seed = cfg.seed if seed is None else seed
    steps = cfg.finetune_steps if steps is None else steps
    rng = np.random.default_rng(seed)
    cache = cache or VideoCache()
    store = model.store

    feats, labels = finetune_features(model, manifest_entries, cache, rng)
    n_samples = feats.shape[0]
    batch = min(64, n_samples)
    opt = Adam(store, lr=cfg.head_lr, weight_decay=cfg.weight_decay)
    log_file = open(log_path, "w") if log_path else None
    try:
        for step in range(1, steps + 1):
            pick = rng.choice(n_samples, size=batch, replace=False)
            probs = head_forward(feats[pick], store)
            loss = bce_loss(probs, labels[pick])
            opt.zero_grad()
            loss.backward()
            opt.step()
            if log_file:
                log_file.write(json.dumps(
                    {"step": step, "loss_bce": loss.item(), "lr": cfg.head_lr},
                    sort_keys=True) + "\n")
    finally:
        if log_file:
            log_file.close()
    return model


def predict_video(video: SyntheticVideo, model: DetectorModel,
                  rng: np.random.Generator, video_id: str = "",
                  num_clips: int | None = None) -> Prediction:
    """Score num_clips random clips and average (robust to video length)."""
    cfg = model.cfg
    k = cfg.eval_clips_per_video if num_clips is None else num_clips
    clips = [sample_clip(video, cfg.clip_len, rng, cfg.frame_size).frames
             for _ in range(k)]
    scores = model.score_clips(np.stack(clips))
    mean = float(np.mean(scores))
    return Prediction(video_id=video_id, score=mean,
                      per_clip_scores=[float(s) for s in scores],
                      label_pred="fake" if mean >= cfg.decision_threshold else "real")
