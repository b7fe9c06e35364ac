"""Consistency pretraining on real videos only.

Two objectives: masked spatial-feature prediction (reconstruct zeroed per-frame
features from the surrounding sequence through a 1x3 convolutional decoder) and
an order-shuffle contrastive loss (naturally ordered clips attract, frame-
shuffled clips repel). Combined as lambda_spm * L_pred + lambda_tcm * L_order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import Backbone
from .config import RunConfig

# perturbation families used for corruption-invariance pairs: the structural
# corruptions that per-clip input standardization cannot cancel
AUGMENT_KINDS = ("block", "noise", "blur", "pixel")
from .optim import Adam, ParamStore, kaiming_uniform
from .videodata import (DatasetManifest, PerturbationSpec, VideoCache,
                        apply_perturbation, sample_clip, shuffle_frames)


class PretrainError(ValueError):
    pass


# -- masking --------------------------------------------------------------


@dataclass
class MaskPlan:
    masked_indices: tuple[int, ...]   # 1-based frame indices
    alpha: float


def masked_index_set(masked_a: np.ndarray, masked_b: np.ndarray) -> tuple[int, ...]:
    """Positions (1-based) unmasked in A but masked in B.

    Arguments are boolean arrays where True marks a masked element.
    """
    a = np.asarray(masked_a, dtype=bool)
    b = np.asarray(masked_b, dtype=bool)
    if a.shape != b.shape:
        raise PretrainError(f"sequence lengths differ: {a.shape} vs {b.shape}")
    return tuple(int(i) + 1 for i in np.nonzero(~a & b)[0])


def mask_features(features: np.ndarray, alpha: float,
                  rng: np.random.Generator) -> tuple[np.ndarray, MaskPlan]:
    """Zero out round(n * alpha) random frame features; returns plan (1-based)."""
    n = features.shape[0]
    m = int(round(n * alpha))
    if not (0.0 < alpha < 1.0) or m < 1 or m >= n:
        raise PretrainError(f"degenerate mask ratio alpha={alpha} for n={n}")
    idx = rng.permutation(n)[:m]
    masked = features.copy()
    masked[idx] = 0.0
    plan = MaskPlan(masked_indices=tuple(sorted(int(i) + 1 for i in idx)), alpha=alpha)
    return masked, plan


def mask_keep_matrix(n: int, plan: MaskPlan, dtype=np.float32) -> np.ndarray:
    """(n, 1) multiplier that zeroes masked rows; keeps autodiff flow intact."""
    keep = np.ones((n, 1), dtype=dtype)
    for i in plan.masked_indices:
        keep[i - 1, 0] = 0.0
    return keep


# -- decoder --------------------------------------------------------------


def init_decoder_params(store: ParamStore, cfg: RunConfig,
                        rng: np.random.Generator, dtype=np.float32) -> None:
    # one conv layer, kernel 3 along the token axis, d_model -> d_feature
    fan_in = cfg.d_model * 3
    store.add("decoder.conv.weight",
              kaiming_uniform(rng, (cfg.d_feature, cfg.d_model, 3, 1), fan_in, dtype))
    store.add("decoder.conv.bias", np.zeros(cfg.d_feature, dtype=dtype))


def decode_features(tokens: Tensor, store: ParamStore) -> Tensor:
    """(B, n, d_model) tokens -> (B, n, d_feature) predicted frame features."""
    b, n, d = tokens.shape
    x = ad.reshape(ad.transpose(tokens, (0, 2, 1)), (b, d, n, 1))
    out = ad.conv2d(x, store["decoder.conv.weight"], store["decoder.conv.bias"],
                    stride=1, padding=(1, 0))
    return ad.transpose(ad.reshape(out, (b, out.shape[1], n)), (0, 2, 1))


# -- losses ---------------------------------------------------------------


def spm_loss(predicted: Tensor, target: Tensor, plans: list[MaskPlan]) -> Tensor:
    """Mean over masked frames of the per-feature MSE; unmasked rows ignored.

    predicted/target: (B, n, d_feature).
    """
    b, n, _ = predicted.shape
    if len(plans) != b:
        raise PretrainError("one mask plan required per batch element")
    total_masked = sum(len(p.masked_indices) for p in plans)
    if total_masked == 0:
        raise PretrainError("empty mask set")
    sel = np.zeros((b, n, 1), dtype=predicted.dtype)
    for bi, plan in enumerate(plans):
        for i in plan.masked_indices:
            sel[bi, i - 1, 0] = 1.0
    diff = ad.add(predicted, ad.mul(target, -1.0))
    sq = ad.mul(diff, diff)
    per_frame = ad.tmean(ad.mul(sq, sel), axis=-1)       # (B, n); zero off-mask
    return ad.mul(ad.tsum(per_frame), 1.0 / total_masked)


def cosine_sim(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """z_i . z_j / max(|z_i| * |z_j|, eps) for 1-D vectors."""
    num = ad.tsum(ad.mul(a, b))
    den = ad.mul(ad.sqrt(ad.tsum(ad.mul(a, a))), ad.sqrt(ad.tsum(ad.mul(b, b))))
    return ad.mul(num, ad.power(ad.maximum_scalar(den, eps), -1.0))


def cosine_sim_matrix(za: Tensor, zb: Tensor, eps: float = 1e-8) -> Tensor:
    """Pairwise cosine similarities between rows: (A, d) x (B, d) -> (A, B)."""
    dots = ad.matmul(za, ad.transpose(zb))
    na = ad.sqrt(ad.tsum(ad.mul(za, za), axis=-1, keepdims=True))
    nb = ad.sqrt(ad.tsum(ad.mul(zb, zb), axis=-1, keepdims=True))
    den = ad.maximum_scalar(ad.matmul(na, ad.transpose(nb)), eps)
    return ad.mul(dots, ad.power(den, -1.0))


def tcm_loss(sim_pos: Tensor, sim_neg: Tensor, tau: float) -> Tensor:
    """Contrastive loss averaged over anchors.

    sim_pos: (B,) similarity to the positive; sim_neg: (B, m) to negatives.
    """
    if sim_neg.ndim != 2 or sim_neg.shape[-1] < 1:
        raise PretrainError("at least one negative similarity required per anchor")
    e_pos = ad.exp(ad.mul(sim_pos, 1.0 / tau))
    e_neg = ad.tsum(ad.exp(ad.mul(sim_neg, 1.0 / tau)), axis=-1)
    losses = ad.mul(ad.log(ad.mul(e_pos, ad.power(ad.add(e_pos, e_neg), -1.0))), -1.0)
    return ad.tmean(losses)


def total_ssl_loss(loss_spm: Tensor | None, loss_tcm: Tensor | None,
                   lambda_spm: float, lambda_tcm: float) -> Tensor:
    terms = []
    if loss_spm is not None and lambda_spm:
        terms.append(ad.mul(loss_spm, lambda_spm))
    if loss_tcm is not None and lambda_tcm:
        terms.append(ad.mul(loss_tcm, lambda_tcm))
    if not terms:
        return Tensor(np.zeros((), dtype=np.float32))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


# -- batch assembly -------------------------------------------------------


@dataclass
class ContrastiveBatch:
    anchor_clips: np.ndarray     # (B, n, 3, H, W)
    positive_clips: np.ndarray   # (B, n, 3, H, W)
    shuffle_perms: list[np.ndarray]


def build_contrastive_batch(videos: list, cfg: RunConfig,
                            rng: np.random.Generator) -> ContrastiveBatch:
    """Anchor + positive clip per video; shuffles are applied at feature level.

    Positives come from the same video at a different offset; if the video is
    too short to offer one (or positive_source == "any_real"), another batch
    video supplies the positive.
    """
    if len(videos) < 2:
        raise PretrainError("contrastive batch needs at least 2 clips")
    n = cfg.clip_len
    anchors, positives = [], []
    for i, video in enumerate(videos):
        a = sample_clip(video, n, rng, cfg.frame_size)
        use_other = cfg.positive_source == "any_real" or video.length <= n
        if use_other:
            j = (i + 1 + int(rng.integers(0, len(videos) - 1))) % len(videos)
            if j == i:
                j = (i + 1) % len(videos)
            p = sample_clip(videos[j], n, rng, cfg.frame_size)
        else:
            while True:
                p = sample_clip(video, n, rng, cfg.frame_size)
                if p.offset != a.offset:
                    break
        if cfg.augment_positives and rng.random() < cfg.augment_positives:
            # corruption-invariance pair: the positive becomes a corrupted
            # copy of the anchor itself, so the pair teaches that appearance
            # corruption (occlusion, noise, blur, resampling) is not evidence
            # of incoherence.  Intensity changes are already cancelled by the
            # input standardization and need no augmentation.
            kind = AUGMENT_KINDS[int(rng.integers(len(AUGMENT_KINDS)))]
            spec = PerturbationSpec(kind, int(rng.integers(1, 4)),
                                    seed=int(rng.integers(2**31)))
            p = apply_perturbation(a, spec, cfg.perturbation_schedules)
        anchors.append(a.frames)
        positives.append(p.frames)
    perms = []
    for _ in videos:
        _, perm = shuffle_frames(np.arange(n)[:, None], rng)
        perms.append(perm)
    return ContrastiveBatch(anchor_clips=np.stack(anchors),
                            positive_clips=np.stack(positives),
                            shuffle_perms=perms)


# -- training step and loop -----------------------------------------------


def ssl_step_losses(backbone: Backbone, store: ParamStore, batch: ContrastiveBatch,
                    cfg: RunConfig, rng: np.random.Generator
                    ) -> tuple[Tensor, Tensor | None, Tensor | None]:
    """Forward the three views (masked, clean, shuffled) and form the losses."""
    b, n = batch.anchor_clips.shape[:2]
    feats = backbone.frame_features_batch(batch.anchor_clips)   # (B, n, d_f)

    loss_s = None
    if cfg.lambda_spm:
        plans = []
        keeps = np.ones((b, n, 1), dtype=feats.dtype)
        for bi in range(b):
            _, plan = mask_features(np.zeros((n, 1), dtype=np.float32),
                                    cfg.mask_ratio, rng)
            plans.append(plan)
            keeps[bi] = mask_keep_matrix(n, plan, dtype=feats.dtype)
        masked_feats = ad.mul(feats, keeps)
        z_masked = backbone.tokens_from_features(masked_feats)
        predicted = decode_features(z_masked, store)
        # targets carry no gradient: letting the encoder chase its own output
        # collapses all frame features to a constant
        loss_s = spm_loss(predicted, feats.detach(), plans)

    loss_t = None
    if cfg.lambda_tcm:
        z_anchor = backbone.pool_representation(backbone.tokens_from_features(feats))
        z_pos = backbone.represent(batch.positive_clips)
        # shuffled views are re-encoded from pixels so that frame differences
        # (not just positions) reflect the broken ordering
        shuffled_clips = np.stack([batch.anchor_clips[bi][batch.shuffle_perms[bi]]
                                   for bi in range(b)])
        z_shuf = backbone.represent(shuffled_clips)
        sims_pos_mat = cosine_sim_matrix(z_anchor, z_pos, cfg.sim_eps)
        sim_pos = ad.getitem(sims_pos_mat, (np.arange(b), np.arange(b)))
        sim_neg = cosine_sim_matrix(z_anchor, z_shuf, cfg.sim_eps)
        if cfg.negatives_scope == "own":
            sim_neg = ad.reshape(
                ad.getitem(sim_neg, (np.arange(b), np.arange(b))), (b, 1))
        loss_t = tcm_loss(sim_pos, sim_neg, cfg.tau)

    total = total_ssl_loss(loss_s, loss_t, cfg.lambda_spm, cfg.lambda_tcm)
    return total, loss_s, loss_t


def pretrain(manifest: DatasetManifest, cfg: RunConfig, seed: int | None = None,
             out_dir: str | Path | None = None, cache: VideoCache | None = None,
             log_path: str | Path | None = None,
             steps: int | None = None) -> Backbone:
    """Run the self-supervised stage over the manifest's pretrain split."""
    entries = manifest.split("pretrain")
    bad = [e for e in entries if e.label != "real"]
    if bad:
        raise PretrainError(
            f"pretrain split contains fake video: {bad[0].path}")
    if len(entries) < 2:
        raise PretrainError("pretrain split needs at least 2 videos")
    seed = cfg.seed if seed is None else seed
    steps = cfg.pretrain_steps if steps is None else steps
    rng = np.random.default_rng(seed)
    cache = cache or VideoCache()

    backbone = Backbone.init(cfg, seed)
    init_decoder_params(backbone.store, cfg, np.random.default_rng(seed + 1))
    store = backbone.store
    opt = Adam(store, lr=cfg.lr, weight_decay=cfg.weight_decay)

    log_file = open(log_path, "w") if log_path else None
    try:
        for step in range(1, steps + 1):
            pick = rng.choice(len(entries), size=min(cfg.batch_size, len(entries)),
                              replace=False)
            videos = [cache.get(entries[i].path) for i in pick]
            batch = build_contrastive_batch(videos, cfg, rng)
            opt.zero_grad()
            total, loss_s, loss_t = ssl_step_losses(backbone, store, batch, cfg, rng)
            total.backward()
            opt.step()
            if log_file:
                rec = {"step": step,
                       "loss_total": total.item(),
                       "loss_spm": None if loss_s is None else loss_s.item(),
                       "loss_tcm": None if loss_t is None else loss_t.item(),
                       "lr": cfg.lr}
                log_file.write(json.dumps(rec, sort_keys=True) + "\n")
            if out_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                from .checkpoint import save_checkpoint
                save_checkpoint(store, Path(out_dir) / f"step_{step:06d}", cfg, step)
    finally:
        if log_file:
            log_file.close()
    return backbone
