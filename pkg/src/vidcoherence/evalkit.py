"""Metrics, evaluation protocols, saliency localization, embedding export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata, spearmanr

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import Backbone
from .config import FORGERY_KINDS, PERTURBATION_KINDS, RunConfig
from .detector import DetectorModel, finetune, head_logits, predict_video
from .pretrain import pretrain
from .videodata import (DatasetManifest, FrameClip, PerturbationSpec, VideoCache,
                        apply_perturbation, sample_clip)


class EvalError(ValueError):
    pass


# -- metrics ----------------------------------------------------------------


def auc(scores, labels) -> float:
    """Probability a random fake outranks a random real; ties count half.

    labels: 1/True/"fake" for positives.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray([1 if (l in (1, True, "fake")) else 0 for l in labels])
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise EvalError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)  # midranks handle ties
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc_bruteforce(scores, labels) -> float:
    """Pairwise-count AUC used as the cross-check oracle."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray([1 if (l in (1, True, "fake")) else 0 for l in labels])
    pos = s[y == 1]
    neg = s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise EvalError("AUC needs at least one positive and one negative")
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (pos.size * neg.size))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction correct after thresholding; score >= threshold predicts fake."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise EvalError("accuracy of an empty prediction set is undefined")
    y = np.asarray([1 if (l in (1, True, "fake")) else 0 for l in labels])
    pred = (s >= threshold).astype(int)
    return float((pred == y).mean())


# -- reports ----------------------------------------------------------------


@dataclass
class EvalReport:
    protocol: str
    seed: int
    config: dict
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "seed": self.seed,
                "config": self.config, "rows": self.rows, "summary": self.summary}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        return cls(protocol=d["protocol"], seed=d["seed"], config=d["config"],
                   rows=d["rows"], summary=d["summary"])


# -- scoring helpers ---------------------------------------------------------


def score_entries(model: DetectorModel, entries, cache: VideoCache,
                  seed: int, perturbation: PerturbationSpec | None = None
                  ) -> tuple[list[float], list[str]]:
    """Video-level scores for manifest entries, optionally under a perturbation."""
    cfg = model.cfg
    scores, labels = [], []
    for i, e in enumerate(entries):
        rng = np.random.default_rng((seed, i))
        video = cache.get(e.path)
        if perturbation is None:
            pred = predict_video(video, model, rng, video_id=e.path)
        else:
            clips = []
            for _ in range(cfg.eval_clips_per_video):
                clip = sample_clip(video, cfg.clip_len, rng, cfg.frame_size)
                spec = PerturbationSpec(perturbation.kind, perturbation.severity,
                                        seed=perturbation.seed + i)
                clips.append(apply_perturbation(clip, spec,
                                                cfg.perturbation_schedules).frames)
            s = model.score_clips(np.stack(clips))
            scores.append(float(np.mean(s)))
            labels.append(e.label)
            continue
        scores.append(pred.score)
        labels.append(e.label)
    return scores, labels


def _finetune_model(cfg: RunConfig, entries, seed: int, cache: VideoCache,
                    checkpoint: str | Path | None) -> DetectorModel:
    model = DetectorModel.init(cfg, seed, pretrained_checkpoint=checkpoint)
    return finetune(model, entries, seed=seed, cache=cache)


# -- protocols ---------------------------------------------------------------


def run_cross_forgery(manifest: DatasetManifest, cfg: RunConfig,
                      checkpoint: str | Path | None, seed: int | None = None,
                      cache: VideoCache | None = None,
                      include_scratch: bool = False,
                      kinds: tuple[str, ...] = FORGERY_KINDS) -> EvalReport:
    """Leave-one-forgery-out: finetune on the other kinds, test on the held-out."""
    seed = cfg.seed if seed is None else seed
    cache = cache or VideoCache()
    train = manifest.split("train")
    test = manifest.split("test")
    present = sorted({e.forgery_kind for e in train if e.label == "fake"})
    if len(present) < 2:
        raise EvalError("cross-forgery protocol needs at least 2 forgery kinds")
    report = EvalReport(protocol="cross-forgery", seed=seed, config=cfg.to_dict())
    variants = [("pretrained", checkpoint)]
    if include_scratch:
        variants.append(("scratch", None))
    for held_out in kinds:
        if held_out not in present:
            continue
        train_sel = [e for e in train
                     if e.label == "real" or e.forgery_kind != held_out]
        test_sel = [e for e in test
                    if e.label == "real" or e.forgery_kind == held_out]
        for variant, ckpt in variants:
            model = _finetune_model(cfg, train_sel, seed, cache, ckpt)
            scores, labels = score_entries(model, test_sel, cache, seed)
            report.rows.append({
                "held_out": held_out, "variant": variant,
                "auc": auc(scores, labels),
                "acc": accuracy(scores, labels, cfg.decision_threshold),
                "n_test": len(test_sel),
            })
    for variant, _ in variants:
        vals = [r["auc"] for r in report.rows if r["variant"] == variant]
        report.summary[f"avg_auc_{variant}"] = float(np.mean(vals))
    return report


def run_robustness(manifest: DatasetManifest, model: DetectorModel,
                   seed: int | None = None, cache: VideoCache | None = None,
                   entries=None) -> EvalReport:
    """Clean AUC plus per-perturbation averages over five severities."""
    cfg = model.cfg
    seed = cfg.seed if seed is None else seed
    cache = cache or VideoCache()
    if entries is None:
        entries = manifest.split("test")
    report = EvalReport(protocol="robustness", seed=seed, config=cfg.to_dict())
    clean_scores, labels = score_entries(model, entries, cache, seed)
    clean_auc = auc(clean_scores, labels)
    report.summary["clean_auc"] = clean_auc
    kind_avgs = []
    for kind in PERTURBATION_KINDS:
        sev_aucs = []
        for severity in range(1, 6):
            spec = PerturbationSpec(kind, severity, seed=seed * 31 + severity)
            scores, labels2 = score_entries(model, entries, cache, seed,
                                            perturbation=spec)
            a = auc(scores, labels2)
            sev_aucs.append(a)
            report.rows.append({"perturbation": kind, "severity": severity, "auc": a})
        kind_avg = float(np.mean(sev_aucs))
        report.summary[f"avg_auc_{kind}"] = kind_avg
        kind_avgs.append(kind_avg)
    report.summary["avg_auc_perturbed"] = float(np.mean(kind_avgs))
    report.summary["average_drop"] = float(np.mean(kind_avgs) - clean_auc)
    return report


def run_data_scale_ablation(manifest: DatasetManifest, cfg: RunConfig,
                            seed: int | None = None,
                            fractions=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0),
                            cache: VideoCache | None = None,
                            workdir: str | Path | None = None) -> EvalReport:
    """Pretrain on a fraction of the real corpus, finetune, evaluate.

    Fraction 0.0 skips pretraining entirely (random-initialization baseline).
    """
    import tempfile

    from .checkpoint import save_checkpoint
    seed = cfg.seed if seed is None else seed
    cache = cache or VideoCache()
    report = EvalReport(protocol="data-scale", seed=seed, config=cfg.to_dict())
    pre_entries = manifest.split("pretrain")
    train = manifest.split("train")
    test = manifest.split("test")
    workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="datascale_"))
    for frac in fractions:
        ckpt = None
        if frac > 0.0:
            k = max(2, int(round(frac * len(pre_entries))))
            sub = DatasetManifest(entries=pre_entries[:k])
            backbone = pretrain(sub, cfg, seed=seed, cache=cache)
            ckpt = workdir / f"ckpt_{int(frac * 100):03d}"
            save_checkpoint(backbone.store, ckpt, cfg)
        model = _finetune_model(cfg, train, seed, cache, ckpt)
        scores, labels = score_entries(model, test, cache, seed)
        report.rows.append({"fraction": frac, "auc": auc(scores, labels),
                            "acc": accuracy(scores, labels, cfg.decision_threshold),
                            "pretrained": frac > 0.0})
    fr = [r["fraction"] for r in report.rows]
    au = [r["auc"] for r in report.rows]
    rho = spearmanr(fr, au).statistic
    report.summary["spearman_fraction_auc"] = float(rho) if np.isfinite(rho) else 0.0
    return report


def run_module_ablation(manifest: DatasetManifest, cfg: RunConfig,
                        seed: int | None = None,
                        cache: VideoCache | None = None,
                        workdir: str | Path | None = None) -> EvalReport:
    """Pretrain with each objective alone and with both; identical finetuning."""
    import copy
    import tempfile

    from .checkpoint import save_checkpoint
    seed = cfg.seed if seed is None else seed
    cache = cache or VideoCache()
    report = EvalReport(protocol="module-ablation", seed=seed, config=cfg.to_dict())
    train = manifest.split("train")
    test = manifest.split("test")
    workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="ablation_"))
    settings = [
        ("spm", cfg.lambda_spm, 0.0),
        ("tcm", 0.0, cfg.lambda_tcm),
        ("spm+tcm", cfg.lambda_spm, cfg.lambda_tcm),
    ]
    for name, l1, l2 in settings:
        if l1 == 0.0 and l2 == 0.0:
            raise EvalError("module ablation with both objectives off is rejected")
        sub_cfg = copy.deepcopy(cfg)
        sub_cfg.lambda_spm = l1
        sub_cfg.lambda_tcm = l2
        backbone = pretrain(manifest, sub_cfg, seed=seed, cache=cache)
        ckpt = workdir / f"ckpt_{name.replace('+', '_')}"
        save_checkpoint(backbone.store, ckpt, sub_cfg)
        model = _finetune_model(cfg, train, seed, cache, ckpt)
        scores, labels = score_entries(model, test, cache, seed)
        report.rows.append({"modules": name, "lambda_spm": l1, "lambda_tcm": l2,
                            "auc": auc(scores, labels),
                            "acc": accuracy(scores, labels, cfg.decision_threshold)})
    return report


# -- localization -------------------------------------------------------------


@dataclass
class Heatmap:
    maps: np.ndarray   # (n, H, W) in [0, 1]


def grad_cam(clip: FrameClip, model: DetectorModel,
             target_class: int = 1) -> Heatmap:
    """Gradient-weighted activation map of the class-logit margin per frame.

    The target is the margin logit[target] - logit[other], so shared
    common-mode gradient cancels. Saliency is the channel-summed magnitude of
    gradient times activation at the encoder's last conv maps ("encoder"
    mode) or weighted by the per-frame feature gradients the decoder path
    sees ("decoder" mode); magnitudes are used because the activations are
    GELU outputs and carry sign.
    """
    cfg = model.cfg
    backbone: Backbone = model.backbone
    frames = clip.frames
    n = frames.shape[0]
    feats, conv_maps = backbone.encode_frames(Tensor(frames), keep_maps=True)
    feats_seq = ad.reshape(feats, (1, n, feats.shape[-1]))
    tokens = backbone.tokens_from_features(feats_seq)
    pooled = backbone.pool_representation(tokens)
    logits = head_logits(pooled, model.store)
    target = ad.add(logits[(0, target_class)],
                    ad.mul(logits[(0, 1 - target_class)], -1.0))
    target.backward()

    acts = conv_maps.data                       # (n, C, h, w)
    if cfg.saliency_features == "decoder":
        grads = feats.grad                      # (n, C) gradient at frame features
        weights = grads if grads is not None else np.zeros_like(feats.data)
        cam = np.abs(weights[:, :, None, None] * acts).sum(axis=1)
    else:
        g = conv_maps.grad
        if g is None:
            g = np.zeros_like(acts)
        cam = np.abs(g * acts).sum(axis=1)

    # upsample to frame resolution and normalize per clip
    h, w = frames.shape[2], frames.shape[3]
    fy, fx = h // cam.shape[1], w // cam.shape[2]
    cam = np.repeat(np.repeat(cam, fy, axis=1), fx, axis=2)
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    return Heatmap(maps=cam.astype(np.float32))


def write_heatmap_pgm(heatmap: Heatmap, out_dir: str | Path,
                      prefix: str = "frame") -> list[Path]:
    """One portable graymap (maxval 255) per frame plus an index JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, m in enumerate(heatmap.maps):
        img = np.clip(np.round(m * 255), 0, 255).astype(np.uint8)
        p = out / f"{prefix}_{i:03d}.pgm"
        with open(p, "wb") as f:
            f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
            f.write(img.tobytes())
        paths.append(p)
    index = {"frames": [p.name for p in paths],
             "height": int(heatmap.maps.shape[1]),
             "width": int(heatmap.maps.shape[2])}
    (out / "index.json").write_text(json.dumps(index, sort_keys=True))
    return paths


def saliency_inside_outside(heatmap: Heatmap, mask: np.ndarray
                            ) -> tuple[float, float]:
    """Mean saliency inside vs outside a region mask, over all frames."""
    m = mask.astype(bool)
    inside = float(heatmap.maps[:, m].mean())
    outside = float(heatmap.maps[:, ~m].mean())
    return inside, outside


# -- embedding export ---------------------------------------------------------


def export_embeddings(manifest: DatasetManifest, model: DetectorModel,
                      split: str, out_prefix: str | Path,
                      seed: int | None = None,
                      cache: VideoCache | None = None) -> Path:
    """One pooled representation per video: header JSON + f32le matrix."""
    cfg = model.cfg
    seed = cfg.seed if seed is None else seed
    cache = cache or VideoCache()
    entries = manifest.split(split)
    rows, labels, kinds = [], [], []
    for i, e in enumerate(entries):
        rng = np.random.default_rng((seed, i))
        video = cache.get(e.path)
        clip = sample_clip(video, cfg.clip_len, rng, cfg.frame_size)
        z = model.represent_clips(clip.frames[None])[0]
        rows.append(z.astype("<f4"))
        labels.append(e.label)
        kinds.append(e.forgery_kind)
    mat = np.stack(rows) if rows else np.zeros((0, cfg.d_model), dtype="<f4")
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    header = {"rows": int(mat.shape[0]), "dim": int(mat.shape[1]),
              "dtype": "f32le", "labels": labels, "forgery_kinds": kinds,
              "paths": [e.path for e in entries]}
    Path(str(prefix) + ".json").write_text(json.dumps(header, sort_keys=True))
    mat.tofile(str(prefix) + ".bin")
    return Path(str(prefix) + ".bin")
