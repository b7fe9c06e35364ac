"""Command-line interface.

Exit codes: 0 success, 2 validation/config error, 3 numeric failure.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .autodiff import NumericError
from .checkpoint import (CheckpointError, load_checkpoint, read_checkpoint_config,
                         save_checkpoint)
from .config import (PERTURBATION_KINDS, ConfigError, RunConfig, profile_config)
from .detector import BACKBONE_NAMESPACES, DetectorModel, finetune, predict_video
from .pretrain import PretrainError, pretrain
from .videodata import (DataError, DatasetManifest, PerturbationSpec, VideoCache,
                        apply_perturbation, generate_corpus, read_manifest,
                        read_video, sample_clip, write_video)

EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

_VALIDATION_ERRORS = (ConfigError, DataError, PretrainError, CheckpointError,
                      ValueError, FileNotFoundError)


def _resolve_seed(seed: int | None, cfg: RunConfig) -> int:
    env = os.environ.get("VIDCOHERENCE_SEED")
    if seed is not None:
        return seed
    if env is not None:
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"VIDCOHERENCE_SEED={env!r} is not an integer") from e
    return cfg.seed


def _load_config(config_path: str | None, profile: str) -> RunConfig:
    if config_path:
        return RunConfig.from_file(config_path, overrides={"profile": profile}
                                   if profile else None)
    return profile_config(profile or "desk")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_run_manifest(out_dir: Path, command: str, cfg: RunConfig, seed: int,
                        inputs: list[str | Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "seed": seed,
        "config": cfg.to_dict(),
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
    }
    (out_dir / "run_manifest.json").write_text(
        json.dumps(record, sort_keys=True, indent=1))


def _load_model(model_dir: str, seed: int) -> DetectorModel:
    raw = read_checkpoint_config(model_dir)
    if raw is None:
        raise CheckpointError(f"model checkpoint at {model_dir} carries no config")
    cfg = RunConfig.from_dict(raw)
    model = DetectorModel.init(cfg, seed)
    load_checkpoint(model_dir, model.store,
                    namespaces=BACKBONE_NAMESPACES + ["head"])
    return model


def _guarded(fn):
    """Map domain errors to the documented exit codes."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            with np.errstate(invalid="raise", divide="raise"):
                return fn(*args, **kwargs)
        except (NumericError, FloatingPointError) as e:
            click.echo(f"numeric failure: {e}", err=True)
            sys.exit(EXIT_NUMERIC)
        except _VALIDATION_ERRORS as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_VALIDATION)
    return wrapper


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="JSON config file.")(fn)
    fn = click.option("--profile", default="", help="Config profile name.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Overrides config seed and VIDCOHERENCE_SEED.")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), required=True,
                      help="Output directory.")(fn)
    return fn


@click.group()
def main():
    """Video-forgery detection via natural-consistency representations."""


@main.command("gen-data")
@common_options
@_guarded
def gen_data(config_path, profile, seed, out_dir):
    """Generate a synthetic video corpus with a dataset manifest."""
    cfg = _load_config(config_path, profile)
    seed = _resolve_seed(seed, cfg)
    out = Path(out_dir)
    generate_corpus(cfg, out, seed)
    _write_run_manifest(out, "gen-data", cfg, seed, [])
    click.echo(str(out / "manifest.jsonl"))


@main.command("pretrain")
@common_options
@click.option("--data", "manifest_path", type=click.Path(exists=True),
              required=True, help="Dataset manifest (JSONL).")
@_guarded
def pretrain_cmd(config_path, profile, seed, out_dir, manifest_path):
    """Self-supervised pretraining on the manifest's real pretrain split."""
    cfg = _load_config(config_path, profile)
    seed = _resolve_seed(seed, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(manifest_path)
    backbone = pretrain(manifest, cfg, seed=seed, out_dir=out,
                        log_path=out / "pretrain_log.jsonl")
    save_checkpoint(backbone.store, out / "checkpoint", cfg, cfg.pretrain_steps)
    _write_run_manifest(out, "pretrain", cfg, seed, [manifest_path])
    click.echo(str(out / "checkpoint"))


@main.command("finetune")
@common_options
@click.option("--data", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", "ckpt", type=click.Path(), default=None,
              help="Pretrained backbone checkpoint; omit for random init.")
@_guarded
def finetune_cmd(config_path, profile, seed, out_dir, manifest_path, ckpt):
    """Train the classification head on the labeled train split."""
    cfg = _load_config(config_path, profile)
    seed = _resolve_seed(seed, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(manifest_path)
    model = DetectorModel.init(cfg, seed, pretrained_checkpoint=ckpt)
    finetune(model, manifest.split("train"), seed=seed,
             log_path=out / "finetune_log.jsonl")
    save_checkpoint(model.store, out / "model", cfg, cfg.finetune_steps)
    inputs = [manifest_path] + ([Path(ckpt) / "manifest.json"] if ckpt else [])
    _write_run_manifest(out, "finetune", cfg, seed, inputs)
    click.echo(str(out / "model"))


@main.command("eval")
@common_options
@click.option("--data", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--model", "model_dir", type=click.Path(exists=True), default=None,
              help="Finetuned model (required for basic/robustness).")
@click.option("--checkpoint", "ckpt", type=click.Path(), default=None,
              help="Pretrained backbone (for protocols that finetune internally).")
@click.option("--protocol", type=click.Choice(
    ["basic", "cross-forgery", "robustness", "data-scale", "module-ablation"]),
    default="basic")
@_guarded
def eval_cmd(config_path, profile, seed, out_dir, manifest_path, model_dir,
             ckpt, protocol):
    """Run an evaluation protocol and write report.json."""
    from . import evalkit

    cfg = _load_config(config_path, profile)
    seed = _resolve_seed(seed, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(manifest_path)
    cache = VideoCache()
    if protocol in ("basic", "robustness"):
        if model_dir is None:
            raise ConfigError(f"--model is required for protocol {protocol!r}")
        model = _load_model(model_dir, seed)
        if protocol == "basic":
            scores, labels = evalkit.score_entries(model, manifest.split("test"),
                                                   cache, seed)
            report = evalkit.EvalReport(protocol="basic", seed=seed,
                                        config=model.cfg.to_dict())
            report.summary = {
                "auc": evalkit.auc(scores, labels),
                "acc": evalkit.accuracy(scores, labels,
                                        model.cfg.decision_threshold),
                "n_test": len(labels),
            }
        else:
            report = evalkit.run_robustness(manifest, model, seed=seed, cache=cache)
    elif protocol == "cross-forgery":
        report = evalkit.run_cross_forgery(manifest, cfg, ckpt, seed=seed,
                                           cache=cache, include_scratch=True)
    elif protocol == "data-scale":
        report = evalkit.run_data_scale_ablation(manifest, cfg, seed=seed,
                                                 cache=cache, workdir=out / "work")
    else:
        report = evalkit.run_module_ablation(manifest, cfg, seed=seed,
                                             cache=cache, workdir=out / "work")
    report.save(out / "report.json")
    _write_run_manifest(out, "eval", cfg, seed, [manifest_path])
    click.echo(str(out / "report.json"))


@main.command("perturb")
@common_options
@click.option("--input", "video_dir", type=click.Path(exists=True), required=True)
@click.option("--kind", type=click.Choice(list(PERTURBATION_KINDS)), required=True)
@click.option("--severity", type=click.IntRange(1, 5), required=True)
@_guarded
def perturb_cmd(config_path, profile, seed, out_dir, video_dir, kind, severity):
    """Apply one perturbation to every frame of a stored video."""
    from .videodata import FrameClip

    cfg = _load_config(config_path, profile)
    seed = _resolve_seed(seed, cfg)
    out = Path(out_dir)
    video = read_video(video_dir)
    clip = FrameClip(frames=video.frames, source_id=str(video_dir), offset=0)
    spec = PerturbationSpec(kind, severity, seed=seed)
    perturbed = apply_perturbation(clip, spec, cfg.perturbation_schedules)
    video.frames = perturbed.frames
    write_video(video, out)
    _write_run_manifest(out, "perturb", cfg, seed,
                        [Path(video_dir) / "header.json"])
    click.echo(str(out))


@main.command("localize")
@common_options
@click.option("--input", "video_dir", type=click.Path(exists=True), required=True)
@click.option("--model", "model_dir", type=click.Path(exists=True), required=True)
@_guarded
def localize_cmd(config_path, profile, seed, out_dir, video_dir, model_dir):
    """Write per-frame saliency heatmaps (PGM) for a stored video."""
    from . import evalkit

    cfg = _load_config(config_path, profile)
    seed = _resolve_seed(seed, cfg)
    model = _load_model(model_dir, seed)
    video = read_video(video_dir)
    rng = np.random.default_rng(seed)
    clip = sample_clip(video, model.cfg.clip_len, rng, model.cfg.frame_size)
    heatmap = evalkit.grad_cam(clip, model)
    evalkit.write_heatmap_pgm(heatmap, Path(out_dir))
    pred = predict_video(video, model, np.random.default_rng(seed))
    (Path(out_dir) / "prediction.json").write_text(pred.to_json())
    _write_run_manifest(Path(out_dir), "localize", cfg, seed,
                        [Path(video_dir) / "header.json"])
    click.echo(str(out_dir))


@main.command("embed")
@common_options
@click.option("--data", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--model", "model_dir", type=click.Path(exists=True), required=True)
@click.option("--split", type=click.Choice(["pretrain", "train", "test"]),
              default="test")
@_guarded
def embed_cmd(config_path, profile, seed, out_dir, manifest_path, model_dir, split):
    """Export pooled clip representations for a manifest split."""
    from . import evalkit

    cfg = _load_config(config_path, profile)
    seed = _resolve_seed(seed, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = _load_model(model_dir, seed)
    manifest = read_manifest(manifest_path)
    path = evalkit.export_embeddings(manifest, model, split,
                                     out / "embeddings", seed=seed)
    _write_run_manifest(out, "embed", cfg, seed, [manifest_path])
    click.echo(str(path))


if __name__ == "__main__":
    main()
