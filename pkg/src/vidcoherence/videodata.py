"""Synthetic video corpus: generation, forgeries, clips, perturbations, manifests.

Videos are smoothly moving textured blobs. Real videos follow C1 trajectories;
forgeries corrupt temporal coherence while keeping individual frames plausible.
Storage is codec-free: a JSON header plus a raw little-endian float32 blob.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter

from .config import FORGERY_KINDS, PERTURBATION_KINDS, RunConfig


class DataError(ValueError):
    pass


@dataclass
class SyntheticVideo:
    frames: np.ndarray                      # (T, 3, H, W) float32 in [0, 1]
    label: str                              # "real" | "fake"
    forgery_kind: str                       # "none" or one of FORGERY_KINDS
    dynamics: dict = field(default_factory=dict)
    splice_mask: np.ndarray | None = None   # (H, W) bool, region-splice only

    @property
    def length(self) -> int:
        return self.frames.shape[0]


@dataclass
class FrameClip:
    frames: np.ndarray    # (n, 3, H, W) float32 in [0, 1]
    source_id: str = ""
    offset: int = 0

    @property
    def length(self) -> int:
        return self.frames.shape[0]


@dataclass
class PerturbationSpec:
    kind: str
    severity: int
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in PERTURBATION_KINDS:
            raise DataError(f"unknown perturbation kind {self.kind!r}")
        if not 1 <= self.severity <= 5:
            raise DataError(f"severity {self.severity} outside 1..5")


# -- generation -----------------------------------------------------------


def _blob_params(rng: np.random.Generator, h: int, w: int) -> list[dict]:
    blobs = []
    for _ in range(rng.integers(2, 4)):
        blobs.append(dict(
            cx=rng.uniform(0.25 * w, 0.75 * w),
            cy=rng.uniform(0.25 * h, 0.75 * h),
            ax=rng.uniform(0.1 * w, 0.22 * w),
            ay=rng.uniform(0.1 * h, 0.22 * h),
            fx=rng.uniform(0.01, 0.03),
            fy=rng.uniform(0.01, 0.03),
            px=rng.uniform(0, 2 * np.pi),
            py=rng.uniform(0, 2 * np.pi),
            radius=rng.uniform(0.1 * h, 0.18 * h),
            r_osc=rng.uniform(0.0, 0.02 * h),
            r_freq=rng.uniform(0.01, 0.03),
            color=rng.uniform(0.3, 1.0, size=3),
        ))
    return blobs


def _render_frame(blobs: list[dict], bg: np.ndarray, t: float,
                  h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    img = bg.copy()
    for b in blobs:
        x = b["cx"] + b["ax"] * np.sin(2 * np.pi * b["fx"] * t + b["px"])
        y = b["cy"] + b["ay"] * np.sin(2 * np.pi * b["fy"] * t + b["py"])
        r = b["radius"] + b["r_osc"] * np.sin(2 * np.pi * b["r_freq"] * t)
        bump = np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2 * r * r))
        img += b["color"][:, None, None] * bump[None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_real_video(seed: int, t_frames: int, h: int, w: int,
                        clip_len: int = 2) -> SyntheticVideo:
    """Smoothly evolving textured-blob video; deterministic per seed."""
    if t_frames < clip_len or h < 4 or w < 4:
        raise DataError(f"invalid extents T={t_frames} H={h} W={w}")
    rng = np.random.default_rng(seed)
    gx, gy = rng.uniform(-0.15, 0.15, size=2)
    yy, xx = np.mgrid[0:h, 0:w]
    bg = 0.25 + gx * (xx / w) + gy * (yy / h)
    bg = np.broadcast_to(bg, (3, h, w)).astype(np.float64)
    blobs = _blob_params(rng, h, w)
    frames = np.stack([_render_frame(blobs, bg, t, h, w) for t in range(t_frames)])
    return SyntheticVideo(frames=frames, label="real", forgery_kind="none",
                          dynamics={"seed": int(seed), "blobs": len(blobs)})


def generate_fake_video(real: SyntheticVideo, kind: str, seed: int) -> SyntheticVideo:
    """Derive a temporally incoherent forgery from a real video."""
    if kind not in FORGERY_KINDS:
        raise DataError(f"unknown forgery kind {kind!r}")
    rng = np.random.default_rng(seed)
    t, _, h, w = real.frames.shape
    frames = real.frames.copy()
    splice_mask = None

    if kind == "temporal-jitter":
        k = max(1, t // 4)
        starts = rng.permutation(t // 2)[:k] * 2   # disjoint adjacent pairs
        for s in starts:
            frames[[s, s + 1]] = frames[[s + 1, s]]
    elif kind == "per-frame-resample":
        # re-render each frame at an independent trajectory time
        base_seed = real.dynamics.get("seed", 0)
        src_rng = np.random.default_rng(base_seed)
        gx, gy = src_rng.uniform(-0.15, 0.15, size=2)
        yy, xx = np.mgrid[0:h, 0:w]
        bg = 0.25 + gx * (xx / w) + gy * (yy / h)
        bg = np.broadcast_to(bg, (3, h, w)).astype(np.float64)
        blobs = _blob_params(src_rng, h, w)
        times = rng.uniform(0, t, size=t)
        frames = np.stack([_render_frame(blobs, bg, float(u), h, w) for u in times])
    elif kind == "region-splice":
        rh, rw = h // 2, w // 2
        y0 = int(rng.integers(0, h - rh + 1))
        x0 = int(rng.integers(0, w - rw + 1))
        shift = int(rng.integers(t // 3, 2 * t // 3))
        for i in range(t):
            frames[i, :, y0:y0 + rh, x0:x0 + rw] = \
                real.frames[(i + shift) % t, :, y0:y0 + rh, x0:x0 + rw]
        splice_mask = np.zeros((h, w), dtype=bool)
        splice_mask[y0:y0 + rh, x0:x0 + rw] = True
    elif kind == "blend-boundary":
        rh, rw = h // 2, w // 2
        y0 = int(rng.integers(1, h - rh))
        x0 = int(rng.integers(1, w - rw))
        static = real.frames[:, :, y0:y0 + rh, x0:x0 + rw].mean(axis=0)
        ring = np.zeros((h, w), dtype=bool)
        ring[y0 - 1:y0 + rh + 1, x0 - 1:x0 + rw + 1] = True
        ring[y0 + 1:y0 + rh - 1, x0 + 1:x0 + rw - 1] = False
        ry, rx = np.where(ring)
        for i in range(t):
            frames[i, :, y0:y0 + rh, x0:x0 + rw] = \
                0.3 * frames[i, :, y0:y0 + rh, x0:x0 + rw] + 0.7 * static
            noise = rng.normal(0, 0.12, size=(3, ry.size))
            frame = frames[i]
            frame[:, ry, rx] = np.clip(frame[:, ry, rx] + noise, 0, 1)
        splice_mask = np.zeros((h, w), dtype=bool)
        splice_mask[y0:y0 + rh, x0:x0 + rw] = True

    frames = np.clip(frames, 0.0, 1.0).astype(np.float32)
    return SyntheticVideo(frames=frames, label="fake", forgery_kind=kind,
                          dynamics=dict(real.dynamics), splice_mask=splice_mask)


def mean_frame_delta(frames: np.ndarray) -> float:
    """Largest mean absolute pixel change between consecutive frames."""
    deltas = np.abs(np.diff(frames, axis=0)).mean(axis=(1, 2, 3))
    return float(deltas.max())


# -- clip sampling and shuffling ------------------------------------------


def _resize_bilinear(frames: np.ndarray, size: int) -> np.ndarray:
    n, c, h, w = frames.shape
    if h == size and w == size:
        return frames
    ys = np.linspace(0, h - 1, size)
    xs = np.linspace(0, w - 1, size)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    wy = (ys - y0)[None, None, :, None]
    wx = (xs - x0)[None, None, None, :]
    f00 = frames[:, :, y0][:, :, :, x0]
    f01 = frames[:, :, y0][:, :, :, x0 + 1]
    f10 = frames[:, :, y0 + 1][:, :, :, x0]
    f11 = frames[:, :, y0 + 1][:, :, :, x0 + 1]
    out = (f00 * (1 - wy) * (1 - wx) + f01 * (1 - wy) * wx
           + f10 * wy * (1 - wx) + f11 * wy * wx)
    return out.astype(frames.dtype)


def sample_clip(video: SyntheticVideo, n: int, rng: np.random.Generator,
                frame_size: int | None = None, source_id: str = "",
                offset: int | None = None) -> FrameClip:
    """Contiguous n frames from a uniform random offset, resized if needed."""
    t = video.length
    if t < n:
        raise DataError(f"video of length {t} too short for clip length {n}")
    if offset is None:
        offset = int(rng.integers(0, t - n + 1))
    frames = video.frames[offset:offset + n]
    if frame_size is not None:
        frames = _resize_bilinear(frames, frame_size)
    return FrameClip(frames=frames.copy(), source_id=source_id, offset=offset)


def shuffle_frames(frames: np.ndarray, rng: np.random.Generator
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Reorder along axis 0 by a uniform non-identity permutation."""
    n = frames.shape[0]
    if n < 2:
        raise DataError("need at least 2 frames to shuffle")
    identity = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.array_equal(perm, identity):
            break
    return frames[perm], perm


# -- perturbations --------------------------------------------------------


def apply_perturbation(clip: FrameClip, spec: PerturbationSpec,
                       schedules: dict | None = None) -> FrameClip:
    """Deterministic corruption of a clip; shape and [0,1] range preserved."""
    spec.validate()
    if schedules is None:
        from .config import DEFAULT_PERTURBATION_SCHEDULES
        schedules = DEFAULT_PERTURBATION_SCHEDULES
    level = schedules[spec.kind][spec.severity - 1]
    rng = np.random.default_rng(spec.seed)
    x = clip.frames.astype(np.float32).copy()
    n, c, h, w = x.shape

    # identity-strength parameters are exact no-ops
    identity = {"saturation": 1.0, "contrast": 1.0, "block": 0, "noise": 0.0,
                "blur": 0.0, "pixel": 1, "compress": 0.0}
    if level == identity[spec.kind]:
        return FrameClip(frames=x, source_id=clip.source_id, offset=clip.offset)

    if spec.kind == "saturation":
        gray = x.mean(axis=1, keepdims=True)
        x = gray + level * (x - gray)
    elif spec.kind == "contrast":
        m = x.mean()
        x = m + level * (x - m)
    elif spec.kind == "block":
        size = max(2, h // 8)
        for i in range(n):
            for _ in range(int(level)):
                y0 = int(rng.integers(0, h - size + 1))
                x0 = int(rng.integers(0, w - size + 1))
                x[i, :, y0:y0 + size, x0:x0 + size] = 0.5
    elif spec.kind == "noise":
        x = x + rng.normal(0.0, level, size=x.shape)
    elif spec.kind == "blur":
        x = gaussian_filter(x, sigma=(0, 0, level, level), mode="nearest")
    elif spec.kind == "pixel":
        f = min(int(level), h, w)
        if f > 1:
            hh, ww = (h // f) * f, (w // f) * f
            coarse = x[:, :, :hh, :ww].reshape(n, c, hh // f, f, ww // f, f).mean(axis=(3, 5))
            up = np.repeat(np.repeat(coarse, f, axis=2), f, axis=3)
            x[:, :, :hh, :ww] = up
    elif spec.kind == "compress":
        b = 8
        hh, ww = (h // b) * b, (w // b) * b
        region = x[:, :, :hh, :ww]
        blocks = region.reshape(n, c, hh // b, b, ww // b, b).transpose(0, 1, 2, 4, 3, 5)
        coeff = dctn(blocks, axes=(-2, -1), norm="ortho")
        coeff = np.round(coeff / level) * level
        blocks = idctn(coeff, axes=(-2, -1), norm="ortho")
        x[:, :, :hh, :ww] = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hh, ww)

    x = np.clip(x, 0.0, 1.0).astype(np.float32)
    return FrameClip(frames=x, source_id=clip.source_id, offset=clip.offset)


# -- video storage --------------------------------------------------------


def write_video(video: SyntheticVideo, path: str | Path) -> None:
    """Store as <path>/header.json + frames.bin (+ splice_mask.bin)."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    t, c, h, w = video.frames.shape
    header = {
        "T": t, "C": c, "H": h, "W": w, "dtype": "f32le",
        "label": video.label, "forgery_kind": video.forgery_kind,
        "dynamics": video.dynamics,
        "has_splice_mask": video.splice_mask is not None,
    }
    (d / "header.json").write_text(json.dumps(header, sort_keys=True))
    video.frames.astype("<f4").tofile(d / "frames.bin")
    if video.splice_mask is not None:
        video.splice_mask.astype(np.uint8).tofile(d / "splice_mask.bin")


def read_video(path: str | Path) -> SyntheticVideo:
    d = Path(path)
    header_path = d / "header.json"
    if not header_path.exists():
        raise DataError(f"no video at {d} (missing header.json)")
    header = json.loads(header_path.read_text())
    t, c, h, w = header["T"], header["C"], header["H"], header["W"]
    frames = np.fromfile(d / "frames.bin", dtype="<f4")
    if frames.size != t * c * h * w:
        raise DataError(f"frames.bin size mismatch at {d}")
    frames = frames.reshape(t, c, h, w)
    mask = None
    if header.get("has_splice_mask"):
        mask = np.fromfile(d / "splice_mask.bin", dtype=np.uint8).reshape(h, w).astype(bool)
    return SyntheticVideo(frames=frames, label=header["label"],
                          forgery_kind=header["forgery_kind"],
                          dynamics=header.get("dynamics", {}), splice_mask=mask)


# -- manifests ------------------------------------------------------------

SPLITS = ("pretrain", "train", "val", "test")


@dataclass
class ManifestEntry:
    path: str
    label: str
    forgery_kind: str
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def validate(self) -> None:
        for i, e in enumerate(self.entries):
            if e.label not in ("real", "fake"):
                raise DataError(f"entry {i}: bad label {e.label!r}")
            if e.split not in SPLITS:
                raise DataError(f"entry {i}: bad split {e.split!r}")
            if e.forgery_kind != "none" and e.forgery_kind not in FORGERY_KINDS:
                raise DataError(f"entry {i}: bad forgery_kind {e.forgery_kind!r}")
            if (e.label == "fake") != (e.forgery_kind != "none"):
                raise DataError(f"entry {i}: label/forgery_kind disagree")
            if e.split == "pretrain" and e.label != "real":
                raise DataError(
                    f"entry {i} ({e.path}): pretrain split must contain only real videos")


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    manifest.validate()
    lines = [json.dumps({"path": e.path, "label": e.label,
                         "forgery_kind": e.forgery_kind, "split": e.split},
                        sort_keys=True)
             for e in manifest.entries]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_manifest(path: str | Path) -> DatasetManifest:
    entries = []
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{lineno}: malformed JSON record ({e})") from e
        missing = {"path", "label", "forgery_kind", "split"} - set(rec)
        if missing:
            raise DataError(f"{path}:{lineno}: missing fields {sorted(missing)}")
        entries.append(ManifestEntry(path=rec["path"], label=rec["label"],
                                     forgery_kind=rec["forgery_kind"],
                                     split=rec["split"]))
    manifest = DatasetManifest(entries=entries)
    manifest.validate()
    return manifest


# -- corpus generation ----------------------------------------------------


def generate_corpus(cfg: RunConfig, out_dir: str | Path,
                    seed: int | None = None) -> DatasetManifest:
    """Write a full synthetic corpus (pretrain/train/test) plus its manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed is None else seed
    h = w = cfg.frame_size
    entries: list[ManifestEntry] = []

    def emit(video: SyntheticVideo, name: str, split: str) -> None:
        vdir = out / name
        write_video(video, vdir)
        entries.append(ManifestEntry(path=str(vdir), label=video.label,
                                     forgery_kind=video.forgery_kind, split=split))

    idx = 0
    for i in range(cfg.num_pretrain_videos):
        emit(generate_real_video(seed * 1_000_003 + idx, cfg.video_len, h, w,
                                 cfg.clip_len), f"pretrain_real_{i:04d}", "pretrain")
        idx += 1
    for i in range(cfg.num_finetune_real):
        emit(generate_real_video(seed * 1_000_003 + idx, cfg.video_len, h, w,
                                 cfg.clip_len), f"train_real_{i:04d}", "train")
        idx += 1
    for kind in FORGERY_KINDS:
        for i in range(cfg.num_finetune_fake_per_kind):
            real = generate_real_video(seed * 1_000_003 + idx, cfg.video_len, h, w,
                                       cfg.clip_len)
            idx += 1
            fake = generate_fake_video(real, kind, seed * 2_000_003 + idx)
            emit(fake, f"train_{kind}_{i:04d}", "train")
    for i in range(cfg.num_eval_real):
        emit(generate_real_video(seed * 1_000_003 + idx, cfg.video_len, h, w,
                                 cfg.clip_len), f"test_real_{i:04d}", "test")
        idx += 1
    for kind in FORGERY_KINDS:
        for i in range(cfg.num_eval_fake_per_kind):
            real = generate_real_video(seed * 1_000_003 + idx, cfg.video_len, h, w,
                                       cfg.clip_len)
            idx += 1
            fake = generate_fake_video(real, kind, seed * 2_000_003 + idx)
            emit(fake, f"test_{kind}_{i:04d}", "test")

    manifest = DatasetManifest(entries=entries)
    write_manifest(manifest, out / "manifest.jsonl")
    return manifest


class VideoCache:
    """Read-through cache of decoded videos keyed by path."""

    def __init__(self):
        self._cache: dict[str, SyntheticVideo] = {}

    def get(self, path: str) -> SyntheticVideo:
        v = self._cache.get(path)
        if v is None:
            v = read_video(path)
            self._cache[path] = v
        return v
