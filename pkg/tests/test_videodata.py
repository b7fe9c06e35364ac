"""Synthetic corpus: generation, forgeries, clips, perturbations, storage."""

import json

import numpy as np
import pytest
from scipy.stats import chisquare

from vidcoherence.config import FORGERY_KINDS, PERTURBATION_KINDS, profile_config
from vidcoherence.videodata import (DataError, DatasetManifest, FrameClip,
                                    ManifestEntry, PerturbationSpec, VideoCache,
                                    apply_perturbation, generate_corpus,
                                    generate_fake_video, generate_real_video,
                                    mean_frame_delta, read_manifest, read_video,
                                    sample_clip, shuffle_frames, write_manifest,
                                    write_video)

T, H, W, N = 16, 32, 32, 8


@pytest.fixture(scope="module")
def real():
    return generate_real_video(11, T, H, W, N)


def test_real_video_shape_range_determinism(real):
    assert real.frames.shape == (T, 3, H, W)
    assert real.frames.dtype == np.float32
    assert real.frames.min() >= 0.0 and real.frames.max() <= 1.0
    again = generate_real_video(11, T, H, W, N)
    assert np.array_equal(real.frames, again.frames)
    other = generate_real_video(12, T, H, W, N)
    assert not np.array_equal(real.frames, other.frames)


def test_real_videos_are_temporally_smooth():
    bound = profile_config("desk").smoothness_bound
    for seed in range(100):
        v = generate_real_video(seed, 24, H, W, N)
        assert mean_frame_delta(v.frames) < bound, f"seed {seed}"


def test_resample_forgery_breaks_smoothness():
    bound = profile_config("desk").smoothness_bound
    for seed in range(30):
        v = generate_real_video(seed, 24, H, W, N)
        f = generate_fake_video(v, "per-frame-resample", seed + 500)
        assert mean_frame_delta(f.frames) > bound, f"seed {seed}"


@pytest.mark.parametrize("kind", FORGERY_KINDS)
def test_fake_video_invariants(real, kind):
    fake = generate_fake_video(real, kind, 99)
    assert fake.label == "fake"
    assert fake.forgery_kind == kind
    assert fake.frames.shape == real.frames.shape
    assert fake.frames.min() >= 0.0 and fake.frames.max() <= 1.0
    assert not np.array_equal(fake.frames, real.frames)
    again = generate_fake_video(real, kind, 99)
    assert np.array_equal(fake.frames, again.frames)
    if kind in ("region-splice", "blend-boundary"):
        assert fake.splice_mask is not None
        assert fake.splice_mask.shape == (H, W)
        assert 0 < fake.splice_mask.sum() < H * W
    else:
        assert fake.splice_mask is None


def test_region_splice_edits_only_masked_region(real):
    fake = generate_fake_video(real, "region-splice", 5)
    outside = ~fake.splice_mask
    assert np.array_equal(fake.frames[:, :, outside], real.frames[:, :, outside])
    assert not np.array_equal(fake.frames[:, :, fake.splice_mask],
                              real.frames[:, :, fake.splice_mask])


def test_temporal_jitter_keeps_frame_multiset(real):
    fake = generate_fake_video(real, "temporal-jitter", 3)
    orig = {real.frames[i].tobytes() for i in range(T)}
    got = {fake.frames[i].tobytes() for i in range(T)}
    assert orig == got


def test_unknown_forgery_kind_rejected(real):
    with pytest.raises(DataError):
        generate_fake_video(real, "face-swap", 0)


# -- clips -------------------------------------------------------------------


def test_sample_clip_bounds_and_resize(real):
    rng = np.random.default_rng(0)
    for _ in range(20):
        clip = sample_clip(real, N, rng, frame_size=16)
        assert clip.frames.shape == (N, 3, 16, 16)
        assert 0 <= clip.offset <= T - N
    with pytest.raises(DataError):
        sample_clip(real, T + 1, rng)


def test_sample_clip_fixed_offset(real):
    clip = sample_clip(real, N, np.random.default_rng(0), offset=2)
    assert np.array_equal(clip.frames, real.frames[2:2 + N])


def test_shuffle_never_identity_and_uniform():
    # n = 3 leaves 5 non-identity permutations; 10000 draws should look uniform
    rng = np.random.default_rng(42)
    frames = np.arange(3)[:, None]
    counts = {}
    for _ in range(10_000):
        _, perm = shuffle_frames(frames, rng)
        assert not np.array_equal(perm, np.arange(3))
        counts[tuple(perm)] = counts.get(tuple(perm), 0) + 1
    assert len(counts) == 5
    stat, p = chisquare(list(counts.values()))
    assert p > 0.01


# -- perturbations -------------------------------------------------------------


@pytest.mark.parametrize("kind", PERTURBATION_KINDS)
@pytest.mark.parametrize("severity", [1, 3, 5])
def test_perturbations_preserve_shape_and_range(real, kind, severity):
    clip = sample_clip(real, N, np.random.default_rng(1), offset=0)
    spec = PerturbationSpec(kind, severity, seed=7)
    out = apply_perturbation(clip, spec)
    assert out.frames.shape == clip.frames.shape
    assert out.frames.dtype == np.float32
    assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0
    assert not np.array_equal(out.frames, clip.frames)
    again = apply_perturbation(clip, spec)
    assert np.array_equal(out.frames, again.frames)


@pytest.mark.parametrize("kind", PERTURBATION_KINDS)
def test_perturbation_severity_monotone_distortion(real, kind):
    # distortion (mean abs diff) should not decrease from severity 1 to 5
    clip = sample_clip(real, N, np.random.default_rng(1), offset=0)
    d1 = np.abs(apply_perturbation(clip, PerturbationSpec(kind, 1, 7)).frames
                - clip.frames).mean()
    d5 = np.abs(apply_perturbation(clip, PerturbationSpec(kind, 5, 7)).frames
                - clip.frames).mean()
    assert d5 > d1


def test_perturbation_validation():
    clip = FrameClip(frames=np.zeros((2, 3, 8, 8), dtype=np.float32))
    with pytest.raises(DataError):
        apply_perturbation(clip, PerturbationSpec("sepia", 1))
    with pytest.raises(DataError):
        apply_perturbation(clip, PerturbationSpec("blur", 6))


def test_saturation_moves_toward_gray(real):
    clip = sample_clip(real, N, np.random.default_rng(1), offset=0)
    out = apply_perturbation(clip, PerturbationSpec("saturation", 5, 7))
    spread = lambda x: (x.max(axis=1) - x.min(axis=1)).mean()
    assert spread(out.frames) < spread(clip.frames)


# -- storage and manifests ------------------------------------------------------


def test_video_roundtrip(tmp_path, real):
    fake = generate_fake_video(real, "region-splice", 1)
    for v in (real, fake):
        d = tmp_path / v.label
        write_video(v, d)
        back = read_video(d)
        assert np.array_equal(back.frames, v.frames)
        assert back.label == v.label
        assert back.forgery_kind == v.forgery_kind
        if v.splice_mask is None:
            assert back.splice_mask is None
        else:
            assert np.array_equal(back.splice_mask, v.splice_mask)
    with pytest.raises(DataError):
        read_video(tmp_path / "nothing")


def test_manifest_roundtrip_and_validation(tmp_path):
    m = DatasetManifest(entries=[
        ManifestEntry("a", "real", "none", "pretrain"),
        ManifestEntry("b", "fake", "temporal-jitter", "train"),
        ManifestEntry("c", "real", "none", "test"),
    ])
    p = tmp_path / "m.jsonl"
    write_manifest(m, p)
    back = read_manifest(p)
    assert back.entries == m.entries
    assert [e.path for e in back.split("train")] == ["b"]

    bad = DatasetManifest(entries=[ManifestEntry("x", "fake", "temporal-jitter",
                                                 "pretrain")])
    with pytest.raises(DataError, match="pretrain"):
        bad.validate()
    with pytest.raises(DataError):
        DatasetManifest(entries=[ManifestEntry("x", "real", "temporal-jitter",
                                               "train")]).validate()


def test_manifest_parse_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"path": "a", "label": "real", "forgery_kind": "none", "split": "test"}\n'
                 "{oops\n")
    with pytest.raises(DataError, match=":2:"):
        read_manifest(p)
    p.write_text('{"path": "a", "label": "real"}\n')
    with pytest.raises(DataError, match="missing fields"):
        read_manifest(p)


def test_generate_corpus_and_cache(tmp_path):
    cfg = profile_config("tiny")
    m = generate_corpus(cfg, tmp_path, seed=4)
    assert (tmp_path / "manifest.jsonl").exists()
    pre = m.split("pretrain")
    assert len(pre) == cfg.num_pretrain_videos
    assert all(e.label == "real" for e in pre)
    train = m.split("train")
    assert len(train) == cfg.num_finetune_real + 4 * cfg.num_finetune_fake_per_kind
    cache = VideoCache()
    v1 = cache.get(pre[0].path)
    assert cache.get(pre[0].path) is v1
    # regenerating with the same seed is byte-identical on disk
    header = json.loads((tmp_path / pre[0].path.split("/")[-1] / "header.json").read_text())
    assert header["label"] == "real"
