"""Self-supervised objectives: masking, reconstruction loss, contrastive loss."""

import math

import numpy as np
import pytest

from vidcoherence.autodiff import Tensor
from vidcoherence.backbone import Backbone
from vidcoherence.config import profile_config
from vidcoherence.pretrain import (ContrastiveBatch, MaskPlan, PretrainError,
                                   build_contrastive_batch, cosine_sim,
                                   cosine_sim_matrix, decode_features,
                                   init_decoder_params, mask_features,
                                   mask_keep_matrix, masked_index_set, pretrain,
                                   spm_loss, ssl_step_losses, tcm_loss,
                                   total_ssl_loss)
from vidcoherence.videodata import (DatasetManifest, ManifestEntry,
                                    generate_real_video, write_video)


# -- masked-position set -------------------------------------------------------


def test_masked_index_set_worked_example():
    # A masks positions {1, 3}; B masks {2, 3, 4}; unmasked in A but masked
    # in B gives {2, 4}
    a = np.array([True, False, True, False, False])
    b = np.array([False, True, True, True, False])
    assert masked_index_set(a, b) == (2, 4)


def test_masked_index_set_validates_lengths():
    with pytest.raises(PretrainError):
        masked_index_set(np.zeros(3, bool), np.zeros(4, bool))


def test_masked_index_set_disjoint_and_empty():
    z = np.zeros(4, bool)
    assert masked_index_set(z, z) == ()
    assert masked_index_set(z, ~z) == (1, 2, 3, 4)


# -- masking --------------------------------------------------------------------


def test_mask_features_counts_and_zeroing():
    feats = np.ones((8, 5), dtype=np.float32)
    masked, plan = mask_features(feats, 0.5, np.random.default_rng(0))
    assert len(plan.masked_indices) == 4          # round(8 * 0.5)
    assert all(1 <= i <= 8 for i in plan.masked_indices)
    for i in range(8):
        row = masked[i]
        if i + 1 in plan.masked_indices:
            assert np.all(row == 0.0)
        else:
            assert np.all(row == 1.0)
    assert np.all(feats == 1.0)  # input untouched


def test_mask_features_rejects_degenerate_ratios():
    feats = np.ones((4, 2), dtype=np.float32)
    with pytest.raises(PretrainError):
        mask_features(feats, 0.0, np.random.default_rng(0))
    with pytest.raises(PretrainError):
        mask_features(feats, 1.0, np.random.default_rng(0))
    with pytest.raises(PretrainError):
        mask_features(np.ones((2, 2), np.float32), 0.1, np.random.default_rng(0))


def test_mask_keep_matrix_matches_plan():
    plan = MaskPlan(masked_indices=(1, 4), alpha=0.5)
    keep = mask_keep_matrix(4, plan)
    np.testing.assert_array_equal(keep[:, 0], [0.0, 1.0, 1.0, 0.0])


# -- reconstruction loss ----------------------------------------------------------


def test_spm_loss_hand_value():
    # one masked frame with constant error e: loss = mean_d(e^2) = e^2
    pred = Tensor(np.zeros((1, 4, 3), dtype=np.float64))
    target = np.zeros((1, 4, 3))
    target[0, 1] = 0.5
    plans = [MaskPlan(masked_indices=(2,), alpha=0.25)]
    loss = spm_loss(pred, Tensor(target), plans)
    assert loss.item() == pytest.approx(0.25)


def test_spm_loss_ignores_unmasked_errors():
    pred = Tensor(np.zeros((1, 4, 3)))
    target = np.zeros((1, 4, 3))
    target[0, 0] = 100.0   # unmasked frame: must not contribute
    target[0, 2] = 1.0
    loss = spm_loss(pred, Tensor(target), [MaskPlan(masked_indices=(3,), alpha=0.25)])
    assert loss.item() == pytest.approx(1.0)


def test_spm_loss_averages_over_all_masked_frames():
    pred = Tensor(np.zeros((2, 4, 2)))
    target = np.zeros((2, 4, 2))
    target[0, 0] = 1.0
    target[1, 1] = 2.0
    target[1, 2] = 2.0
    plans = [MaskPlan((1,), 0.25), MaskPlan((2, 3), 0.5)]
    # per-frame feature MSEs: 1, 4, 4 -> mean over 3 masked frames = 3
    assert spm_loss(pred, Tensor(target), plans).item() == pytest.approx(3.0)


def test_spm_loss_validates_plans():
    with pytest.raises(PretrainError):
        spm_loss(Tensor(np.zeros((2, 4, 2))), Tensor(np.zeros((2, 4, 2))),
                 [MaskPlan((1,), 0.25)])
    with pytest.raises(PretrainError):
        spm_loss(Tensor(np.zeros((1, 4, 2))), Tensor(np.zeros((1, 4, 2))),
                 [MaskPlan((), 0.25)])


# -- cosine similarity --------------------------------------------------------------


def test_cosine_sim_basic_values():
    a = Tensor(np.array([1.0, 0.0]))
    assert cosine_sim(a, Tensor(np.array([2.0, 0.0]))).item() == pytest.approx(1.0)
    assert cosine_sim(a, Tensor(np.array([0.0, 3.0]))).item() == pytest.approx(0.0)
    assert cosine_sim(a, Tensor(np.array([-1.0, 0.0]))).item() == pytest.approx(-1.0)


def test_cosine_sim_zero_vector_guard():
    a = Tensor(np.array([1.0, 0.0]))
    z = Tensor(np.zeros(2))
    assert cosine_sim(a, z, eps=1e-8).item() == 0.0


def test_cosine_sim_matrix_agrees_with_pairwise():
    rng = np.random.default_rng(0)
    za = rng.standard_normal((3, 5))
    zb = rng.standard_normal((4, 5))
    mat = cosine_sim_matrix(Tensor(za), Tensor(zb)).data
    for i in range(3):
        for j in range(4):
            assert mat[i, j] == pytest.approx(
                cosine_sim(Tensor(za[i]), Tensor(zb[j])).item(), abs=1e-12)


# -- contrastive loss ----------------------------------------------------------------


def test_tcm_loss_equal_similarities_is_ln2():
    # one negative with the same similarity as the positive: -ln(1/2) = ln 2
    sim_pos = Tensor(np.array([0.3]))
    sim_neg = Tensor(np.array([[0.3]]))
    loss = tcm_loss(sim_pos, sim_neg, tau=0.5)
    assert abs(loss.item() - math.log(2.0)) < 1e-9


def test_tcm_loss_separated_similarities():
    # s+ = 1, s- = -1, tau = 0.5: loss = ln(1 + e^-4)
    loss = tcm_loss(Tensor(np.array([1.0])), Tensor(np.array([[-1.0]])), tau=0.5)
    assert loss.item() == pytest.approx(math.log(1.0 + math.exp(-4.0)), abs=1e-12)
    assert loss.item() == pytest.approx(0.01815, abs=5e-6)


def test_tcm_loss_mean_over_anchors_and_validation():
    l1 = tcm_loss(Tensor(np.array([0.3])), Tensor(np.array([[0.3]])), 0.5).item()
    l2 = tcm_loss(Tensor(np.array([1.0])), Tensor(np.array([[-1.0]])), 0.5).item()
    both = tcm_loss(Tensor(np.array([0.3, 1.0])),
                    Tensor(np.array([[0.3], [-1.0]])), 0.5).item()
    assert both == pytest.approx((l1 + l2) / 2.0, abs=1e-12)
    with pytest.raises(PretrainError):
        tcm_loss(Tensor(np.array([0.3])), Tensor(np.zeros((1, 0))), 0.5)


def test_total_loss_weighting():
    s = Tensor(np.array(2.0))
    t = Tensor(np.array(3.0))
    assert total_ssl_loss(s, t, 1.0, 0.5).item() == pytest.approx(3.5)
    assert total_ssl_loss(s, t, 0.0, 0.5).item() == pytest.approx(1.5)
    assert total_ssl_loss(s, t, 1.0, 0.0).item() == pytest.approx(2.0)
    assert total_ssl_loss(None, None, 1.0, 1.0).item() == 0.0


# -- decoder -------------------------------------------------------------------------


def test_decoder_output_shape_and_locality():
    cfg = profile_config("tiny")
    from vidcoherence.optim import ParamStore
    store = ParamStore()
    init_decoder_params(store, cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    tokens = rng.standard_normal((2, cfg.clip_len, cfg.d_model)).astype(np.float32)
    out = decode_features(Tensor(tokens), store).data
    assert out.shape == (2, cfg.clip_len, cfg.d_feature)
    # kernel 3 along the token axis: changing token i only affects outputs i-1..i+1
    tokens2 = tokens.copy()
    tokens2[0, 4] += 1.0
    out2 = decode_features(Tensor(tokens2), store).data
    changed = np.any(out != out2, axis=-1)[0]
    assert changed[3] and changed[4] and changed[5]
    assert not changed[[0, 1, 2, 6, 7]].any()


# -- batches and the training loop ------------------------------------------------------


def make_manifest(tmp_path, n_videos=4, length=16, label="real",
                  split="pretrain"):
    entries = []
    for i in range(n_videos):
        v = generate_real_video(100 + i, length, 32, 32, 8)
        v.label = label
        if label == "fake":
            v.forgery_kind = "temporal-jitter"
        d = tmp_path / f"v{i}"
        write_video(v, d)
        entries.append(ManifestEntry(str(d), label,
                                     "none" if label == "real" else "temporal-jitter",
                                     split))
    return DatasetManifest(entries=entries)


def test_build_contrastive_batch_shapes_and_perms():
    cfg = profile_config("tiny")
    videos = [generate_real_video(s, 16, 32, 32, 8) for s in range(3)]
    batch = build_contrastive_batch(videos, cfg, np.random.default_rng(0))
    n = cfg.clip_len
    assert batch.anchor_clips.shape == (3, n, 3, cfg.frame_size, cfg.frame_size)
    assert batch.positive_clips.shape == batch.anchor_clips.shape
    assert len(batch.shuffle_perms) == 3
    for perm in batch.shuffle_perms:
        assert sorted(perm) == list(range(n))
        assert not np.array_equal(perm, np.arange(n))
    with pytest.raises(PretrainError):
        build_contrastive_batch(videos[:1], cfg, np.random.default_rng(0))


def test_ssl_step_losses_respect_lambda_switches():
    cfg = profile_config("tiny")
    bb = Backbone.init(cfg, 0)
    init_decoder_params(bb.store, cfg, np.random.default_rng(1))
    videos = [generate_real_video(s, 16, 32, 32, 8) for s in range(3)]
    batch = build_contrastive_batch(videos, cfg, np.random.default_rng(0))

    total, ls, lt = ssl_step_losses(bb, bb.store, batch, cfg, np.random.default_rng(2))
    assert ls is not None and lt is not None
    assert total.item() == pytest.approx(
        cfg.lambda_spm * ls.item() + cfg.lambda_tcm * lt.item(), rel=1e-6)

    cfg.lambda_tcm = 0.0
    total2, ls2, lt2 = ssl_step_losses(bb, bb.store, batch, cfg,
                                       np.random.default_rng(2))
    assert lt2 is None and ls2 is not None


def test_pretrain_rejects_fakes_in_pretrain_split(tmp_path):
    cfg = profile_config("tiny")
    manifest = make_manifest(tmp_path, n_videos=3, label="fake")
    with pytest.raises(PretrainError, match=str(tmp_path / "v0")):
        pretrain(manifest, cfg, seed=0)


def test_pretrain_runs_and_decreases_loss(tmp_path):
    cfg = profile_config("tiny")
    manifest = make_manifest(tmp_path, n_videos=4)
    log = tmp_path / "log.jsonl"
    pretrain(manifest, cfg, seed=0, log_path=log, steps=5)
    import json
    records = [json.loads(line) for line in log.read_text().splitlines()]
    assert len(records) == 5
    assert {"step", "loss_total", "loss_spm", "loss_tcm", "lr"} <= set(records[0])
    assert all(np.isfinite(r["loss_total"]) for r in records)
