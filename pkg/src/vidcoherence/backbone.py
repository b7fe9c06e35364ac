"""Representation network: per-frame CNN encoder, token embedding, Transformer.

Frames are encoded independently into d_feature vectors, projected to d_model
tokens with a learned positional embedding (one token per frame), passed
through pre-LN Transformer blocks (MSA + MLP, residual connections) and mean
pooled into a clip representation.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.ndimage

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .optim import ParamStore, kaiming_uniform, normal_init


def init_encoder_params(store: ParamStore, cfg: RunConfig,
                        rng: np.random.Generator, dtype=np.float32) -> None:
    # input is RGB plus the difference to the previous frame: temporal
    # incoherence shows up as large or discontinuous difference channels
    c_prev = 6
    for i, c_out in enumerate(cfg.encoder_channels, start=1):
        fan_in = c_prev * 9
        store.add(f"encoder.conv{i}.weight",
                  kaiming_uniform(rng, (c_out, c_prev, 3, 3), fan_in, dtype))
        store.add(f"encoder.conv{i}.bias", np.zeros(c_out, dtype=dtype))
        c_prev = c_out
    # final feature normalization; keeps feature scale fixed so the masked
    # prediction objective cannot be satisfied by shrinking all features
    store.add("encoder.norm.gamma", np.ones(cfg.d_feature, dtype=dtype))
    store.add("encoder.norm.beta", np.zeros(cfg.d_feature, dtype=dtype))


def init_embedder_params(store: ParamStore, cfg: RunConfig,
                         rng: np.random.Generator, dtype=np.float32) -> None:
    store.add("embedder.proj.weight",
              kaiming_uniform(rng, (cfg.d_feature, cfg.d_model), cfg.d_feature, dtype))
    store.add("embedder.proj.bias", np.zeros(cfg.d_model, dtype=dtype))
    store.add("embedder.pos",
              normal_init(rng, (cfg.clip_len, cfg.d_model), cfg.pos_init_std, dtype))


def init_transformer_params(store: ParamStore, cfg: RunConfig,
                            rng: np.random.Generator, dtype=np.float32) -> None:
    d = cfg.d_model
    for k in range(cfg.n_blocks):
        p = f"transformer.block{k}"
        for name in ("q", "k", "v", "o"):
            store.add(f"{p}.attn.{name}.weight", kaiming_uniform(rng, (d, d), d, dtype))
            store.add(f"{p}.attn.{name}.bias", np.zeros(d, dtype=dtype))
        store.add(f"{p}.ln1.gamma", np.ones(d, dtype=dtype))
        store.add(f"{p}.ln1.beta", np.zeros(d, dtype=dtype))
        store.add(f"{p}.ln2.gamma", np.ones(d, dtype=dtype))
        store.add(f"{p}.ln2.beta", np.zeros(d, dtype=dtype))
        store.add(f"{p}.mlp.fc1.weight", kaiming_uniform(rng, (d, cfg.d_mlp), d, dtype))
        store.add(f"{p}.mlp.fc1.bias", np.zeros(cfg.d_mlp, dtype=dtype))
        store.add(f"{p}.mlp.fc2.weight", kaiming_uniform(rng, (cfg.d_mlp, d), cfg.d_mlp, dtype))
        store.add(f"{p}.mlp.fc2.bias", np.zeros(d, dtype=dtype))
    # pre-LN blocks leave the residual stream unnormalized; close with a norm
    store.add("transformer.norm.gamma", np.ones(d, dtype=dtype))
    store.add("transformer.norm.beta", np.zeros(d, dtype=dtype))


def multi_head_self_attention(tokens: Tensor, store: ParamStore, prefix: str,
                              heads: int) -> Tensor:
    """Standard scaled dot-product MSA over tokens of shape (B, n, d)."""
    b, n, d = tokens.shape
    if d % heads:
        raise ValueError(f"d_model {d} not divisible by {heads} heads")
    hd = d // heads

    def split(x: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(x, (b, n, heads, hd)), (0, 2, 1, 3))

    q = split(ad.linear(tokens, store[f"{prefix}.q.weight"], store[f"{prefix}.q.bias"]))
    k = split(ad.linear(tokens, store[f"{prefix}.k.weight"], store[f"{prefix}.k.bias"]))
    v = split(ad.linear(tokens, store[f"{prefix}.v.weight"], store[f"{prefix}.v.bias"]))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(attn, v)                                   # (B, h, n, hd)
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    return ad.linear(merged, store[f"{prefix}.o.weight"], store[f"{prefix}.o.bias"])


class Backbone:
    """Parameter bundle plus forward ops for the representation network."""

    def __init__(self, cfg: RunConfig, store: ParamStore):
        self.cfg = cfg
        self.store = store

    @classmethod
    def init(cls, cfg: RunConfig, seed: int, dtype=np.float32) -> "Backbone":
        rng = np.random.default_rng(seed)
        store = ParamStore()
        init_encoder_params(store, cfg, rng, dtype)
        init_embedder_params(store, cfg, rng, dtype)
        init_transformer_params(store, cfg, rng, dtype)
        return cls(cfg, store)

    # -- encoder -----------------------------------------------------------

    @staticmethod
    def _prepare_clips(raw: np.ndarray) -> np.ndarray:
        """(B, n, 3, H, W) raw clips -> (B, n, 6, H, W) network input.

        Pure data preprocessing (inputs carry no gradients):
        - per-clip, per-channel standardization: uniform brightness/contrast
          changes are appearance, not evidence of forgery, and are cancelled
          exactly;
        - frame-difference channels, computed within the clip only (the first
          frame's difference is zero): temporal incoherence shows up as large
          or discontinuous differences;
        - a 3x3 box blur on the difference channels: genuine motion and
          order breaks are spatially coherent, while per-pixel corruption
          averages out.
        """
        mean = raw.mean(axis=(1, 3, 4), keepdims=True)
        std = raw.std(axis=(1, 3, 4), keepdims=True)
        # max (not +eps) keeps the affine invariance exact for non-flat clips
        x = (raw - mean) / np.maximum(std, 1e-3)
        delta = np.zeros_like(x)
        delta[:, 1:] = x[:, 1:] - x[:, :-1]
        delta = scipy.ndimage.uniform_filter(
            delta, size=(1, 1, 1, 3, 3), mode="nearest")
        return np.concatenate([x, delta], axis=2)

    def encode_frames(self, frames, keep_maps: bool = False):
        """Clip frames to per-frame features: (n, 3, H, W) -> (n, d_feature).

        The n axis is temporal: each frame is paired with its difference to
        the previous frame before the (otherwise per-frame) convolutions.
        keep_maps additionally returns the last conv activation (pre-pool),
        used for saliency.
        """
        raw = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
        if raw.ndim != 4 or raw.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) frames, got {raw.shape}")
        x = Tensor(self._prepare_clips(raw[None])[0])
        return self._encode_core(x, keep_maps)

    def _encode_core(self, x: Tensor, keep_maps: bool = False):
        """(N, 6, H, W) frame+difference stacks -> (N, d_feature)."""
        s = self.store
        n_convs = len(self.cfg.encoder_channels)
        last_maps = None
        for i in range(1, n_convs + 1):
            x = ad.conv2d(x, s[f"encoder.conv{i}.weight"], s[f"encoder.conv{i}.bias"],
                          stride=1, padding=1)
            x = ad.gelu(x)
            if i == n_convs:
                last_maps = x
            x = ad.avg_pool2d(x, 2)
        feats = ad.tmean(x, axis=(2, 3))                       # global average pool
        feats = ad.layer_norm(feats, s["encoder.norm.gamma"],
                              s["encoder.norm.beta"], self.cfg.ln_eps)
        if keep_maps:
            return feats, last_maps
        return feats

    # -- tokens ------------------------------------------------------------

    def embed_tokens(self, features: Tensor) -> Tensor:
        """(B, n, d_feature) -> (B, n, d_model) with positional embedding."""
        n = features.shape[-2]
        if n > self.cfg.clip_len:
            raise ValueError(f"sequence length {n} exceeds max {self.cfg.clip_len}")
        s = self.store
        proj = ad.linear(features, s["embedder.proj.weight"], s["embedder.proj.bias"])
        pos = s["embedder.pos"]
        if n != pos.shape[0]:
            pos = pos[:n]
        return ad.add(proj, pos)

    def transformer_forward(self, z0: Tensor) -> Tensor:
        """Apply all pre-LN blocks: z = z + MSA(LN(z)); z = z + MLP(LN(z))."""
        cfg = self.cfg
        s = self.store
        z = z0
        for k in range(cfg.n_blocks):
            p = f"transformer.block{k}"
            h = ad.layer_norm(z, s[f"{p}.ln1.gamma"], s[f"{p}.ln1.beta"], cfg.ln_eps)
            z = ad.add(z, multi_head_self_attention(h, s, f"{p}.attn", cfg.n_heads))
            h = ad.layer_norm(z, s[f"{p}.ln2.gamma"], s[f"{p}.ln2.beta"], cfg.ln_eps)
            h = ad.linear(h, s[f"{p}.mlp.fc1.weight"], s[f"{p}.mlp.fc1.bias"])
            h = ad.gelu(h)
            h = ad.linear(h, s[f"{p}.mlp.fc2.weight"], s[f"{p}.mlp.fc2.bias"])
            z = ad.add(z, h)
        return ad.layer_norm(z, s["transformer.norm.gamma"],
                             s["transformer.norm.beta"], cfg.ln_eps)

    @staticmethod
    def pool_representation(tokens: Tensor) -> Tensor:
        """Mean over the token axis: (B, n, d) -> (B, d) or (n, d) -> (d,)."""
        return ad.tmean(tokens, axis=-2)

    # -- convenience -------------------------------------------------------

    def frame_features_batch(self, clips: np.ndarray | Tensor) -> Tensor:
        """(B, n, 3, H, W) clips -> (B, n, d_feature) features.

        Frame differences are computed per clip (never across clip
        boundaries) before the frames are flattened for the convolutions.
        """
        raw = clips.data if isinstance(clips, Tensor) else np.asarray(clips)
        prepared = self._prepare_clips(raw)
        b, n = prepared.shape[0], prepared.shape[1]
        frames = Tensor(prepared.reshape((b * n,) + prepared.shape[2:]))
        feats = self._encode_core(frames)
        return ad.reshape(feats, (b, n, feats.shape[-1]))

    def tokens_from_features(self, features: Tensor) -> Tensor:
        return self.transformer_forward(self.embed_tokens(features))

    def represent(self, clips: np.ndarray | Tensor) -> Tensor:
        """(B, n, 3, H, W) -> (B, d_model) pooled clip representations."""
        feats = self.frame_features_batch(clips)
        return self.pool_representation(self.tokens_from_features(feats))
