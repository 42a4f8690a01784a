"""Text-assisted enhancement of coarse visual features.

Two parallel branches run over the flattened coarse maps: cross-attention
from visual cells to a projected category-embedding library, and stacked
self/cross attention between the two images.  A per-position three-layer
MLP fuses the branches into the features used for coarse matching.

Each attention application wraps the scaled-dot-product core in a
standard block (residual add plus a two-layer position-wise feed-forward
with residual); the bare core is exposed separately because its contract
(convex combination of value rows) is what the oracle tests pin down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .init import ones, xavier_uniform, zeros
from .text_library import ValidationError

TEXT_STAGES = ("none", "coarse", "fine", "both")


@dataclass
class EnhanceConfig:
    d_c: int = 64
    d_text: int = 64
    heads: int = 4
    n_tafe: int = 2
    ffn_mult: int = 2
    text_stage: str = "coarse"

    def validate(self) -> list[str]:
        problems = []
        if self.heads < 1 or self.d_c % self.heads:
            problems.append(f"d_c ({self.d_c}) must be divisible by heads ({self.heads})")
        if self.n_tafe < 1:
            problems.append(f"n_tafe must be >= 1, got {self.n_tafe}")
        if self.ffn_mult < 1:
            problems.append(f"ffn_mult must be >= 1, got {self.ffn_mult}")
        if self.text_stage not in TEXT_STAGES:
            problems.append(f"text_stage must be one of {TEXT_STAGES}, got {self.text_stage!r}")
        return problems

    @property
    def text_at_coarse(self) -> bool:
        return self.text_stage in ("coarse", "both")

    @property
    def text_at_fine(self) -> bool:
        return self.text_stage in ("fine", "both")


@dataclass
class EnhancedFeatures:
    """Branch outputs for one image's coarse map (flattened to [n, d_c])."""

    text_branch: Tensor | None
    visual_branch: Tensor
    fused: Tensor
    self_attended: Tensor


def init_attn_params(rng: np.random.Generator, d: int, ffn_mult: int, prefix: str) -> dict:
    d_ff = ffn_mult * d
    return {
        f"{prefix}.wq": xavier_uniform(rng, (d, d), d, d),
        f"{prefix}.wk": xavier_uniform(rng, (d, d), d, d),
        f"{prefix}.wv": xavier_uniform(rng, (d, d), d, d),
        f"{prefix}.ln1_g": ones((d,)),
        f"{prefix}.ln1_b": zeros((d,)),
        f"{prefix}.ln2_g": ones((d,)),
        f"{prefix}.ln2_b": zeros((d,)),
        f"{prefix}.ffn_w1": xavier_uniform(rng, (d, d_ff), d, d_ff),
        f"{prefix}.ffn_b1": zeros((d_ff,)),
        f"{prefix}.ffn_w2": xavier_uniform(rng, (d_ff, d), d_ff, d),
        f"{prefix}.ffn_b2": zeros((d,)),
    }


def init_tafe_params(cfg: EnhanceConfig, rng: np.random.Generator, prefix: str = "tafe") -> dict:
    p = {}
    if cfg.text_at_coarse:
        p[f"{prefix}/text_proj.w"] = xavier_uniform(
            rng, (cfg.d_text, cfg.d_c), cfg.d_text, cfg.d_c
        )
        p.update(init_attn_params(rng, cfg.d_c, cfg.ffn_mult, f"{prefix}/text_attn"))
    for i in range(cfg.n_tafe):
        p.update(init_attn_params(rng, cfg.d_c, cfg.ffn_mult, f"{prefix}/layer{i}/self"))
        p.update(init_attn_params(rng, cfg.d_c, cfg.ffn_mult, f"{prefix}/layer{i}/cross"))
    d = cfg.d_c
    p[f"{prefix}/fuse.w1"] = xavier_uniform(rng, (2 * d, d), 2 * d, d)
    p[f"{prefix}/fuse.b1"] = zeros((d,))
    p[f"{prefix}/fuse.w2"] = xavier_uniform(rng, (d, d), d, d)
    p[f"{prefix}/fuse.b2"] = zeros((d,))
    p[f"{prefix}/fuse.w3"] = xavier_uniform(rng, (d, d), d, d)
    p[f"{prefix}/fuse.b3"] = zeros((d,))
    return p


def _split_heads(t: Tensor, heads: int, dh: int) -> Tensor:
    """[..., n, h*dh] -> [..., h, n, dh] so heads ride the batch dims."""
    if t.ndim == 2:
        n = t.shape[0]
        return ad.transpose(ad.reshape(t, (n, heads, dh)), (1, 0, 2))
    b, n, _ = t.shape
    return ad.transpose(ad.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))


def _merge_heads(t: Tensor) -> Tensor:
    if t.ndim == 3:
        h, n, dh = t.shape
        return ad.reshape(ad.transpose(t, (1, 0, 2)), (n, h * dh))
    b, h, n, dh = t.shape
    return ad.reshape(ad.transpose(t, (0, 2, 1, 3)), (b, n, h * dh))


def attn_core(f_q: Tensor, f_k: Tensor, params: dict, prefix: str, heads: int = 4) -> Tensor:
    """Pre-residual multi-head attention: Softmax(QK^T/sqrt(d_h))V per head.

    Query rows attend over key/value rows; each output row is a convex
    combination of value rows within each head.  Accepts [n, d] inputs
    or batched [B, n, d] stacks; heads are vectorized as batch dims.
    """
    d = f_q.shape[-1]
    if f_k.shape[-1] != d:
        raise DimensionError(f"attention width mismatch: queries {f_q.shape}, keys {f_k.shape}")
    if d % heads:
        raise DimensionError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    q = _split_heads(ad.matmul(f_q, params[f"{prefix}.wq"]), heads, dh)
    k = _split_heads(ad.matmul(f_k, params[f"{prefix}.wk"]), heads, dh)
    v = _split_heads(ad.matmul(f_k, params[f"{prefix}.wv"]), heads, dh)
    logits = ad.scale(ad.matmul(q, ad.swap_last(k)), 1.0 / np.sqrt(dh))
    return _merge_heads(ad.matmul(ad.softmax(logits, axis=-1), v))


def attn_block(f_q: Tensor, f_k: Tensor, params: dict, prefix: str, heads: int = 4) -> Tensor:
    """Attention core wrapped with residual add and a feed-forward sublayer.

    Pre-norm form: queries and keys pass through a shared layer norm
    before the core, and the feed-forward input is normalized too.
    Without the norms the siamese cross-attention stack is free to
    collapse every cell onto one feature vector, which stalls training
    at the uniform-confidence plateau.
    """
    nq = ad.layer_norm(f_q, params[f"{prefix}.ln1_g"], params[f"{prefix}.ln1_b"])
    nk = ad.layer_norm(f_k, params[f"{prefix}.ln1_g"], params[f"{prefix}.ln1_b"])
    y = ad.add(f_q, attn_core(nq, nk, params, prefix, heads))
    ny = ad.layer_norm(y, params[f"{prefix}.ln2_g"], params[f"{prefix}.ln2_b"])
    hidden = ad.relu(ad.add(ad.matmul(ny, params[f"{prefix}.ffn_w1"]), params[f"{prefix}.ffn_b1"]))
    ffn = ad.add(ad.matmul(hidden, params[f"{prefix}.ffn_w2"]), params[f"{prefix}.ffn_b2"])
    return ad.add(y, ffn)


def project_library(library: Tensor, params: dict, key: str) -> Tensor:
    """Bridge text embeddings [K, d_text] to the visual width."""
    return ad.matmul(library, params[key])


def text_enhance(
    fc: Tensor, library: Tensor, params: dict, cfg: EnhanceConfig, prefix: str = "tafe"
) -> Tensor:
    """Cross-attend flattened coarse cells to the projected text library."""
    if library.shape[0] < 1:
        raise ValidationError("text library is empty")
    proj = project_library(library, params, f"{prefix}/text_proj.w")
    return attn_block(fc, proj, params, f"{prefix}/text_attn", cfg.heads)


def visual_interact(
    fo: Tensor, fs: Tensor, params: dict, cfg: EnhanceConfig, prefix: str = "tafe"
) -> tuple:
    """Stacked self-attention within each image and cross-attention between them.

    Returns (optical branch, SAR branch, optical self-attended, SAR
    self-attended); the self-attended maps are the final layer's
    intermediates.
    """
    if fo.shape[-1] != fs.shape[-1]:
        raise DimensionError(f"visual widths disagree: {fo.shape} vs {fs.shape}")
    bar_o = bar_s = None
    for i in range(cfg.n_tafe):
        self_p = f"{prefix}/layer{i}/self"
        cross_p = f"{prefix}/layer{i}/cross"
        bar_o = attn_block(fo, fo, params, self_p, cfg.heads)
        bar_s = attn_block(fs, fs, params, self_p, cfg.heads)
        fo = attn_block(bar_o, bar_s, params, cross_p, cfg.heads)
        fs = attn_block(bar_s, bar_o, params, cross_p, cfg.heads)
    return fo, fs, bar_o, bar_s


def fuse(f_cv: Tensor, f_ct: Tensor, params: dict, prefix: str = "tafe") -> Tensor:
    """Per-position three-layer MLP over channel-concatenated branches."""
    if f_cv.shape != f_ct.shape:
        raise DimensionError(f"fuse branches disagree: {f_cv.shape} vs {f_ct.shape}")
    x = ad.concat_channels(f_cv, f_ct)
    h1 = ad.relu(ad.add(ad.matmul(x, params[f"{prefix}/fuse.w1"]), params[f"{prefix}/fuse.b1"]))
    h2 = ad.relu(ad.add(ad.matmul(h1, params[f"{prefix}/fuse.w2"]), params[f"{prefix}/fuse.b2"]))
    return ad.add(ad.matmul(h2, params[f"{prefix}/fuse.w3"]), params[f"{prefix}/fuse.b3"])


def enhance_pair(
    fo: Tensor,
    fs: Tensor,
    library: Tensor | None,
    params: dict,
    cfg: EnhanceConfig,
    prefix: str = "tafe",
) -> tuple:
    """Run both branches and fuse them for each image.

    ``library`` may be None only when the text branch is disabled at the
    coarse stage; the fusion then sees a zero text branch, which keeps
    the fused width identical across ablation arms.
    """
    cv_o, cv_s, bar_o, bar_s = visual_interact(fo, fs, params, cfg, prefix)
    if cfg.text_at_coarse:
        if library is None:
            raise ValidationError("text_stage requires a text library at the coarse stage")
        ct_o = text_enhance(fo, library, params, cfg, prefix)
        ct_s = text_enhance(fs, library, params, cfg, prefix)
    else:
        ct_o = Tensor(np.zeros(cv_o.shape, dtype=cv_o.dtype))
        ct_s = Tensor(np.zeros(cv_s.shape, dtype=cv_s.dtype))
    out_o = EnhancedFeatures(
        text_branch=ct_o if cfg.text_at_coarse else None,
        visual_branch=cv_o,
        fused=fuse(cv_o, ct_o, params, prefix),
        self_attended=bar_o,
    )
    out_s = EnhancedFeatures(
        text_branch=ct_s if cfg.text_at_coarse else None,
        visual_branch=cv_s,
        fused=fuse(cv_s, ct_s, params, prefix),
        self_attended=bar_s,
    )
    return out_o, out_s
