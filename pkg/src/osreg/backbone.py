"""Two-scale feature extraction from a grayscale image.

A stride-2 stem followed by two stride-2 residual blocks reaches the
stride-8 coarse map; a lateral 1x1 merge with an upsampled top-down
path forms the stride-2 fine map.  Per-channel instance normalization
(spatial mean/var) replaces batch statistics, which are meaningless at
desk-scale batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import GeometryError
from .init import kaiming_uniform, ones, zeros

INSTANCE_NORM_EPS = 1e-5


@dataclass
class BackboneConfig:
    d_f: int = 32
    d_c: int = 64
    stem_width: int = 16
    mid_width: int = 32
    shared_weights: bool = True

    def validate(self) -> list[str]:
        problems = []
        if min(self.d_f, self.d_c, self.stem_width, self.mid_width) < 1:
            problems.append("backbone widths must be positive")
        if self.d_c < self.d_f:
            problems.append(f"d_c ({self.d_c}) must be >= d_f ({self.d_f})")
        return problems


@dataclass
class FeaturePyramid:
    """Fine (stride-2) and coarse (stride-8) feature maps of one image."""

    fine: Tensor
    coarse: Tensor


def _conv_params(rng, prefix, c_out, c_in, k):
    return {
        f"{prefix}.w": kaiming_uniform(rng, (c_out, c_in, k, k), fan_in=c_in * k * k),
        f"{prefix}.b": zeros((c_out,)),
    }


def _norm_params(prefix, channels):
    return {f"{prefix}.gain": ones((channels, 1, 1)), f"{prefix}.bias": zeros((channels, 1, 1))}


def init_backbone_params(cfg: BackboneConfig, rng: np.random.Generator, prefix: str = "backbone") -> dict:
    w1, w2 = cfg.stem_width, cfg.mid_width
    p = {}
    p.update(_conv_params(rng, f"{prefix}/stem", w1, 1, 3))
    p.update(_norm_params(f"{prefix}/stem.norm", w1))
    for name, cin, cout in ((f"{prefix}/block1", w1, w2), (f"{prefix}/block2", w2, cfg.d_c)):
        p.update(_conv_params(rng, f"{name}.conv1", cout, cin, 3))
        p.update(_norm_params(f"{name}.norm1", cout))
        p.update(_conv_params(rng, f"{name}.conv2", cout, cout, 3))
        p.update(_norm_params(f"{name}.norm2", cout))
        p.update(_conv_params(rng, f"{name}.skip", cout, cin, 1))
    p.update(_conv_params(rng, f"{prefix}/lateral", cfg.d_f, w1, 1))
    p.update(_conv_params(rng, f"{prefix}/topdown", cfg.d_f, cfg.d_c, 1))
    p.update(_conv_params(rng, f"{prefix}/fine_out", cfg.d_f, cfg.d_f, 3))
    p.update(_norm_params(f"{prefix}/fine_out.norm", cfg.d_f))
    return p


def _conv(x, params, prefix, stride=1, pad=0):
    y = ad.conv2d(x, params[f"{prefix}.w"], stride=stride, pad=pad)
    return ad.add(y, ad.reshape(params[f"{prefix}.b"], (-1, 1, 1)))


def instance_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = INSTANCE_NORM_EPS) -> Tensor:
    """Normalize each channel of [C,H,W] by its spatial mean and variance."""
    return ad.instance_norm(x, gain, bias, eps)


def _norm(x, params, prefix):
    return instance_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def _res_block(x, params, prefix):
    y = ad.relu(_norm(_conv(x, params, f"{prefix}.conv1", stride=2, pad=1), params, f"{prefix}.norm1"))
    y = _norm(_conv(y, params, f"{prefix}.conv2", stride=1, pad=1), params, f"{prefix}.norm2")
    skip = _conv(x, params, f"{prefix}.skip", stride=2, pad=0)
    return ad.relu(ad.add(y, skip))


def extract(image: Tensor, cfg: BackboneConfig, params: dict, prefix: str = "backbone") -> FeaturePyramid:
    """Compute the (fine, coarse) feature pyramid of a [1,H,W] image.

    H and W must be divisible by 8; pixel values are expected in [0,1].
    With shared weights, the same ``params`` serve both modalities.
    """
    if image.ndim != 3 or image.shape[0] != 1:
        raise GeometryError(f"extract expects a [1,H,W] image, got {image.shape}")
    _, h, w = image.shape
    if h % 8 or w % 8:
        raise GeometryError(f"image dims must be divisible by 8, got {h}x{w}")

    stem = ad.relu(_norm(_conv(image, params, f"{prefix}/stem", stride=2, pad=1), params, f"{prefix}/stem.norm"))
    mid = _res_block(stem, params, f"{prefix}/block1")
    coarse = _res_block(mid, params, f"{prefix}/block2")

    top = ad.upsample_nearest(_conv(coarse, params, f"{prefix}/topdown"), 4)
    lat = _conv(stem, params, f"{prefix}/lateral")
    # normalized fine features keep the fine-stage similarity logits in a
    # range where the heatmap softmax stays trainable
    fine = _norm(
        _conv(ad.add(lat, top), params, f"{prefix}/fine_out", stride=1, pad=1),
        params,
        f"{prefix}/fine_out.norm",
    )
    return FeaturePyramid(fine=fine, coarse=coarse)
