"""Training losses: focal coarse loss, weighted fine loss, combined objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

P_CLAMP_EPS = 1e-6  # numerical floor before logs


class ContractError(ValueError):
    """Loss inputs violate their agreed shapes."""


@dataclass
class LossConfig:
    alpha_f: float = 0.25
    gamma: float = 2.0
    lambda_c_pos: float = 1.0
    lambda_c_neg: float = 1.0
    lambda_c: float = 1.0
    lambda_f: float = 1.0
    neg_subsample: int = 8  # max negatives per positive, uniform seeded

    def validate(self) -> list[str]:
        problems = []
        if not (0 < self.alpha_f < 1):
            problems.append(f"alpha_f must be in (0,1), got {self.alpha_f}")
        if self.gamma < 0:
            problems.append(f"gamma must be >= 0, got {self.gamma}")
        for name in ("lambda_c_pos", "lambda_c_neg", "lambda_c", "lambda_f"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.neg_subsample < 0:
            problems.append(f"neg_subsample must be >= 0, got {self.neg_subsample}")
        return problems


def focal_coarse_loss(confidence: Tensor, positives: np.ndarray, negatives: np.ndarray, cfg: LossConfig) -> Tensor:
    """Focal sums over positive and negative cell pairs of the confidence matrix.

    Positives are pushed toward confidence 1 with modulation (1-P)^gamma,
    negatives toward 0 with modulation P^gamma; both terms are sums, not
    means.  Confidences are clamped away from {0,1} before the logs.
    An empty positive set leaves only the negative term, which is valid.
    """
    n, m = confidence.shape
    terms = []
    if len(positives):
        flat = positives[:, 0] * m + positives[:, 1]
        p = ad.clamp(ad.take_flat(confidence, flat), P_CLAMP_EPS, 1.0 - P_CLAMP_EPS)
        one_minus = ad.add_scalar(ad.neg(p), 1.0)
        per = ad.mul(ad.pow_const(one_minus, cfg.gamma), ad.log(p))
        terms.append(ad.scale(ad.tsum(per), -cfg.alpha_f * cfg.lambda_c_pos))
    if len(negatives):
        flat = negatives[:, 0] * m + negatives[:, 1]
        p = ad.clamp(ad.take_flat(confidence, flat), P_CLAMP_EPS, 1.0 - P_CLAMP_EPS)
        one_minus = ad.add_scalar(ad.neg(p), 1.0)
        per = ad.mul(ad.pow_const(p, cfg.gamma), ad.log(one_minus))
        terms.append(ad.scale(ad.tsum(per), -cfg.alpha_f * cfg.lambda_c_neg))
    if not terms:
        return Tensor(np.zeros((), dtype=confidence.dtype))
    return terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])


def fine_loss(preds: Tensor, targets: np.ndarray, weights: np.ndarray, valid_idx: np.ndarray) -> tuple[Tensor, int]:
    """Mean weighted squared offset error over the valid fine samples.

    ``preds`` [K,2] stays on the tape; targets and weights are fixed
    coefficients.  Returns (loss, |valid|); an empty valid set yields a
    zero loss with count 0 so the caller can tell nothing was trained.
    """
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if preds.shape[0] != targets.shape[0] or preds.shape[0] != weights.shape[0]:
        raise ContractError(
            f"fine_loss length mismatch: preds {preds.shape[0]}, targets {targets.shape[0]}, "
            f"weights {weights.shape[0]}"
        )
    valid_idx = np.asarray(valid_idx, dtype=np.intp)
    if valid_idx.size == 0:
        return Tensor(np.zeros((), dtype=preds.dtype)), 0
    pred_q = ad.take_rows(preds, valid_idx)
    tgt = Tensor(targets[valid_idx].astype(preds.data.dtype))
    diff = ad.sub(tgt, pred_q)
    per = ad.tsum(ad.mul(diff, diff), axis=1)
    w = Tensor(weights[valid_idx].astype(preds.data.dtype))
    return ad.scale(ad.tsum(ad.mul(w, per)), 1.0 / valid_idx.size), int(valid_idx.size)


def total_loss(loss_c: Tensor, loss_f: Tensor, cfg: LossConfig) -> Tensor:
    """Weighted sum of the coarse and fine objectives."""
    return ad.add(ad.scale(loss_c, cfg.lambda_c), ad.scale(loss_f, cfg.lambda_f))
