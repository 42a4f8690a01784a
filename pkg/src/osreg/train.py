"""Ground-truth supervision, Adam, the learning-rate schedule, and training.

Supervision maps each optical coarse cell through the ground-truth
affine to its nearest SAR cell; mutual nearest cells form the positive
set, everything else in range forms the negative pool.  Fine targets
are the sub-cell residuals of the warped centers in fine-grid units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ConfigError
from .geometry import MIN_ABS_DET, AffineTransform
from .matching import COARSE_TO_FINE, FINE_TO_INPUT, coarse_cell_center_px
from .text_library import ValidationError


class TrainingError(RuntimeError):
    """Unrecoverable numerical failure during optimization."""


@dataclass
class Supervision:
    """Cell-level targets for one image pair."""

    positives: np.ndarray  # [P, 2] (optical cell, sar cell) linear indices
    negatives: np.ndarray  # [N, 2]
    fine_targets: np.ndarray  # [P, 2] (dx, dy) fine-grid units, aligned with positives
    fine_valid: np.ndarray  # [P] bool, target lies inside the fine window


def build_supervision(
    gt_affine: AffineTransform, image_hw: tuple, fine_window: int = 3
) -> Supervision:
    """Derive positive/negative cell pairs and fine offsets from a known affine."""
    if abs(gt_affine.det) < MIN_ABS_DET:
        raise ValidationError(f"degenerate ground-truth affine (det={gt_affine.det:.2e})")
    h, w = image_hw
    hc, wc = h // 8, w // 8
    cells = np.stack(np.meshgrid(np.arange(hc), np.arange(wc), indexing="ij"), axis=-1).reshape(-1, 2)
    centers_px = coarse_cell_center_px(cells)

    warped = gt_affine.apply(centers_px)
    sar_col = np.round((warped[:, 0] - 4.0) / 8.0).astype(np.int64)
    sar_row = np.round((warped[:, 1] - 4.0) / 8.0).astype(np.int64)
    fwd_ok = (sar_row >= 0) & (sar_row < hc) & (sar_col >= 0) & (sar_col < wc)
    fwd = sar_row * wc + sar_col

    inv = gt_affine.invert()
    back = inv.apply(centers_px)
    opt_col = np.round((back[:, 0] - 4.0) / 8.0).astype(np.int64)
    opt_row = np.round((back[:, 1] - 4.0) / 8.0).astype(np.int64)
    bwd_ok = (opt_row >= 0) & (opt_row < hc) & (opt_col >= 0) & (opt_col < wc)
    bwd = opt_row * wc + opt_col

    n = hc * wc
    idx = np.arange(n)
    mutual = fwd_ok & (bwd_ok[np.clip(fwd, 0, n - 1)]) & (bwd[np.clip(fwd, 0, n - 1)] == idx)
    pos_i = idx[mutual]
    pos_j = fwd[mutual]
    positives = np.stack([pos_i, pos_j], axis=1)

    valid_rows = idx[fwd_ok]
    valid_cols = idx[bwd_ok]
    grid_i, grid_j = np.meshgrid(valid_rows, valid_cols, indexing="ij")
    all_pairs = np.stack([grid_i.reshape(-1), grid_j.reshape(-1)], axis=1)
    pos_keys = set(map(tuple, positives))
    neg_mask = np.array([tuple(p) not in pos_keys for p in all_pairs], dtype=bool)
    negatives = all_pairs[neg_mask]

    # residual of the warped optical center relative to the matched SAR
    # window center, in fine-grid units
    sar_center_px = coarse_cell_center_px(
        np.stack([pos_j // wc, pos_j % wc], axis=1)
    )
    fine_targets = (warped[mutual] - sar_center_px) / FINE_TO_INPUT
    radius = (fine_window - 1) / 2.0
    fine_valid = np.all(np.abs(fine_targets) <= radius, axis=1)
    return Supervision(
        positives=positives,
        negatives=negatives,
        fine_targets=fine_targets,
        fine_valid=fine_valid,
    )


def subsample_negatives(sup: Supervision, rng: np.random.Generator, max_ratio: int) -> Supervision:
    """Keep at most max_ratio negatives per positive, uniform without replacement."""
    cap = max_ratio * len(sup.positives)
    if len(sup.negatives) <= cap:
        return sup
    pick = np.sort(rng.choice(len(sup.negatives), size=cap, replace=False))
    return Supervision(
        positives=sup.positives,
        negatives=sup.negatives[pick],
        fine_targets=sup.fine_targets,
        fine_valid=sup.fine_valid,
    )


# ---------------------------------------------------------------------------
# optimizer and schedule


class Adam:
    """Standard Adam with bias correction over a name->Tensor parameter dict."""

    def __init__(self, params: dict, lr: float = 8e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {name!r} at step {t}")
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / (1 - self.beta1**t)
            vhat = self.v[name] / (1 - self.beta2**t)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        ad.zero_grads(self.params)


@dataclass
class LrSchedule:
    """Linear warmup to lr0, then a halving at each milestone step."""

    lr0: float
    warmup_steps: int
    milestones: tuple

    def __post_init__(self):
        if list(self.milestones) != sorted(self.milestones):
            raise ConfigError(f"milestones must be sorted, got {self.milestones}")

    def at(self, step: int) -> float:
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.lr0 * step / self.warmup_steps
        halvings = sum(1 for m in self.milestones if step >= m)
        return self.lr0 * (0.5**halvings)

    @staticmethod
    def from_fractions(lr0: float, total_steps: int, warmup_frac: float, milestone_fracs) -> "LrSchedule":
        return LrSchedule(
            lr0=lr0,
            warmup_steps=int(round(warmup_frac * total_steps)),
            milestones=tuple(int(round(f * total_steps)) for f in milestone_fracs),
        )


# ---------------------------------------------------------------------------
# training loop

TRAIN_LOG_HEADER = "epoch,loss_coarse,loss_fine,val_rmse,val_cmr1,val_cmr3,val_cmr5"


def _fmt(value: float) -> str:
    return "inf" if not np.isfinite(value) else f"{value:.6f}"


def train_loop(matcher, samples: list, cfg, log_path=None, progress=None) -> list[str]:
    """Deterministic epochs of shuffled minibatches with per-epoch validation.

    ``samples`` are (optical, sar, gt_affine) triples; the validation
    probe reuses the first ``val_pairs`` training samples to track
    registration quality cheaply (held-out evaluation is a separate
    run).  Returns the log lines that were also written to ``log_path``.
    """
    from .metrics import evaluate_pairs
    from .rng import derive_rng

    if not samples:
        raise ConfigError("training dataset is empty")
    loss_cfg = matcher.cfg.losses()
    sups = [
        build_supervision(s.gt_affine, s.optical.shape, cfg.fine_window) for s in samples
    ]
    n = len(samples)
    steps_per_epoch = (n + cfg.batch - 1) // cfg.batch
    total_steps = cfg.epochs * steps_per_epoch
    sched = LrSchedule.from_fractions(cfg.lr, total_steps, cfg.warmup_frac, cfg.milestone_fracs)
    opt = Adam(matcher.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    shuffle_rng = derive_rng(cfg.seed, 2, 0)
    neg_rng = derive_rng(cfg.seed, 2, 1)
    val_samples = samples[: min(cfg.val_pairs, n)]

    lines = [TRAIN_LOG_HEADER]
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        sum_lc = sum_lf = 0.0
        for start in range(0, n, cfg.batch):
            batch = order[start : start + cfg.batch]
            lr = sched.at(step)
            opt.zero_grad()
            batch_total = None
            for k in batch:
                s = samples[k]
                total, lc, lf, _ = matcher.pair_loss(s.optical, s.sar, sups[k], loss_cfg, neg_rng)
                sum_lc += float(lc.data)
                sum_lf += float(lf.data)
                batch_total = total if batch_total is None else ad.add(batch_total, total)
            ad.backward(ad.scale(batch_total, 1.0 / len(batch)))
            opt.step(lr)
            step += 1
        report = evaluate_pairs(matcher, val_samples, matcher.cfg)
        line = (
            f"{epoch},{sum_lc / n:.6f},{sum_lf / n:.6f},{_fmt(report.mean_rmse)},"
            f"{report.cmr_at[1.0]:.6f},{report.cmr_at[3.0]:.6f},{report.cmr_at[5.0]:.6f}"
        )
        lines.append(line)
        if progress is not None:
            progress(line)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("".join(line + "\n" for line in lines))
    return lines
