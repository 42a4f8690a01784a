"""Registration metrics and the evaluation protocol.

Each pair's error is measured on a fixed grid of check points in the
reference frame: the ground-truth transform and the estimated transform
both map the grid, and the RMSE between the two point sets scores the
pair.  A pair with fewer than 3 fine matches (or a degenerate fit) is a
registration failure with infinite RMSE, which counts against every
match-rate threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, RunConfig
from .geometry import EstimationError, estimate_affine
from .rng import derive_rng

CMR_THRESHOLDS = (1.0, 3.0, 5.0)
REPORT_CSV_HEADER = "pair_id,rmse,n_matches,cmr1_hit,cmr3_hit,cmr5_hit"


def rmse(pred_points: np.ndarray, gt_points: np.ndarray) -> float:
    """Root mean squared Euclidean distance between aligned point sets."""
    pred = np.asarray(pred_points, dtype=np.float64)
    gt = np.asarray(gt_points, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ValueError(f"point sets disagree: {pred.shape} vs {gt.shape}")
    if pred.shape[0] == 0:
        raise ValueError("rmse undefined for zero points")
    return float(np.sqrt(np.mean(np.sum((pred - gt) ** 2, axis=1))))


def cmr(rmse_values, tau: float) -> float:
    """Fraction of pairs whose RMSE falls below tau; failures carry +inf."""
    values = np.asarray(list(rmse_values), dtype=np.float64)
    if values.size == 0:
        raise ConfigError("cmr needs at least one evaluated pair")
    return float(np.mean(values < tau))


def check_grid(image_hw: tuple, n: int) -> np.ndarray:
    """Fixed n x n grid of (x,y) check points spread over the image."""
    h, w = image_hw
    xs = (np.arange(n) + 0.5) * w / n
    ys = (np.arange(n) + 0.5) * h / n
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)


@dataclass
class EvalReport:
    pair_ids: list
    rmses: np.ndarray  # [M], +inf marks failures
    n_matches: np.ndarray  # [M]
    cmr_at: dict  # threshold -> rate

    @property
    def m(self) -> int:
        return len(self.pair_ids)

    @property
    def mean_rmse(self) -> float:
        finite = self.rmses[np.isfinite(self.rmses)]
        return float(finite.mean()) if finite.size else float("inf")


def evaluate_pairs(matcher, samples, cfg: RunConfig, pair_ids=None) -> EvalReport:
    """Match, estimate, and score every (optical, sar, gt) sample."""
    ids = list(pair_ids) if pair_ids is not None else [f"{i:05d}" for i in range(len(samples))]
    grid = None
    grid_shape = None
    rmses = np.full(len(samples), np.inf)
    n_matches = np.zeros(len(samples), dtype=np.int64)
    for i, sample in enumerate(samples):
        if grid is None or grid_shape != sample.optical.shape:
            grid_shape = sample.optical.shape
            grid = check_grid(grid_shape, cfg.check_grid)
        matches = matcher.match_pair(sample.optical, sample.sar)
        n_matches[i] = matches.fine_po.shape[0]
        if n_matches[i] < 3:
            continue
        try:
            est = estimate_affine(
                matches.fine_po,
                matches.fine_ps,
                method=cfg.estimator,
                rng=derive_rng(cfg.seed, 3, i),
                iters=cfg.ransac_iters,
                inlier_radius=cfg.ransac_radius,
            )
        except EstimationError:
            continue
        rmses[i] = rmse(est.apply(grid), sample.gt_affine.apply(grid))
    cmr_at = {tau: cmr(rmses, tau) for tau in CMR_THRESHOLDS}
    return EvalReport(pair_ids=ids, rmses=rmses, n_matches=n_matches, cmr_at=cmr_at)


def _fmt_rmse(value: float) -> str:
    return "inf" if not np.isfinite(value) else f"{value:.6f}"


def write_report_csv(report: EvalReport, path) -> None:
    """Per-pair rows then a TOTAL summary row, matching the fixed header."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(REPORT_CSV_HEADER + "\n")
        for i, pid in enumerate(report.pair_ids):
            hits = [int(report.rmses[i] < tau) for tau in CMR_THRESHOLDS]
            fh.write(
                f"{pid},{_fmt_rmse(report.rmses[i])},{report.n_matches[i]},"
                f"{hits[0]},{hits[1]},{hits[2]}\n"
            )
        fh.write(
            f"TOTAL,{_fmt_rmse(report.mean_rmse)},-,"
            + ",".join(f"{report.cmr_at[tau]:.6f}" for tau in CMR_THRESHOLDS)
            + "\n"
        )
