"""Affine transforms, perturbation sampling, warping, and robust estimation.

Points are (x, y) pixel coordinates with x along image columns.  All
geometry runs in float64 numpy, independent of the model's tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_ABS_DET = 1e-6


class GeometryError(ValueError):
    """Invalid transform or image geometry."""


class EstimationError(RuntimeError):
    """Transform estimation failed (too few or degenerate correspondences)."""


@dataclass(frozen=True)
class AffineTransform:
    """2x3 matrix [a b tx; c d ty] mapping reference (x,y) to moving (x,y)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise GeometryError(f"affine matrix must be 2x3, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity() -> "AffineTransform":
        return AffineTransform(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @property
    def det(self) -> float:
        m = self.matrix
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    def is_valid(self) -> bool:
        return abs(self.det) > MIN_ABS_DET

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an [N,2] array of (x,y) points."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Transform equivalent to applying ``other`` first, then ``self``."""
        a = self.matrix
        b = other.matrix
        lin = a[:, :2] @ b[:, :2]
        off = a[:, :2] @ b[:, 2] + a[:, 2]
        return AffineTransform(np.column_stack([lin, off]))

    def invert(self) -> "AffineTransform":
        if not self.is_valid():
            raise GeometryError(f"cannot invert near-singular transform (det={self.det:.2e})")
        lin = np.linalg.inv(self.matrix[:, :2])
        off = -lin @ self.matrix[:, 2]
        return AffineTransform(np.column_stack([lin, off]))


@dataclass
class PerturbConfig:
    """Random affine perturbation ranges applied to the moving image."""

    scale_min: float = 0.7
    scale_max: float = 1.3
    rot_deg: float = 35.0
    trans_frac: float = 0.10

    def validate(self) -> list[str]:
        problems = []
        if not (0 < self.scale_min <= self.scale_max):
            problems.append(f"scale range [{self.scale_min}, {self.scale_max}] invalid")
        if self.rot_deg < 0:
            problems.append(f"rot_deg must be >= 0, got {self.rot_deg}")
        if not (0 <= self.trans_frac < 1):
            problems.append(f"trans_frac must be in [0, 1), got {self.trans_frac}")
        return problems


def sample_perturbation(rng: np.random.Generator, cfg: PerturbConfig, size) -> AffineTransform:
    """Draw scale, rotation about the image center, then translation.

    ``size`` is the image size in pixels (int for square images, else
    (h, w)).  All parameters are uniform in their configured ranges.
    """
    h, w = (size, size) if isinstance(size, int) else size
    s = rng.uniform(cfg.scale_min, cfg.scale_max)
    ang = np.deg2rad(rng.uniform(-cfg.rot_deg, cfg.rot_deg))
    tx = rng.uniform(-cfg.trans_frac, cfg.trans_frac) * w
    ty = rng.uniform(-cfg.trans_frac, cfg.trans_frac) * h

    ca, sa = np.cos(ang), np.sin(ang)
    lin = s * np.array([[ca, -sa], [sa, ca]])
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    center = np.array([cx, cy])
    off = center - lin @ center + np.array([tx, ty])
    return AffineTransform(np.column_stack([lin, off]))


def warp_image(image: np.ndarray, transform: AffineTransform, fill: float = 0.0) -> np.ndarray:
    """Inverse-mapping bilinear resample; out-of-range samples take ``fill``.

    The content moves by ``transform``: a feature at point p in the
    input appears at transform(p) in the output.
    """
    if image.ndim != 2:
        raise GeometryError(f"warp_image expects a 2-d image, got shape {image.shape}")
    h, w = image.shape
    inv = transform.invert()
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    src = inv.apply(np.stack([xs.ravel(), ys.ravel()], axis=1))
    x, y = src[:, 0], src[:, 1]

    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    out = np.full(h * w, fill, dtype=np.float64)
    acc = np.zeros(h * w, dtype=np.float64)
    any_valid = np.zeros(h * w, dtype=bool)
    for dy, dx, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        yy = y0 + dy
        xx = x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        acc[valid] += wgt[valid] * image[yy[valid], xx[valid]]
        any_valid |= valid & (wgt > 0)
    # fully out-of-range pixels keep the fill value; partial corners treat
    # the missing neighbours as fill=0 contribution
    out[any_valid] = acc[any_valid]
    return out.reshape(h, w).astype(image.dtype, copy=False)


def _exact_affine_from_three(src: np.ndarray, dst: np.ndarray) -> AffineTransform | None:
    a = np.column_stack([src, np.ones(3)])
    try:
        sol = np.linalg.solve(a, dst)  # [3,2] columns (x-params, y-params)
    except np.linalg.LinAlgError:
        return None
    return AffineTransform(sol.T)


def estimate_affine_lsq(src: np.ndarray, dst: np.ndarray) -> AffineTransform:
    """Least-squares fit of the 6 affine parameters from >= 3 matches."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape[0] < 3:
        raise EstimationError(f"need >= 3 correspondences, got {src.shape[0]}")
    a = np.column_stack([src, np.ones(src.shape[0])])
    if np.linalg.matrix_rank(a) < 3:
        raise EstimationError("correspondences are collinear; affine parameters unresolved")
    sol, *_ = np.linalg.lstsq(a, dst, rcond=None)
    return AffineTransform(sol.T)


def estimate_affine_ransac(
    src: np.ndarray,
    dst: np.ndarray,
    rng: np.random.Generator,
    iters: int = 1000,
    inlier_radius: float = 3.0,
) -> AffineTransform:
    """Minimal 3-point RANSAC with a least-squares refit on the consensus set."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = src.shape[0]
    if n < 3:
        raise EstimationError(f"need >= 3 correspondences, got {n}")

    best_inliers = None
    best_count = 0
    for _ in range(iters):
        pick = rng.choice(n, size=3, replace=False)
        t = _exact_affine_from_three(src[pick], dst[pick])
        if t is None:
            continue
        resid = np.linalg.norm(t.apply(src) - dst, axis=1)
        inliers = resid < inlier_radius
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
    if best_inliers is None or best_count < 3:
        raise EstimationError("no consensus set found")
    return estimate_affine_lsq(src[best_inliers], dst[best_inliers])


def estimate_affine(
    src: np.ndarray,
    dst: np.ndarray,
    method: str = "ransac",
    rng: np.random.Generator | None = None,
    iters: int = 1000,
    inlier_radius: float = 3.0,
) -> AffineTransform:
    if method == "lsq":
        return estimate_affine_lsq(src, dst)
    if method == "ransac":
        if rng is None:
            rng = np.random.default_rng(0)
        return estimate_affine_ransac(src, dst, rng, iters=iters, inlier_radius=inlier_radius)
    raise ValueError(f"unknown estimator {method!r}")
