"""Synthetic cross-modal pair generation and paired-image ingestion.

A base scene is multi-octave value noise composited with a few geometric
structures (roads, fields, water blobs).  The optical view is a lightly
blurred copy; the SAR view gets a gamma remap with edge emphasis and
contrast-inverted water, multiplicative gamma speckle, and a random
affine perturbation whose transform is the ground truth.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .categories import EXPANDED_CATEGORIES
from .geometry import AffineTransform, PerturbConfig, sample_perturbation, warp_image
from .rng import derive_rng


class IngestionError(ValueError):
    """A dataset directory or file is malformed; the message names it."""


@dataclass
class SynthConfig:
    image_size: int = 64
    octaves: int = 4
    speckle_looks: float = 4.0
    gamma_min: float = 0.7
    gamma_max: float = 1.4
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        if self.image_size % 8 or self.image_size < 16:
            problems.append(f"image_size must be >= 16 and divisible by 8, got {self.image_size}")
        if self.octaves < 1:
            problems.append(f"octaves must be >= 1, got {self.octaves}")
        if self.speckle_looks < 1:
            problems.append(f"speckle_looks must be >= 1, got {self.speckle_looks}")
        if not (0 < self.gamma_min <= self.gamma_max):
            problems.append(f"gamma range [{self.gamma_min}, {self.gamma_max}] invalid")
        problems += self.perturb.validate()
        return problems


@dataclass
class Scene:
    image: np.ndarray  # [H,W] in [0,1]
    scene_tag: str
    water_mask: np.ndarray  # [H,W] bool


@dataclass
class PairSample:
    optical: np.ndarray
    sar: np.ndarray
    gt_affine: AffineTransform
    scene_tag: str | None = None


def _bilinear_upsample(grid: np.ndarray, size: int) -> np.ndarray:
    """Resample a small value grid to size x size."""
    n = grid.shape[0]
    pos = np.linspace(0, n - 1, size)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = pos - i0
    # separable: interpolate rows then columns
    a = grid[i0] * (1 - frac)[:, None] + grid[i1] * frac[:, None]
    out = a[:, i0] * (1 - frac)[None, :] + a[:, i1] * frac[None, :]
    return out


def _value_noise(rng: np.random.Generator, size: int, octaves: int) -> np.ndarray:
    total = np.zeros((size, size))
    amp = 1.0
    norm = 0.0
    for o in range(octaves):
        n = min(4 * 2**o + 1, size)
        grid = rng.random((n, n))
        total += amp * _bilinear_upsample(grid, size)
        norm += amp
        amp *= 0.5
    total /= norm
    lo, hi = total.min(), total.max()
    return (total - lo) / (hi - lo) if hi > lo else np.full_like(total, 0.5)


def _draw_road(rng: np.random.Generator, img: np.ndarray) -> None:
    h, w = img.shape
    a = np.array([rng.uniform(0, w - 1), rng.uniform(0, h - 1)])
    b = np.array([rng.uniform(0, w - 1), rng.uniform(0, h - 1)])
    if np.allclose(a, b):
        return
    width = rng.uniform(1.0, 2.5)
    level = rng.uniform(0.65, 0.95)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pts = np.stack([xs, ys], axis=-1).astype(np.float64)
    ab = b - a
    t = np.clip(((pts - a) @ ab) / (ab @ ab), 0, 1)
    dist = np.linalg.norm(pts - (a + t[..., None] * ab), axis=-1)
    img[dist < width] = level


def _draw_field(rng: np.random.Generator, img: np.ndarray) -> None:
    h, w = img.shape
    cx, cy = rng.uniform(0.2 * w, 0.8 * w), rng.uniform(0.2 * h, 0.8 * h)
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=rng.integers(3, 6)))
    radius = rng.uniform(0.1, 0.3) * min(h, w)
    corners = np.stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)], axis=1)
    shift = rng.uniform(-0.25, 0.25)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    inside = np.ones((h, w), dtype=bool)
    for i in range(len(corners)):
        p, q = corners[i], corners[(i + 1) % len(corners)]
        cross = (q[0] - p[0]) * (ys - p[1]) - (q[1] - p[1]) * (xs - p[0])
        inside &= cross >= 0
    img[inside] = np.clip(img[inside] + shift, 0, 1)


def _draw_water(rng: np.random.Generator, img: np.ndarray, mask: np.ndarray) -> None:
    h, w = img.shape
    cx, cy = rng.uniform(0.15 * w, 0.85 * w), rng.uniform(0.15 * h, 0.85 * h)
    rx, ry = rng.uniform(0.08, 0.25) * w, rng.uniform(0.08, 0.25) * h
    ang = rng.uniform(0, np.pi)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dx, dy = xs - cx, ys - cy
    u = dx * np.cos(ang) + dy * np.sin(ang)
    v = -dx * np.sin(ang) + dy * np.cos(ang)
    blob = (u / rx) ** 2 + (v / ry) ** 2 < 1.0
    img[blob] = rng.uniform(0.03, 0.15)
    mask |= blob


def gen_base_scene(rng: np.random.Generator, cfg: SynthConfig) -> Scene:
    """Compose value-noise texture with 1-3 geometric structures."""
    img = 0.25 + 0.5 * _value_noise(rng, cfg.image_size, cfg.octaves)
    mask = np.zeros(img.shape, dtype=bool)
    n_structs = int(rng.integers(1, 4))
    for _ in range(n_structs):
        kind = rng.integers(0, 3)
        if kind == 0:
            _draw_road(rng, img)
        elif kind == 1:
            _draw_field(rng, img)
        else:
            _draw_water(rng, img, mask)
    tag = EXPANDED_CATEGORIES[int(rng.integers(0, len(EXPANDED_CATEGORIES)))]
    return Scene(image=np.clip(img, 0, 1), scene_tag=tag, water_mask=mask)


def _blur3(img: np.ndarray) -> np.ndarray:
    """Separable binomial [1,2,1]/4 blur with edge clamping."""
    p = np.pad(img, 1, mode="edge")
    horiz = (p[1:-1, :-2] + 2 * p[1:-1, 1:-1] + p[1:-1, 2:]) / 4
    p = np.pad(horiz, ((1, 1), (0, 0)), mode="edge")
    return (p[:-2] + 2 * p[1:-1] + p[2:]) / 4


def _gradient_magnitude(img: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(img)
    return np.hypot(gx, gy)


def sar_remap(scene: Scene, rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    """Cross-modal intensity remap: gamma, edge emphasis, water inversion."""
    g = rng.uniform(cfg.gamma_min, cfg.gamma_max)
    out = scene.image**g
    out = out + 2.0 * _gradient_magnitude(scene.image)
    out[scene.water_mask] = 1.0 - scene.image[scene.water_mask]
    return np.clip(out, 0, 1)


def apply_speckle(img: np.ndarray, rng: np.random.Generator, looks: float) -> np.ndarray:
    """Multiplicative mean-1 gamma noise with the given number of looks."""
    noise = rng.gamma(shape=looks, scale=1.0 / looks, size=img.shape)
    return np.clip(img * noise, 0, 1)


def gen_pair(scene: Scene, rng: np.random.Generator, cfg: SynthConfig) -> PairSample:
    """Derive the (optical, sar, gt_affine) triple from a base scene."""
    optical = np.clip(_blur3(scene.image), 0, 1)
    sar_flat = apply_speckle(sar_remap(scene, rng, cfg), rng, cfg.speckle_looks)
    transform = sample_perturbation(rng, cfg.perturb, cfg.image_size)
    sar = warp_image(sar_flat, transform)
    return PairSample(
        optical=optical.astype(np.float32),
        sar=sar.astype(np.float32),
        gt_affine=transform,
        scene_tag=scene.scene_tag,
    )


def gen_sample(cfg: SynthConfig, index: int) -> PairSample:
    """One sample from its own derived stream; independent across indices."""
    rng = derive_rng(cfg.seed, 1, index)
    return gen_pair(gen_base_scene(rng, cfg), rng, cfg)


def gen_dataset(cfg: SynthConfig, count: int) -> list[PairSample]:
    return [gen_sample(cfg, i) for i in range(count)]


# ---------------------------------------------------------------------------
# PGM interchange and dataset directories


def write_pgm(path, img: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255) from a [0,1] float image."""
    u8 = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    h, w = u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(u8.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)?(\d+)\s+(\d+)\s+(\d+)\s", blob)
    if not m:
        raise IngestionError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(v) for v in m.groups())
    if maxval != 255:
        raise IngestionError(f"{path}: unsupported maxval {maxval}, expected 255")
    data = blob[m.end() :]
    if len(data) < w * h:
        raise IngestionError(f"{path}: pixel data truncated")
    img = np.frombuffer(data[: w * h], dtype=np.uint8).reshape(h, w)
    return (img.astype(np.float32) / 255.0).astype(np.float32)


def write_affine_sidecar(path, transform: AffineTransform) -> None:
    vals = " ".join(repr(float(v)) for v in transform.matrix.reshape(-1))
    Path(path).write_text(vals + "\n", encoding="utf-8")


def read_affine_sidecar(path) -> AffineTransform:
    text = Path(path).read_text(encoding="utf-8")
    parts = text.split()
    if len(parts) != 6:
        raise IngestionError(f"{path}: expected 6 numbers, got {len(parts)}")
    try:
        vals = [float(p) for p in parts]
    except ValueError as e:
        raise IngestionError(f"{path}: malformed affine value") from e
    return AffineTransform(np.array(vals, dtype=np.float64).reshape(2, 3))


def write_dataset(out_dir, samples: list, write_sidecars: bool = True) -> list[str]:
    """Write PGM pairs, affine sidecars, and the manifest; returns the ids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for i, sample in enumerate(samples):
        pid = f"{i:05d}"
        ids.append(pid)
        write_pgm(out / f"{pid}_opt.pgm", sample.optical)
        write_pgm(out / f"{pid}_sar.pgm", sample.sar)
        if write_sidecars:
            write_affine_sidecar(out / f"{pid}_affine.txt", sample.gt_affine)
    (out / "manifest.txt").write_text("".join(p + "\n" for p in ids), encoding="utf-8")
    return ids


def load_pair_dir(path) -> list[PairSample]:
    """Read '{id}_opt.pgm' / '{id}_sar.pgm' pairs sorted by id.

    A missing mate, a size mismatch, or a malformed affine sidecar is an
    ingestion error naming the offending id or file.
    """
    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"{path}: not a directory")
    opt_ids = {p.name[: -len("_opt.pgm")] for p in root.glob("*_opt.pgm")}
    sar_ids = {p.name[: -len("_sar.pgm")] for p in root.glob("*_sar.pgm")}
    for orphan in sorted(sar_ids - opt_ids):
        raise IngestionError(f"{path}: id {orphan!r} has a SAR image but no optical mate")
    samples = []
    for pid in sorted(opt_ids):
        if pid not in sar_ids:
            raise IngestionError(f"{path}: id {pid!r} has an optical image but no SAR mate")
        optical = read_pgm(root / f"{pid}_opt.pgm")
        sar = read_pgm(root / f"{pid}_sar.pgm")
        if optical.shape != sar.shape:
            raise IngestionError(
                f"{path}: id {pid!r} size mismatch: optical {optical.shape}, sar {sar.shape}"
            )
        if optical.shape[0] % 8 or optical.shape[1] % 8:
            raise IngestionError(f"{path}: id {pid!r} dims {optical.shape} not divisible by 8")
        sidecar = root / f"{pid}_affine.txt"
        transform = read_affine_sidecar(sidecar) if sidecar.exists() else AffineTransform.identity()
        samples.append(PairSample(optical=optical, sar=sar, gt_affine=transform, scene_tag=None))
    return samples
