"""Coarse-to-fine dense matching.

Coarse stage: positional encoding over the enhanced coarse features,
temperature-scaled cosine similarity, dual-softmax confidence, then
threshold plus mutual-nearest-neighbor selection.  Fine stage: 3x3
windows cropped from the fine maps around each coarse match, attention
over the window positions, and a softmax-expectation offset with a
scatter-based reliability weight.

Pixel conventions: fine index f maps to input pixel 2*f; a coarse cell c
maps to the fine window center 4*c + 2 (the stated half-up rounding of
4*c + 1.5), hence to input pixel 8*c + 4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .enhance import attn_block
from .init import xavier_uniform

PE_STAGES = ("pre_tafe", "post_tafe")
FINE_TO_INPUT = 2  # fine grid stride in input pixels
COARSE_TO_FINE = 4  # fine cells per coarse cell


@dataclass
class MatchConfig:
    theta_c: float = 0.2
    temperature: float = 0.1
    fine_window: int = 3
    pe_stage: str = "post_tafe"

    def validate(self) -> list[str]:
        problems = []
        if not (0 < self.theta_c < 1):
            problems.append(f"theta_c must be in (0,1), got {self.theta_c}")
        if self.temperature <= 0:
            problems.append(f"temperature must be > 0, got {self.temperature}")
        if self.fine_window < 1 or self.fine_window % 2 == 0:
            problems.append(f"fine_window must be odd and >= 1, got {self.fine_window}")
        if self.pe_stage not in PE_STAGES:
            problems.append(f"pe_stage must be one of {PE_STAGES}, got {self.pe_stage!r}")
        return problems


@dataclass
class ConfidenceMatrix:
    similarity: Tensor  # [n_o, n_s]
    confidence: Tensor  # [n_o, n_s]


@dataclass
class MatchSet:
    """Coarse cell correspondences and refined sub-pixel correspondences."""

    coarse_ij: np.ndarray  # [K, 2] linear cell indices (optical, sar)
    coarse_conf: np.ndarray  # [K]
    fine_po: np.ndarray  # [Kf, 2] optical (x, y) input pixels
    fine_ps: np.ndarray  # [Kf, 2] SAR (x, y) input pixels, sub-pixel
    fine_weights: np.ndarray  # [Kf] reliability in (0, 1]
    fine_parent: np.ndarray  # [Kf] index into the coarse arrays

    @property
    def fine_conf(self) -> np.ndarray:
        return self.coarse_conf[self.fine_parent]


# ---------------------------------------------------------------------------
# positional encoding


def pe_table(d_c: int, hc: int, wc: int) -> np.ndarray:
    """Fixed 2-D sinusoidal encodings, channel quarters (sin x, cos x, sin y, cos y)."""
    if d_c % 4:
        raise DimensionError(f"positional encoding needs d_c divisible by 4, got {d_c}")
    q = d_c // 4
    freqs = 1.0 / (10000.0 ** (np.arange(q) / q))
    xs = np.arange(wc)[None, :] * np.ones((hc, 1))
    ys = np.arange(hc)[:, None] * np.ones((1, wc))
    table = np.empty((d_c, hc, wc))
    for k in range(q):
        table[k] = np.sin(xs * freqs[k])
        table[q + k] = np.cos(xs * freqs[k])
        table[2 * q + k] = np.sin(ys * freqs[k])
        table[3 * q + k] = np.cos(ys * freqs[k])
    return table


def flatten_map(fmap: Tensor) -> Tensor:
    """Row-major flatten [C,H,W] -> [H*W, C]; cell (r,c) lands at index r*W + c."""
    c, h, w = fmap.shape
    return ad.reshape(ad.transpose(fmap, (1, 2, 0)), (h * w, c))


def positional_encode(fmap: Tensor) -> Tensor:
    """Add the sinusoidal table to a [d_c,H,W] map and flatten to [n, d_c]."""
    d_c, hc, wc = fmap.shape
    table = Tensor(pe_table(d_c, hc, wc).astype(fmap.data.dtype))
    return flatten_map(ad.add(fmap, table))


# ---------------------------------------------------------------------------
# coarse stage


def coarse_confidence(f_o: Tensor, f_s: Tensor, cfg: MatchConfig) -> ConfidenceMatrix:
    """Dual-softmax over temperature-scaled cosine similarities.

    Cells are L2-normalized, so self-similarity is maximal and logits
    stay within 1/temperature.  The row factor normalizes over SAR cells
    for each optical cell; the column factor over optical cells.
    """
    fo_n = ad.l2_normalize(f_o, axis=1)
    fs_n = ad.l2_normalize(f_s, axis=1)
    sim = ad.scale(ad.matmul(fo_n, ad.swap_last(fs_n)), 1.0 / cfg.temperature)
    conf = ad.mul(ad.softmax(sim, axis=0), ad.softmax(sim, axis=1))
    return ConfidenceMatrix(similarity=sim, confidence=conf)


def select_coarse(confidence, cfg: MatchConfig) -> tuple[np.ndarray, np.ndarray]:
    """Threshold + mutual-nearest-neighbor filter.

    Keeps (i,j) iff P[i,j] >= theta_c, j is i's argmax and i is j's
    argmax; argmax ties break toward the smallest index.  Returns
    ([K,2] index pairs, [K] confidences) ordered by optical index.
    """
    p = confidence.data if isinstance(confidence, Tensor) else np.asarray(confidence)
    if p.size == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    best_j = np.argmax(p, axis=1)
    best_i = np.argmax(p, axis=0)
    ii = np.arange(p.shape[0])
    mutual = best_i[best_j[ii]] == ii
    conf = p[ii, best_j[ii]]
    keep = mutual & (conf >= cfg.theta_c)
    pairs = np.stack([ii[keep], best_j[ii[keep]]], axis=1).astype(np.int64)
    return pairs, conf[keep]


# ---------------------------------------------------------------------------
# fine stage


def window_center_fine(cells: np.ndarray) -> np.ndarray:
    """Coarse cell index -> fine-grid window center, rounding 4c+1.5 half-up."""
    return np.floor(COARSE_TO_FINE * np.asarray(cells) + 1.5 + 0.5).astype(np.int64)


def valid_window_mask(centers_rc: np.ndarray, hf: int, wf: int, window: int) -> np.ndarray:
    """True where a window x window patch around each (row,col) center fits."""
    r = (window - 1) // 2
    rows, cols = centers_rc[:, 0], centers_rc[:, 1]
    return (rows - r >= 0) & (rows + r < hf) & (cols - r >= 0) & (cols + r < wf)


def crop_fine_windows(
    fine_o: Tensor,
    fine_s: Tensor,
    coarse_ij: np.ndarray,
    coarse_width: int,
    cfg: MatchConfig,
) -> tuple:
    """Cut paired fine-feature windows around each coarse match.

    Matches whose window would cross either image border are dropped
    from fine processing (they stay in the coarse output).  Returns
    (windows_o [K,w*w,d_f], windows_s, kept indices, optical centers
    [K,2] (row,col), SAR centers [K,2]).
    """
    d_f, hf, wf = fine_o.shape
    w = cfg.fine_window
    if coarse_ij.shape[0] == 0:
        empty = Tensor(np.zeros((0, w * w, d_f), dtype=fine_o.data.dtype))
        return empty, empty, np.zeros(0, dtype=np.int64), np.zeros((0, 2), np.int64), np.zeros((0, 2), np.int64)

    cells_o = np.stack([coarse_ij[:, 0] // coarse_width, coarse_ij[:, 0] % coarse_width], axis=1)
    cells_s = np.stack([coarse_ij[:, 1] // coarse_width, coarse_ij[:, 1] % coarse_width], axis=1)
    centers_o = window_center_fine(cells_o)
    centers_s = window_center_fine(cells_s)
    keep = valid_window_mask(centers_o, hf, wf, w) & valid_window_mask(centers_s, hf, wf, w)
    kept = np.flatnonzero(keep)
    centers_o = centers_o[kept]
    centers_s = centers_s[kept]

    r = (w - 1) // 2
    dr, dc = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    offs = (dr * wf + dc).reshape(-1)  # row-major within the window

    flat_o = flatten_map(fine_o)
    flat_s = flatten_map(fine_s)
    idx_o = (centers_o[:, 0] * wf + centers_o[:, 1])[:, None] + offs[None, :]
    idx_s = (centers_s[:, 0] * wf + centers_s[:, 1])[:, None] + offs[None, :]
    return ad.take_rows(flat_o, idx_o), ad.take_rows(flat_s, idx_s), kept, centers_o, centers_s


def offset_grid(window: int) -> np.ndarray:
    """Window position offsets [(dx, dy)] in row-major order, [w*w, 2]."""
    r = (window - 1) // 2
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    return np.stack([dx.reshape(-1), dy.reshape(-1)], axis=1).astype(np.float64)


@dataclass
class FineRefinement:
    offsets: Tensor  # [K, 2] expected (dx, dy) in fine-grid units
    weights: np.ndarray  # [K] reliability 1/(1+sigma^2), detached
    scatter: np.ndarray  # [K] sigma^2, detached
    heatmap: Tensor  # [K, w*w]
    argmax_offsets: np.ndarray  # [K, 2] hard argmax alternative, detached


def init_fine_params(
    rng: np.random.Generator,
    d_f: int,
    ffn_mult: int = 2,
    d_text: int | None = None,
    prefix: str = "fine",
) -> dict:
    from .enhance import init_attn_params

    p = {}
    p.update(init_attn_params(rng, d_f, ffn_mult, f"{prefix}/self"))
    p.update(init_attn_params(rng, d_f, ffn_mult, f"{prefix}/cross"))
    if d_text is not None:
        p[f"{prefix}/text_proj.w"] = xavier_uniform(rng, (d_text, d_f), d_text, d_f)
        p.update(init_attn_params(rng, d_f, ffn_mult, f"{prefix}/text_attn"))
    return p


def localize(heat: Tensor, window: int) -> FineRefinement:
    """Expectation offset, scatter, and reliability weight of a heatmap.

    mu is the heatmap expectation over the window offset grid (stays on
    the tape for training); sigma^2 is the expected squared distance
    from mu, and the weight 1/(1+sigma^2) is detached so unreliable
    matches are down-weighted without training the weight itself.
    """
    k, n = heat.shape
    if n != window * window:
        raise DimensionError(f"heatmap has {n} positions, expected {window * window}")
    grid = offset_grid(window)
    mu = ad.matmul(heat, Tensor(grid.astype(heat.data.dtype)))  # [K,2]

    hd = heat.data.astype(np.float64)
    mu_d = mu.data.astype(np.float64)
    sq_dist = ((grid[None, :, :] - mu_d[:, None, :]) ** 2).sum(axis=2)
    sigma2 = (hd * sq_dist).sum(axis=1)
    weights = 1.0 / (1.0 + sigma2)
    argmax_off = grid[np.argmax(hd, axis=1)] if k else np.zeros((0, 2))
    return FineRefinement(
        offsets=mu, weights=weights, scatter=sigma2, heatmap=heat, argmax_offsets=argmax_off
    )


def fine_refine(
    windows_o: Tensor,
    windows_s: Tensor,
    params: dict,
    cfg: MatchConfig,
    heads: int = 4,
    library: Tensor | None = None,
    prefix: str = "fine",
) -> FineRefinement:
    """Attend within and across paired windows, then localize by expectation.

    The attended optical center queries the SAR window; the softmax
    heatmap feeds ``localize`` for the sub-cell offset and reliability.
    """
    k, n, d_f = windows_o.shape
    w = cfg.fine_window
    if n != w * w:
        raise DimensionError(f"windows have {n} positions, expected {w * w}")

    wo = attn_block(windows_o, windows_o, params, f"{prefix}/self", heads)
    ws = attn_block(windows_s, windows_s, params, f"{prefix}/self", heads)
    if library is not None:
        proj = ad.matmul(library, params[f"{prefix}/text_proj.w"])
        wo = attn_block(wo, proj, params, f"{prefix}/text_attn", heads)
        ws = attn_block(ws, proj, params, f"{prefix}/text_attn", heads)
    wo2 = attn_block(wo, ws, params, f"{prefix}/cross", heads)
    ws2 = attn_block(ws, wo, params, f"{prefix}/cross", heads)

    center = (n - 1) // 2
    q = ad.slice_window(wo2, (0, center, 0), (k, 1, d_f))  # [K,1,d]
    logits = ad.scale(ad.matmul(q, ad.swap_last(ws2)), 1.0 / np.sqrt(d_f))  # [K,1,n]
    heat = ad.reshape(ad.softmax(logits, axis=-1), (k, n))
    return localize(heat, w)


# ---------------------------------------------------------------------------
# coordinate mapping and match assembly


def fine_index_to_px(idx) -> np.ndarray:
    """Fine-grid (row,col) indices or sub-pixel positions -> input pixels."""
    return FINE_TO_INPUT * np.asarray(idx, dtype=np.float64)


def coarse_cell_center_px(cells_rc: np.ndarray) -> np.ndarray:
    """Coarse (row,col) cells -> window-center (x,y) input pixels."""
    centers = window_center_fine(np.asarray(cells_rc))
    return np.stack(
        [FINE_TO_INPUT * centers[:, 1], FINE_TO_INPUT * centers[:, 0]], axis=1
    ).astype(np.float64)


def assemble_matchset(
    coarse_ij: np.ndarray,
    coarse_conf: np.ndarray,
    kept: np.ndarray,
    centers_o: np.ndarray,
    centers_s: np.ndarray,
    refinement: FineRefinement,
) -> MatchSet:
    """Convert window centers plus offsets into pixel-space fine matches."""
    po = np.stack(
        [fine_index_to_px(centers_o[:, 1]), fine_index_to_px(centers_o[:, 0])], axis=1
    )
    mu = refinement.offsets.data.astype(np.float64)
    ps = np.stack(
        [
            fine_index_to_px(centers_s[:, 1] + mu[:, 0]),
            fine_index_to_px(centers_s[:, 0] + mu[:, 1]),
        ],
        axis=1,
    )
    return MatchSet(
        coarse_ij=coarse_ij,
        coarse_conf=coarse_conf,
        fine_po=po,
        fine_ps=ps,
        fine_weights=refinement.weights,
        fine_parent=kept,
    )


MATCH_CSV_HEADER = "xo,yo,xs,ys,conf,weight"


def write_matches_csv(matches: MatchSet, path) -> None:
    """One fine match per row, input-pixel units, 6 decimal places."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(MATCH_CSV_HEADER + "\n")
        conf = matches.fine_conf
        for i in range(matches.fine_po.shape[0]):
            fh.write(
                f"{matches.fine_po[i, 0]:.6f},{matches.fine_po[i, 1]:.6f},"
                f"{matches.fine_ps[i, 0]:.6f},{matches.fine_ps[i, 1]:.6f},"
                f"{conf[i]:.6f},{matches.fine_weights[i]:.6f}\n"
            )
