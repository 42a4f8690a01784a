"""The assembled matcher: parameters, forward passes, and checkpoints.

A checkpoint (TARCKPT1) stores every trainable tensor, the frozen text
embedding matrix, and a numeric echo of the model-structural config, so
``match`` and ``eval`` runs are self-contained given one file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .backbone import extract, init_backbone_params
from .config import PRECISIONS, VOCABULARIES, ConfigError, RunConfig
from .enhance import TEXT_STAGES, enhance_pair, init_tafe_params
from .losses import LossConfig, fine_loss, focal_coarse_loss, total_loss
from .matching import (
    PE_STAGES,
    FineRefinement,
    MatchSet,
    assemble_matchset,
    coarse_confidence,
    crop_fine_windows,
    fine_refine,
    flatten_map,
    pe_table,
    select_coarse,
)
from .text_library import FormatError, TextFeatureLibrary, ValidationError
from .train import Supervision, subsample_negatives

CHECKPOINT_MAGIC = b"TARCKPT1"
CHECKPOINT_VERSION = 1
TEXT_BUFFER_NAME = "text/embeddings"

# model-structural config echoed into checkpoints; enums become indices
_ECHO_FIELDS = (
    "d_f",
    "d_c",
    "stem_width",
    "mid_width",
    "shared_weights",
    "d_text",
    "heads",
    "n_tafe",
    "ffn_mult",
    "text_stage",
    "vocabulary",
    "theta_c",
    "temperature",
    "fine_window",
    "pe_stage",
    "precision",
)
_ENUM_FIELDS = {
    "text_stage": TEXT_STAGES,
    "vocabulary": VOCABULARIES,
    "pe_stage": PE_STAGES,
    "precision": PRECISIONS,
}


class Matcher:
    """Two-image dense matcher with optional text-assisted enhancement."""

    def __init__(
        self,
        cfg: RunConfig,
        library: TextFeatureLibrary | None = None,
        params: dict | None = None,
        embeddings: np.ndarray | None = None,
    ):
        problems = cfg.validate()
        if problems:
            raise ConfigError("; ".join(problems))
        self.cfg = cfg
        self.bb_cfg = cfg.backbone()
        self.enh_cfg = cfg.enhance()
        self.match_cfg = cfg.matching()

        if library is not None:
            embeddings = library.embeddings
        self.needs_library = self.enh_cfg.text_at_coarse or self.enh_cfg.text_at_fine
        if self.needs_library and embeddings is None:
            raise ValidationError(
                f"text_stage={cfg.text_stage!r} requires a text library (synthetic or loaded)"
            )
        dtype = ad._DTYPES[cfg.precision]
        self.embeddings = None if embeddings is None else np.asarray(embeddings, dtype=np.float32)
        self._library_t = (
            None if self.embeddings is None else Tensor(self.embeddings.astype(dtype))
        )
        self.params = params if params is not None else self._init_params()
        self._pe_cache: dict = {}

    # ----- parameters -------------------------------------------------------

    def _backbone_prefixes(self) -> tuple:
        if self.bb_cfg.shared_weights:
            return ("backbone", "backbone")
        return ("backbone_opt", "backbone_sar")

    def _init_params(self) -> dict:
        from .matching import init_fine_params
        from .rng import derive_rng

        rng = derive_rng(self.cfg.seed, 0)
        with ad.precision(self.cfg.precision):
            p = {}
            for prefix in dict.fromkeys(self._backbone_prefixes()):
                p.update(init_backbone_params(self.bb_cfg, rng, prefix=prefix))
            p.update(init_tafe_params(self.enh_cfg, rng))
            p.update(
                init_fine_params(
                    rng,
                    self.cfg.d_f,
                    ffn_mult=self.cfg.ffn_mult,
                    d_text=self.cfg.d_text if self.enh_cfg.text_at_fine else None,
                )
            )
        return p

    # ----- forward ------------------------------------------------------------

    def _pe_flat(self, hc: int, wc: int, dtype) -> Tensor:
        key = (self.cfg.d_c, hc, wc, np.dtype(dtype).str)
        if key not in self._pe_cache:
            table = pe_table(self.cfg.d_c, hc, wc).astype(dtype)
            self._pe_cache[key] = Tensor(table.transpose(1, 2, 0).reshape(hc * wc, self.cfg.d_c))
        return self._pe_cache[key]

    def forward_features(self, optical: np.ndarray, sar: np.ndarray) -> tuple:
        """Enhanced coarse features [n, d_c] for both images, plus pyramids."""
        dtype = ad._DTYPES[self.cfg.precision]
        pre_o, pre_s = self._backbone_prefixes()
        pyr_o = extract(Tensor(np.asarray(optical, dtype=dtype)[None]), self.bb_cfg, self.params, pre_o)
        pyr_s = extract(Tensor(np.asarray(sar, dtype=dtype)[None]), self.bb_cfg, self.params, pre_s)
        _, hc, wc = pyr_o.coarse.shape

        fo = flatten_map(pyr_o.coarse)
        fs = flatten_map(pyr_s.coarse)
        pe = self._pe_flat(hc, wc, dtype)
        if self.match_cfg.pe_stage == "pre_tafe":
            fo = ad.add(fo, pe)
            fs = ad.add(fs, pe)
        out_o, out_s = enhance_pair(
            fo, fs, self._library_t if self.enh_cfg.text_at_coarse else None, self.params, self.enh_cfg
        )
        eo, es = out_o.fused, out_s.fused
        if self.match_cfg.pe_stage == "post_tafe":
            eo = ad.add(eo, pe)
            es = ad.add(es, pe)
        return eo, es, pyr_o, pyr_s, (hc, wc)

    def _fine_library(self) -> Tensor | None:
        return self._library_t if self.enh_cfg.text_at_fine else None

    def _empty_refinement(self, window: int) -> FineRefinement:
        n = window * window
        return FineRefinement(
            offsets=Tensor(np.zeros((0, 2))),
            weights=np.zeros(0),
            scatter=np.zeros(0),
            heatmap=Tensor(np.zeros((0, n))),
            argmax_offsets=np.zeros((0, 2)),
        )

    def match_pair(self, optical: np.ndarray, sar: np.ndarray) -> MatchSet:
        """Inference: coarse selection plus fine refinement, off the tape."""
        with no_grad():
            eo, es, pyr_o, pyr_s, (hc, wc) = self.forward_features(optical, sar)
            cm = coarse_confidence(eo, es, self.match_cfg)
            pairs, conf = select_coarse(cm.confidence, self.match_cfg)
            wo, ws, kept, centers_o, centers_s = crop_fine_windows(
                pyr_o.fine, pyr_s.fine, pairs, wc, self.match_cfg
            )
            if kept.size:
                ref = fine_refine(
                    wo, ws, self.params, self.match_cfg, self.cfg.heads, self._fine_library()
                )
            else:
                ref = self._empty_refinement(self.match_cfg.fine_window)
            return assemble_matchset(pairs, conf, kept, centers_o, centers_s, ref)

    # ----- training -----------------------------------------------------------

    def pair_loss(
        self,
        optical: np.ndarray,
        sar: np.ndarray,
        sup: Supervision,
        loss_cfg: LossConfig,
        rng: np.random.Generator,
    ) -> tuple:
        """Combined loss graph for one pair; returns (total, lc, lf, |Q|)."""
        sup = subsample_negatives(sup, rng, loss_cfg.neg_subsample)
        eo, es, pyr_o, pyr_s, (hc, wc) = self.forward_features(optical, sar)
        cm = coarse_confidence(eo, es, self.match_cfg)
        lc = focal_coarse_loss(cm.confidence, sup.positives, sup.negatives, loss_cfg)

        wo, ws, kept, _, _ = crop_fine_windows(
            pyr_o.fine, pyr_s.fine, sup.positives, wc, self.match_cfg
        )
        if kept.size:
            ref = fine_refine(
                wo, ws, self.params, self.match_cfg, self.cfg.heads, self._fine_library()
            )
            targets = sup.fine_targets[kept]
            valid = np.flatnonzero(sup.fine_valid[kept])
            lf, n_fine = fine_loss(ref.offsets, targets, ref.weights, valid)
        else:
            lf, n_fine = fine_loss(Tensor(np.zeros((0, 2))), np.zeros((0, 2)), np.zeros(0), np.zeros(0, np.intp))
        return total_loss(lc, lf, loss_cfg), lc, lf, n_fine


# ---------------------------------------------------------------------------
# checkpoint format


def _echo_records(cfg: RunConfig) -> dict:
    records = {}
    for name in _ECHO_FIELDS:
        value = getattr(cfg, name)
        if name in _ENUM_FIELDS:
            value = _ENUM_FIELDS[name].index(value)
        records[f"config/{name}"] = np.float32(value)
    return records


def _decode_echo(records: dict, base: RunConfig) -> RunConfig:
    cfg = RunConfig(**base.as_dict())
    for name in _ECHO_FIELDS:
        key = f"config/{name}"
        if key not in records:
            raise FormatError(f"checkpoint missing config echo {key!r}")
        raw = float(np.asarray(records[key]).reshape(-1)[0])
        if name in _ENUM_FIELDS:
            options = _ENUM_FIELDS[name]
            idx = int(round(raw))
            if not (0 <= idx < len(options)):
                raise FormatError(f"checkpoint echo {key!r} out of range: {raw}")
            setattr(cfg, name, options[idx])
        elif isinstance(getattr(cfg, name), bool):
            setattr(cfg, name, bool(round(raw)))
        elif isinstance(getattr(cfg, name), int):
            setattr(cfg, name, int(round(raw)))
        else:
            setattr(cfg, name, raw)
    return cfg


def save_checkpoint(matcher: Matcher, path) -> None:
    """Write params, the text buffer, and the config echo, sorted by name."""
    records: dict[str, np.ndarray] = {
        name: p.data.astype("<f4", copy=False) for name, p in matcher.params.items()
    }
    if matcher.embeddings is not None:
        records[TEXT_BUFFER_NAME] = matcher.embeddings.astype("<f4", copy=False)
    records.update({k: np.asarray(v, dtype="<f4") for k, v in _echo_records(matcher.cfg).items()})

    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(records)))
        for name in sorted(records):
            arr = np.ascontiguousarray(records[name], dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def read_checkpoint_records(path) -> tuple[int, dict]:
    """Parse a TARCKPT1 file into {name: float32 array}."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic, not a TARCKPT1 file")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", blob, 8)
    records: dict[str, np.ndarray] = {}
    off = 16
    for i in range(count):
        if off + 2 > len(blob):
            raise FormatError(f"{path}: truncated record {i}")
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        if off + 1 > len(blob):
            raise FormatError(f"{path}: truncated record {i}")
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = []
        for _ in range(ndim):
            (d,) = struct.unpack_from("<I", blob, off)
            dims.append(d)
            off += 4
        n_items = int(np.prod(dims)) if dims else 1
        end = off + 4 * n_items
        if end > len(blob):
            raise FormatError(f"{path}: truncated data in record {name!r}")
        records[name] = np.frombuffer(blob, dtype="<f4", count=n_items, offset=off).reshape(dims)
        off = end
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    return version, records


def load_checkpoint(path, base_cfg: RunConfig | None = None) -> Matcher:
    """Rebuild a matcher from a checkpoint; tensor names must match exactly."""
    version, records = read_checkpoint_records(path)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    echo = {k: v for k, v in records.items() if k.startswith("config/")}
    cfg = _decode_echo(echo, base_cfg or RunConfig())

    embeddings = records.get(TEXT_BUFFER_NAME)
    param_records = {
        k: v for k, v in records.items() if not k.startswith("config/") and k != TEXT_BUFFER_NAME
    }

    template = Matcher(cfg, embeddings=embeddings)
    expected = set(template.params)
    got = set(param_records)
    if got - expected:
        raise FormatError(f"{path}: unknown tensors for this config: {sorted(got - expected)[:4]}")
    if expected - got:
        raise FormatError(f"{path}: missing tensors: {sorted(expected - got)[:4]}")
    dtype = ad._DTYPES[cfg.precision]
    for name, arr in param_records.items():
        if template.params[name].shape != arr.shape:
            raise FormatError(
                f"{path}: tensor {name!r} has shape {arr.shape}, expected {template.params[name].shape}"
            )
        template.params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return template
