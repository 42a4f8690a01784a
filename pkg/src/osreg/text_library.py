"""Category prompt construction and the text feature library.

The library holds one L2-normalized embedding row per category name.
Rows come either from the deterministic synthetic generator (desk-scale
stand-in for a frozen text encoder) or from a TARTXT1 file written by
an external exporter.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

PROMPT_TEMPLATE = "a satellite image of "
# sha256 of PROMPT_TEMPLATE; exporters duplicate the template and must
# match this digest so the two components cannot drift apart
PROMPT_TEMPLATE_SHA256 = "84062632e395e92608f8cd09eb7afd04d180cc94e6c8026424948006ccd4d481"

TARTXT_MAGIC = b"TARTXT1\x00"


class ValidationError(ValueError):
    """Category or library content violates its contract."""


class FormatError(ValueError):
    """A TARTXT1 or category file is malformed."""


@dataclass(frozen=True)
class PromptSet:
    categories: tuple
    prompts: tuple


@dataclass
class TextFeatureLibrary:
    """K category names aligned with K unit-norm embedding rows."""

    names: tuple
    embeddings: np.ndarray  # [K, d_text] float32
    source: str  # "synthetic" | "exported"

    @property
    def k(self) -> int:
        return len(self.names)

    @property
    def d_text(self) -> int:
        return int(self.embeddings.shape[1])


def _check_categories(categories) -> tuple:
    cats = tuple(categories)
    if not cats:
        raise ValidationError("category list is empty")
    if any(not isinstance(c, str) or not c for c in cats):
        raise ValidationError("category names must be nonempty strings")
    if len(set(cats)) != len(cats):
        dupes = sorted({c for c in cats if cats.count(c) > 1})
        raise ValidationError(f"duplicate category names: {dupes}")
    return cats


def build_prompts(categories) -> PromptSet:
    """Expand category names through the fixed prompt template, in order."""
    cats = _check_categories(categories)
    return PromptSet(categories=cats, prompts=tuple(PROMPT_TEMPLATE + c for c in cats))


def _row_rng(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


def synth_embeddings(categories, d_text: int = 64, seed: int = 0) -> TextFeatureLibrary:
    """Deterministic unit-norm rows seeded per (seed, name) pair."""
    cats = _check_categories(categories)
    if d_text < 8:
        raise ValidationError(f"d_text must be >= 8, got {d_text}")
    rows = np.empty((len(cats), d_text), dtype=np.float32)
    for i, name in enumerate(cats):
        v = _row_rng(seed, name).standard_normal(d_text)
        rows[i] = (v / np.linalg.norm(v)).astype(np.float32)
    return TextFeatureLibrary(names=cats, embeddings=rows, source="synthetic")


def save_library(lib: TextFeatureLibrary, path) -> None:
    with open(path, "wb") as fh:
        fh.write(TARTXT_MAGIC)
        fh.write(struct.pack("<II", lib.k, lib.d_text))
        for name, row in zip(lib.names, lib.embeddings):
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValidationError(f"category name too long: {name[:32]}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.ascontiguousarray(row, dtype="<f4").tobytes())


def load_library(path) -> TextFeatureLibrary:
    """Read a TARTXT1 file; rows off unit norm by more than 1e-5 are renormalized."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != TARTXT_MAGIC:
        raise FormatError(f"{path}: bad magic, not a TARTXT1 file")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    k, d_text = struct.unpack_from("<II", blob, 8)
    if k == 0:
        raise FormatError(f"{path}: library holds zero categories")
    if d_text == 0:
        raise FormatError(f"{path}: zero embedding width")

    names = []
    rows = np.empty((k, d_text), dtype=np.float32)
    off = 16
    for i in range(k):
        if off + 2 > len(blob):
            raise FormatError(f"{path}: truncated record {i}")
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        end = off + nlen + 4 * d_text
        if end > len(blob):
            raise FormatError(f"{path}: truncated record {i}")
        names.append(blob[off : off + nlen].decode("utf-8"))
        rows[i] = np.frombuffer(blob, dtype="<f4", count=d_text, offset=off + nlen)
        off = end
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes after last record")

    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    if np.any(norms == 0):
        raise FormatError(f"{path}: zero embedding row")
    off_unit = np.abs(norms - 1.0) > 1e-5
    if np.any(off_unit):
        rows[off_unit] = (rows[off_unit].astype(np.float64) / norms[off_unit, None]).astype(np.float32)
    return TextFeatureLibrary(names=tuple(names), embeddings=rows, source="exported")


def load_categories(path) -> tuple:
    """Read a newline-delimited category file; '#' comment lines are skipped."""
    names = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            names.append(line)
    return _check_categories(names)


def save_categories(categories, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in categories:
            fh.write(name + "\n")
