"""Embed remote-sensing category prompts and write TARTXT1 library files.

The prompt template is duplicated from the engine and pinned by a
sha256 digest so the two components cannot silently drift.  Category
lists are read from the engine's newline-delimited files and verified
against the published digests for the basic (37) and expanded (224)
vocabularies.

Two encoder families exist: ``hash:<d>`` is a deterministic offline
stand-in (sha256-seeded unit vectors per prompt), while any other
identifier is treated as a Hugging Face CLIP-style text encoder and
loaded through ``transformers`` in inference mode.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# duplicated from the engine on purpose; the digests keep them identical
PROMPT_TEMPLATE = "a satellite image of "
PROMPT_TEMPLATE_SHA256 = "84062632e395e92608f8cd09eb7afd04d180cc94e6c8026424948006ccd4d481"

CATEGORY_FILE_SHA256 = {
    "basic": "5a06f7b94a30a1f78b1de7a91ca3fcc71b68b8994f05ce88ac9e3cf6a495ce64",
    "expanded": "8494b7529a4eef5428468bbaa5cb2d181186652022bc9d01ad9988e2c4c28668",
}
VOCABULARY_SIZES = {"basic": 37, "expanded": 224}

TARTXT_MAGIC = b"TARTXT1\x00"


class ExportError(ValueError):
    """Category list or output contract violation."""


class EncoderError(RuntimeError):
    """The requested text encoder cannot be loaded or run."""


if hashlib.sha256(PROMPT_TEMPLATE.encode()).hexdigest() != PROMPT_TEMPLATE_SHA256:
    raise AssertionError("prompt template drifted from the engine's pinned digest")


@dataclass
class ExportJob:
    categories_path: str
    vocabulary: str  # "basic" | "expanded"
    output_path: str
    encoder: str = "hash:512"

    def validate(self) -> None:
        if self.vocabulary not in VOCABULARY_SIZES:
            raise ExportError(
                f"vocabulary must be one of {sorted(VOCABULARY_SIZES)}, got {self.vocabulary!r}"
            )


def read_categories(path, vocabulary: str) -> list[str]:
    """Read an engine category file and verify it matches the vocabulary."""
    blob = Path(path).read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != CATEGORY_FILE_SHA256[vocabulary]:
        raise ExportError(
            f"{path}: sha256 {digest[:12]}... does not match the engine's "
            f"{vocabulary} vocabulary ({CATEGORY_FILE_SHA256[vocabulary][:12]}...)"
        )
    names = []
    for line in blob.decode("utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.append(line)
    if len(names) != VOCABULARY_SIZES[vocabulary]:
        raise ExportError(
            f"{path}: {len(names)} categories, expected {VOCABULARY_SIZES[vocabulary]}"
        )
    return names


def build_prompts(names: list[str]) -> list[str]:
    return [PROMPT_TEMPLATE + n for n in names]


# ---------------------------------------------------------------------------
# encoders


def _hash_encode(prompts: list[str], d_text: int) -> np.ndarray:
    rows = np.empty((len(prompts), d_text), dtype=np.float32)
    for i, prompt in enumerate(prompts):
        digest = hashlib.sha256(b"clip-export-hash-encoder:" + prompt.encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
        v = rng.standard_normal(d_text)
        rows[i] = (v / np.linalg.norm(v)).astype(np.float32)
    return rows


def _hf_encode(prompts: list[str], model_id: str) -> np.ndarray:
    try:
        import torch
        from transformers import AutoTokenizer, CLIPTextModelWithProjection
    except ImportError as e:
        raise EncoderError(f"transformers/torch unavailable for encoder {model_id!r}: {e}") from e
    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = CLIPTextModelWithProjection.from_pretrained(model_id)
    except Exception as e:
        raise EncoderError(f"cannot load frozen text encoder {model_id!r}: {e}") from e
    model.eval()
    with torch.no_grad():
        tokens = tokenizer(prompts, padding=True, return_tensors="pt")
        out = model(**tokens).text_embeds
    rows = out.cpu().numpy().astype(np.float32)
    return rows / np.linalg.norm(rows.astype(np.float64), axis=1, keepdims=True).astype(np.float32)


def encode_prompts(prompts: list[str], encoder: str) -> np.ndarray:
    """Unit-norm embedding rows, one per prompt, in prompt order."""
    if encoder.startswith("hash:"):
        try:
            d_text = int(encoder.split(":", 1)[1])
        except ValueError as e:
            raise EncoderError(f"bad hash encoder width in {encoder!r}") from e
        if d_text < 8:
            raise EncoderError(f"hash encoder width must be >= 8, got {d_text}")
        return _hash_encode(prompts, d_text)
    return _hf_encode(prompts, encoder)


# ---------------------------------------------------------------------------
# TARTXT1 writing (wire format shared with the engine)


def write_tartxt(names: list[str], rows: np.ndarray, path) -> None:
    import struct

    if rows.shape[0] != len(names):
        raise ExportError(f"{len(names)} names but {rows.shape[0]} embedding rows")
    with open(path, "wb") as fh:
        fh.write(TARTXT_MAGIC)
        fh.write(struct.pack("<II", len(names), rows.shape[1]))
        for name, row in zip(names, rows):
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.ascontiguousarray(row, dtype="<f4").tobytes())


def export(job: ExportJob) -> dict:
    """Run one export; returns the provenance record it also writes."""
    job.validate()
    names = read_categories(job.categories_path, job.vocabulary)
    prompts = build_prompts(names)
    rows = encode_prompts(prompts, job.encoder)
    write_tartxt(names, rows, job.output_path)
    provenance = {
        "encoder": job.encoder,
        "vocabulary": job.vocabulary,
        "k": len(names),
        "d_text": int(rows.shape[1]),
        "template_sha256": PROMPT_TEMPLATE_SHA256,
        "categories_sha256": CATEGORY_FILE_SHA256[job.vocabulary],
    }
    prov_path = str(job.output_path) + ".provenance.json"
    Path(prov_path).write_text(json.dumps(provenance, indent=2) + "\n", encoding="utf-8")
    return provenance
