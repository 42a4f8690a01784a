"""Exporter contracts: vocabulary checks, file format, determinism."""

import hashlib
import os
import struct
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from clip_export.export import (
    CATEGORY_FILE_SHA256,
    PROMPT_TEMPLATE,
    PROMPT_TEMPLATE_SHA256,
    EncoderError,
    ExportError,
    ExportJob,
    build_prompts,
    encode_prompts,
    export,
    read_categories,
)

REPO = Path(__file__).resolve().parents[2]
BASIC = REPO / "data" / "categories_basic.txt"
EXPANDED = REPO / "data" / "categories_expanded.txt"


def parse_tartxt(path):
    """Independent byte-level parser of the wire format."""
    blob = Path(path).read_bytes()
    assert blob[:8] == b"TARTXT1\x00"
    k, d = struct.unpack_from("<II", blob, 8)
    names, rows, off = [], [], 16
    for _ in range(k):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        names.append(blob[off : off + nlen].decode("utf-8"))
        off += nlen
        rows.append(np.frombuffer(blob, dtype="<f4", count=d, offset=off))
        off += 4 * d
    assert off == len(blob)
    return names, np.stack(rows)


class TestTemplate:
    def test_pinned_digest(self):
        assert hashlib.sha256(PROMPT_TEMPLATE.encode()).hexdigest() == PROMPT_TEMPLATE_SHA256

    def test_prompt_expansion(self):
        assert build_prompts(["forest"]) == ["a satellite image of forest"]


class TestCategories:
    def test_engine_files_verify(self):
        assert len(read_categories(BASIC, "basic")) == 37
        assert len(read_categories(EXPANDED, "expanded")) == 224

    def test_tampered_file_rejected(self, tmp_path):
        bad = tmp_path / "cats.txt"
        bad.write_text(BASIC.read_text() + "extra category\n")
        with pytest.raises(ExportError, match="sha256"):
            read_categories(bad, "basic")

    def test_wrong_vocabulary_rejected(self):
        with pytest.raises(ExportError, match="sha256"):
            read_categories(BASIC, "expanded")


class TestHashEncoder:
    def test_unit_rows_and_order(self):
        prompts = build_prompts(["forest", "river", "lake"])
        rows = encode_prompts(prompts, "hash:64")
        assert rows.shape == (3, 64)
        np.testing.assert_allclose(np.linalg.norm(rows.astype(np.float64), axis=1), 1.0, atol=1e-5)
        again = encode_prompts(prompts, "hash:64")
        np.testing.assert_array_equal(rows, again)

    def test_bad_width(self):
        with pytest.raises(EncoderError):
            encode_prompts(["a"], "hash:4")
        with pytest.raises(EncoderError):
            encode_prompts(["a"], "hash:xyz")

    def test_unavailable_hub_encoder_errors(self, monkeypatch):
        monkeypatch.setenv("HF_HUB_OFFLINE", "1")
        monkeypatch.setenv("TRANSFORMERS_OFFLINE", "1")
        with pytest.raises(EncoderError, match="cannot load"):
            encode_prompts(["a prompt"], "no-such-org/no-such-clip-model")


class TestExport:
    def test_expanded_header_k224(self, tmp_path):
        out = tmp_path / "lib224.tartxt"
        prov = export(ExportJob(str(EXPANDED), "expanded", str(out), "hash:512"))
        names, rows = parse_tartxt(out)
        assert prov["k"] == 224
        assert len(names) == 224
        assert rows.shape == (224, 512)
        assert names == read_categories(EXPANDED, "expanded")
        np.testing.assert_allclose(np.linalg.norm(rows.astype(np.float64), axis=1), 1.0, atol=1e-5)

    def test_basic_header_k37(self, tmp_path):
        out = tmp_path / "lib37.tartxt"
        prov = export(ExportJob(str(BASIC), "basic", str(out), "hash:512"))
        names, rows = parse_tartxt(out)
        assert prov["k"] == 37 and len(names) == 37

    def test_reexport_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        export(ExportJob(str(EXPANDED), "expanded", str(a), "hash:128"))
        export(ExportJob(str(EXPANDED), "expanded", str(b), "hash:128"))
        assert a.read_bytes() == b.read_bytes()

    def test_provenance_sidecar(self, tmp_path):
        import json

        out = tmp_path / "lib.tartxt"
        export(ExportJob(str(BASIC), "basic", str(out), "hash:64"))
        prov = json.loads((out.with_name(out.name + ".provenance.json")).read_text())
        assert prov["encoder"] == "hash:64"
        assert prov["vocabulary"] == "basic"
        assert prov["template_sha256"] == PROMPT_TEMPLATE_SHA256

    def test_bad_vocabulary_rejected(self, tmp_path):
        with pytest.raises(ExportError):
            export(ExportJob(str(BASIC), "huge", str(tmp_path / "x"), "hash:64"))


class TestEngineIntegration:
    def test_engine_loads_export(self, tmp_path):
        # the TARTXT1 file is the component boundary; the engine's loader
        # must accept it with names in order and unit rows
        osreg = pytest.importorskip("osreg.text_library")
        out = tmp_path / "lib.tartxt"
        export(ExportJob(str(EXPANDED), "expanded", str(out), "hash:512"))
        lib = osreg.load_library(out)
        assert lib.source == "exported"
        assert lib.k == 224
        assert lib.d_text == 512
        assert list(lib.names) == read_categories(EXPANDED, "expanded")
        norms = np.linalg.norm(lib.embeddings.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)

    def test_cli_round(self, tmp_path):
        out = tmp_path / "cli_lib.tartxt"
        proc = subprocess.run(
            [
                sys.executable, "-m", "clip_export.cli",
                "--categories", str(BASIC), "--vocabulary", "basic",
                "--out", str(out), "--encoder", "hash:64",
            ],
            capture_output=True,
            text=True,
            cwd=REPO / "exporter",
        )
        assert proc.returncode == 0, proc.stderr
        names, rows = parse_tartxt(out)
        assert len(names) == 37
