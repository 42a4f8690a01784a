"""Prompt templating, synthetic embeddings, and TARTXT1 round-trips."""

import hashlib

import numpy as np
import pytest

from osreg.categories import BASIC_CATEGORIES, EXPANDED_CATEGORIES
from osreg.text_library import (
    PROMPT_TEMPLATE,
    PROMPT_TEMPLATE_SHA256,
    FormatError,
    ValidationError,
    build_prompts,
    load_categories,
    load_library,
    save_categories,
    save_library,
    synth_embeddings,
)


class TestPrompts:
    def test_template_expansion(self):
        ps = build_prompts(["forest"])
        assert ps.prompts == ("a satellite image of forest",)

    def test_order_preserved(self):
        ps = build_prompts(["river", "bridge"])
        assert ps.prompts == ("a satellite image of river", "a satellite image of bridge")
        assert ps.categories == ("river", "bridge")

    def test_duplicates_rejected(self):
        with pytest.raises(ValidationError):
            build_prompts(["lake", "lake"])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            build_prompts([])
        with pytest.raises(ValidationError):
            build_prompts(["ok", ""])

    def test_template_hash_pinned(self):
        assert hashlib.sha256(PROMPT_TEMPLATE.encode()).hexdigest() == PROMPT_TEMPLATE_SHA256

    def test_name_extraction_round_trip(self):
        ps = build_prompts(BASIC_CATEGORIES)
        extracted = tuple(p[len(PROMPT_TEMPLATE):] for p in ps.prompts)
        assert extracted == BASIC_CATEGORIES


class TestVocabulary:
    def test_expanded_has_224(self):
        assert len(EXPANDED_CATEGORIES) == 224
        assert len(build_prompts(EXPANDED_CATEGORIES).prompts) == 224

    def test_basic_is_subset(self):
        assert len(BASIC_CATEGORIES) == 37
        assert set(BASIC_CATEGORIES) <= set(EXPANDED_CATEGORIES)


class TestSynthEmbeddings:
    def test_determinism(self):
        a = synth_embeddings(["forest", "river"], d_text=16, seed=3)
        b = synth_embeddings(["forest", "river"], d_text=16, seed=3)
        np.testing.assert_array_equal(a.embeddings, b.embeddings)
        assert a.source == "synthetic"

    def test_unit_rows(self):
        lib = synth_embeddings(EXPANDED_CATEGORIES, d_text=64, seed=0)
        norms = np.linalg.norm(lib.embeddings.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_pairwise_cosines_spread(self):
        lib = synth_embeddings(EXPANDED_CATEGORIES, d_text=64, seed=0)
        gram = lib.embeddings.astype(np.float64) @ lib.embeddings.astype(np.float64).T
        off = gram - np.diag(np.diag(gram))
        assert np.abs(off).max() < 0.6

    def test_small_width_rejected(self):
        with pytest.raises(ValidationError):
            synth_embeddings(["a"], d_text=4)


class TestLibraryFile:
    def test_round_trip_bit_exact(self, tmp_path):
        lib = synth_embeddings(["forest", "river", "bridge"], d_text=16, seed=1)
        p1 = tmp_path / "lib.tartxt"
        p2 = tmp_path / "lib2.tartxt"
        save_library(lib, p1)
        loaded = load_library(p1)
        assert loaded.names == lib.names
        assert loaded.source == "exported"
        np.testing.assert_array_equal(loaded.embeddings, lib.embeddings)
        save_library(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOTTXT00" + b"\x00" * 16)
        with pytest.raises(FormatError):
            load_library(p)

    def test_zero_categories(self, tmp_path):
        import struct

        p = tmp_path / "zero.bin"
        p.write_bytes(b"TARTXT1\x00" + struct.pack("<II", 0, 8))
        with pytest.raises(FormatError):
            load_library(p)

    def test_truncated(self, tmp_path):
        lib = synth_embeddings(["forest", "river"], d_text=16, seed=1)
        p = tmp_path / "t.bin"
        save_library(lib, p)
        blob = p.read_bytes()
        p.write_bytes(blob[:-8])
        with pytest.raises(FormatError):
            load_library(p)

    def test_non_unit_rows_normalized_on_load(self, tmp_path):
        import struct

        p = tmp_path / "scaled.bin"
        row = np.full(8, 2.0, dtype="<f4")
        with open(p, "wb") as fh:
            fh.write(b"TARTXT1\x00")
            fh.write(struct.pack("<II", 1, 8))
            fh.write(struct.pack("<H", 4) + b"blob" + row.tobytes())
        lib = load_library(p)
        np.testing.assert_allclose(np.linalg.norm(lib.embeddings[0]), 1.0, atol=1e-6)

    def test_unicode_names(self, tmp_path):
        lib = synth_embeddings(["fōrêst", "river"], d_text=8, seed=0)
        p = tmp_path / "u.bin"
        save_library(lib, p)
        assert load_library(p).names[0] == "fōrêst"


class TestCategoryFiles:
    def test_round_trip_with_comments(self, tmp_path):
        p = tmp_path / "cats.txt"
        p.write_text("# header comment\nforest\n\nriver\n", encoding="utf-8")
        assert load_categories(p) == ("forest", "river")

    def test_save_load(self, tmp_path):
        p = tmp_path / "cats.txt"
        save_categories(BASIC_CATEGORIES, p)
        assert load_categories(p) == BASIC_CATEGORIES
