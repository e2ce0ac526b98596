"""Extractor: metadata parsing, encoders, LMPE0001 bytes, CLI behavior."""

import subprocess
import sys
import types
from pathlib import Path

import numpy as np
import pytest

from embed_extract import (
    DataError,
    EnvironmentFailure,
    HashEncoder,
    UsageError,
    read_embedding_file,
    read_metadata,
    resolve_encoder,
    run_extract,
    write_embedding_file,
)
from embed_extract.cli import main

REF_BIN = Path(__file__).parent / "data" / "ref_embedding.bin"
REF_HEX = (
    "4c4d50453030303103000000020000000000c03f000000c00000"
    "00000000803e0000404000008040"
)


def write_meta(path, rows):
    path.write_text("".join(f"{t}\t{x}\n" for t, x in rows), encoding="utf-8")
    return path


class TestMetadata:
    def test_parses_and_trims(self, tmp_path):
        p = write_meta(tmp_path / "m.tsv", [("a", " scifi drama "), ("b", "comedy")])
        rows = read_metadata(p)
        assert [(r.token, r.text) for r in rows] == [
            ("a", "scifi drama"), ("b", "comedy"),
        ]

    def test_empty_text_lists_offending_tokens(self, tmp_path):
        p = write_meta(
            tmp_path / "m.tsv",
            [("good", "text"), ("bad1", "   "), ("ok", "x"), ("bad2", "")],
        )
        with pytest.raises(DataError, match="bad1.*bad2"):
            read_metadata(p)

    def test_missing_tab_counts_as_empty_text(self, tmp_path):
        (tmp_path / "m.tsv").write_text("solo\n", encoding="utf-8")
        with pytest.raises(DataError, match="solo"):
            read_metadata(tmp_path / "m.tsv")

    def test_duplicate_tokens_rejected(self, tmp_path):
        p = write_meta(tmp_path / "m.tsv", [("a", "x"), ("b", "y"), ("a", "z")])
        with pytest.raises(DataError, match="duplicate.*a"):
            read_metadata(p)

    def test_empty_token_rejected(self, tmp_path):
        (tmp_path / "m.tsv").write_text("\tsome text\n", encoding="utf-8")
        with pytest.raises(DataError, match="line"):
            read_metadata(tmp_path / "m.tsv")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            read_metadata(tmp_path / "nope.tsv")

    def test_no_rows(self, tmp_path):
        (tmp_path / "m.tsv").write_text("", encoding="utf-8")
        with pytest.raises(DataError, match="no metadata rows"):
            read_metadata(tmp_path / "m.tsv")


class TestHashEncoder:
    def test_identical_texts_identical_rows(self):
        enc = HashEncoder(8)
        out = enc.encode(["same", "other", "same"], batch_size=2)
        np.testing.assert_array_equal(out[0], out[2])
        assert not np.array_equal(out[0], out[1])

    def test_deterministic_across_instances(self):
        a = HashEncoder(5).encode(["x"], batch_size=1)
        b = HashEncoder(5).encode(["x"], batch_size=64)
        np.testing.assert_array_equal(a, b)

    def test_resolve_spec(self):
        enc = resolve_encoder("hash:12")
        assert enc.dim == 12 and enc.name == "hash:12"

    def test_bad_specs(self):
        with pytest.raises(UsageError):
            resolve_encoder("hash:abc")
        with pytest.raises(UsageError):
            resolve_encoder("hash:0")


class TestSentenceEncoderResolution:
    def test_unloadable_model_is_environment_failure(self, monkeypatch):
        stub = types.ModuleType("sentence_transformers")

        class Boom:
            def __init__(self, name):
                raise OSError("model not found")

        stub.SentenceTransformer = Boom
        monkeypatch.setitem(sys.modules, "sentence_transformers", stub)
        with pytest.raises(EnvironmentFailure, match="cannot load"):
            resolve_encoder("no-such-model")

    def test_missing_dependency_is_environment_failure(self, monkeypatch):
        monkeypatch.setitem(sys.modules, "sentence_transformers", None)
        with pytest.raises(EnvironmentFailure, match="not installed"):
            resolve_encoder("any-model")

    def test_cli_maps_environment_failure_to_exit_5(self, monkeypatch, tmp_path):
        monkeypatch.setitem(sys.modules, "sentence_transformers", None)
        p = write_meta(tmp_path / "m.tsv", [("a", "x")])
        rc = main([
            "--input", str(p), "--output", str(tmp_path / "e.bin"),
            "--items", str(tmp_path / "items.tsv"), "--model", "some-model",
        ])
        assert rc == 5


class TestFormat:
    def test_reference_vector_bytes(self):
        assert REF_BIN.read_bytes() == bytes.fromhex(REF_HEX)

    def test_writer_reproduces_reference(self, tmp_path):
        vals = np.array([[1.5, -2.0], [0.0, 0.25], [3.0, 4.0]])
        write_embedding_file(vals, tmp_path / "e.bin")
        assert (tmp_path / "e.bin").read_bytes() == bytes.fromhex(REF_HEX)

    def test_round_trip(self, tmp_path):
        vals = np.random.default_rng(0).normal(size=(5, 3)).astype(np.float32)
        write_embedding_file(vals, tmp_path / "e.bin")
        np.testing.assert_array_equal(read_embedding_file(tmp_path / "e.bin"), vals)

    def test_bad_magic_and_truncation(self, tmp_path):
        p = tmp_path / "e.bin"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 8)
        with pytest.raises(DataError, match="LMPE0001"):
            read_embedding_file(p)
        p.write_bytes(bytes.fromhex(REF_HEX)[:-4])
        with pytest.raises(DataError, match="truncated"):
            read_embedding_file(p)

    def test_extract_header_matches_reference_header(self, tmp_path):
        # Same N and d' as the reference vector: the metadata-independent
        # fields (magic, N, d' encoding) must be byte-identical.
        p = write_meta(
            tmp_path / "m.tsv", [("alpha", "aa"), ("beta", "bb"), ("gamma", "cc")]
        )
        run_extract(p, tmp_path / "e.bin", tmp_path / "items.tsv",
                    resolve_encoder("hash:2"))
        got = (tmp_path / "e.bin").read_bytes()
        assert got[:16] == bytes.fromhex(REF_HEX)[:16]


class TestRunExtract:
    def test_outputs_aligned_and_recorded(self, tmp_path):
        rows = [(f"i{r}", f"text number {r}") for r in range(4)]
        p = write_meta(tmp_path / "m.tsv", rows)
        out = tmp_path / "out"
        summary = run_extract(p, out / "e.bin", out / "items.tsv",
                              resolve_encoder("hash:6"))
        assert summary["rows"] == 4 and summary["dim"] == 6
        assert (out / "items.tsv").read_text().splitlines() == [t for t, _ in rows]
        record = (out / "model.txt").read_text()
        assert "model: hash:6" in record and "rows: 4" in record
        vals = read_embedding_file(out / "e.bin")
        expect = HashEncoder(6).encode([x for _, x in rows], batch_size=64)
        np.testing.assert_array_equal(vals, expect)

    def test_rerun_is_byte_identical(self, tmp_path):
        p = write_meta(tmp_path / "m.tsv", [("a", "xx"), ("b", "yy")])
        outs = []
        for name in ("one", "two"):
            d = tmp_path / name
            run_extract(p, d / "e.bin", d / "items.tsv", resolve_encoder("hash:4"))
            outs.append((d / "e.bin").read_bytes())
        assert outs[0] == outs[1]

    def test_batch_size_does_not_change_output(self, tmp_path):
        rows = [(f"i{r}", f"words {r}") for r in range(7)]
        p = write_meta(tmp_path / "m.tsv", rows)
        outs = []
        for batch in (1, 64):
            d = tmp_path / f"b{batch}"
            run_extract(p, d / "e.bin", d / "items.tsv",
                        resolve_encoder("hash:3"), batch_size=batch)
            outs.append((d / "e.bin").read_bytes())
        assert outs[0] == outs[1]

    def test_ten_item_sample_round_trips_through_primary_loader(self, tmp_path):
        corpus = pytest.importorskip("lmprior.corpus")
        tokens = [f"item{r}" for r in range(10)]
        p = write_meta(tmp_path / "m.tsv", [(t, f"metadata for {t}") for t in tokens])
        out = tmp_path / "out"
        run_extract(p, out / "e.bin", out / "items.tsv", resolve_encoder("hash:8"))
        log = corpus.InteractionLog(
            num_users=2,
            num_items=10,
            timelines=[[0, 3, 5], [9, 1]],
            user_tokens=["u0", "u1"],
            item_tokens=list(reversed(tokens)),  # order differs from file rows
        )
        emb = corpus.load_embeddings(out / "e.bin", log, out / "items.tsv")
        assert emb.values.shape == (10, 8)
        direct = read_embedding_file(out / "e.bin")
        for r, tok in enumerate(log.item_tokens):
            np.testing.assert_array_equal(emb.values[r], direct[tokens.index(tok)])


class TestCli:
    def run(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "embed_extract", *map(str, args)],
            capture_output=True, text=True,
        )

    def test_end_to_end(self, tmp_path):
        p = write_meta(tmp_path / "m.tsv", [("a", "xx"), ("b", "yy")])
        proc = self.run(
            "--input", p, "--output", tmp_path / "e.bin",
            "--items", tmp_path / "items.tsv", "--model", "hash:4",
        )
        assert proc.returncode == 0, proc.stderr
        assert "rows: 2" in proc.stdout and "dim: 4" in proc.stdout
        assert read_embedding_file(tmp_path / "e.bin").shape == (2, 4)

    def test_empty_text_exits_3_listing_tokens(self, tmp_path):
        p = write_meta(tmp_path / "m.tsv", [("a", "xx"), ("oops", " ")])
        proc = self.run(
            "--input", p, "--output", tmp_path / "e.bin",
            "--items", tmp_path / "items.tsv", "--model", "hash:4",
        )
        assert proc.returncode == 3
        assert "oops" in proc.stderr

    def test_bad_hash_spec_exits_2(self, tmp_path):
        p = write_meta(tmp_path / "m.tsv", [("a", "xx")])
        proc = self.run(
            "--input", p, "--output", tmp_path / "e.bin",
            "--items", tmp_path / "items.tsv", "--model", "hash:nope",
        )
        assert proc.returncode == 2

    def test_nonpositive_batch_exits_2(self, tmp_path):
        p = write_meta(tmp_path / "m.tsv", [("a", "xx")])
        proc = self.run(
            "--input", p, "--output", tmp_path / "e.bin",
            "--items", tmp_path / "items.tsv", "--model", "hash:4",
            "--batch", 0,
        )
        assert proc.returncode == 2

    def test_missing_input_exits_3(self, tmp_path):
        proc = self.run(
            "--input", tmp_path / "nope.tsv", "--output", tmp_path / "e.bin",
            "--items", tmp_path / "items.tsv", "--model", "hash:4",
        )
        assert proc.returncode == 3
