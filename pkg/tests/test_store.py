"""Binary table round-trips, validation failures, and the cosine primitive."""

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covrbench.errors import (
    CorruptionError,
    DegenerateVectorError,
    FormatError,
    MissingIdError,
    ShapeError,
    ValidationError,
)
from covrbench.store import (
    EmbeddingRecord,
    EmbeddingTable,
    cosine,
    load_table,
    normalize,
    save_table,
)

from conftest import make_table


def fsum_dot(u, v):
    """Extended-precision dot product, independent of numpy."""
    return math.fsum(float(a) * float(b) for a, b in zip(u, v))


def fsum_norm(u):
    return math.sqrt(math.fsum(float(a) * float(a) for a in u))


class TestNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(normalize(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_unit_vector_unchanged(self):
        u = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(normalize(u), u)

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateVectorError):
            normalize(np.zeros(4))

    def test_matches_fsum_oracle(self, rng):
        for _ in range(50):
            v = rng.normal(size=17)
            got = normalize(v)
            want = v / fsum_norm(v)
            np.testing.assert_allclose(got, want, atol=1e-12)
            assert abs(fsum_norm(got) - 1.0) < 1e-6

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=32))
    def test_idempotent(self, values):
        v = np.array(values)
        if fsum_norm(v) < 1e-9:
            return
        once = normalize(v)
        twice = normalize(once)
        np.testing.assert_allclose(once, twice, atol=1e-9)


class TestCosine:
    def test_self_similarity(self, rng):
        v = rng.normal(size=8)
        assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_matches_fsum_oracle(self, rng):
        for _ in range(100):
            u = rng.normal(size=33)
            v = rng.normal(size=33)
            want = fsum_dot(u, v) / (fsum_norm(u) * fsum_norm(v))
            assert cosine(u, v) == pytest.approx(want, abs=1e-12)

    def test_symmetric_and_bounded(self, rng):
        for _ in range(50):
            u, v = rng.normal(size=12), rng.normal(size=12)
            assert cosine(u, v) == pytest.approx(cosine(v, u), abs=1e-15)
            assert abs(cosine(u, v)) <= 1.0 + 1e-9

    @given(
        st.floats(1e-3, 1e3),
        st.floats(1e-3, 1e3),
        st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=50)
    def test_scale_invariant(self, a, b, seed):
        g = np.random.default_rng(seed)
        u, v = g.normal(size=6), g.normal(size=6)
        assert cosine(a * u, b * v) == pytest.approx(cosine(u, v), abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            cosine(np.ones(3), np.ones(4))

    def test_zero_vector(self):
        with pytest.raises(DegenerateVectorError):
            cosine(np.zeros(3), np.ones(3))


class TestBinaryFormat:
    def test_empty_table_roundtrip(self, tmp_path):
        table = EmbeddingTable.from_records(4, [])
        path = tmp_path / "empty.tfcv"
        save_table(table, path)
        loaded = load_table(path)
        assert loaded.dim == 4
        assert len(loaded) == 0

    def test_roundtrip_byte_identical(self, tmp_path, rng):
        table = make_table(rng.normal(size=(7, 16)))
        p1 = tmp_path / "a.tfcv"
        p2 = tmp_path / "b.tfcv"
        save_table(table, p1)
        save_table(load_table(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_frame_sequence_roundtrip(self, tmp_path, rng):
        frames = rng.normal(size=(5, 8)).astype(np.float32)
        rec = EmbeddingRecord(
            id="seq", vector=frames.mean(axis=0), kind="frame_sequence", frames=frames
        )
        table = EmbeddingTable.from_records(8, [rec])
        path = tmp_path / "seq.tfcv"
        save_table(table, path)
        loaded = load_table(path)
        got = loaded.get("seq")
        np.testing.assert_array_equal(got.frames, frames)
        np.testing.assert_allclose(
            got.vector, frames.astype(np.float64).mean(axis=0).astype(np.float32)
        )

    def test_index_covers_all_ids(self, tmp_path, rng):
        table = make_table(rng.normal(size=(100, 64)))
        path = tmp_path / "big.tfcv"
        save_table(table, path)
        loaded = load_table(path)
        assert len(loaded) == 100
        for i in range(100):
            rec_id = f"id{i:03d}"
            assert loaded.index[rec_id] == i
            np.testing.assert_array_equal(loaded.vector(rec_id), table.vector(rec_id))

    def test_independent_writer_matches(self, tmp_path, rng):
        """File produced by a from-scratch struct writer loads identically."""
        dim = 6
        vectors = rng.normal(size=(3, dim)).astype(np.float32)
        path = tmp_path / "hand.tfcv"
        with open(path, "wb") as f:
            f.write(b"TFCV")
            f.write(struct.pack("<H", 1))
            f.write(struct.pack("<I", dim))
            f.write(struct.pack("<Q", 3))
            for i, vec in enumerate(vectors):
                ident = f"v{i}".encode()
                f.write(struct.pack("<H", len(ident)))
                f.write(ident)
                f.write(struct.pack("<B", 0))
                f.write(struct.pack("<I", 1))
                f.write(vec.astype("<f4").tobytes())
        loaded = load_table(path)
        assert loaded.ids() == ["v0", "v1", "v2"]
        for i in range(3):
            np.testing.assert_array_equal(loaded.vector(f"v{i}"), vectors[i])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tfcv"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(FormatError):
            load_table(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.tfcv"
        path.write_bytes(b"TFCV" + struct.pack("<H", 9) + struct.pack("<I", 4) + struct.pack("<Q", 0))
        with pytest.raises(FormatError):
            load_table(path)

    def test_truncated_payload(self, tmp_path, rng):
        table = make_table(rng.normal(size=(2, 8)))
        path = tmp_path / "trunc.tfcv"
        save_table(table, path)
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(CorruptionError):
            load_table(path)

    def test_trailing_garbage(self, tmp_path, rng):
        table = make_table(rng.normal(size=(2, 8)))
        path = tmp_path / "trail.tfcv"
        save_table(table, path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(CorruptionError):
            load_table(path)

    def test_nan_payload_rejected(self, tmp_path):
        vec = np.array([1.0, np.nan, 0.5], dtype=np.float32)
        path = tmp_path / "nan.tfcv"
        with open(path, "wb") as f:
            f.write(b"TFCV" + struct.pack("<H", 1) + struct.pack("<I", 3) + struct.pack("<Q", 1))
            f.write(struct.pack("<H", 1) + b"a" + struct.pack("<B", 0) + struct.pack("<I", 1))
            f.write(vec.tobytes())
        with pytest.raises(ValidationError):
            load_table(path)

    def test_zero_vector_rejected_at_load(self, tmp_path):
        path = tmp_path / "zero.tfcv"
        with open(path, "wb") as f:
            f.write(b"TFCV" + struct.pack("<H", 1) + struct.pack("<I", 2) + struct.pack("<Q", 1))
            f.write(struct.pack("<H", 1) + b"z" + struct.pack("<B", 0) + struct.pack("<I", 1))
            f.write(np.zeros(2, dtype=np.float32).tobytes())
        with pytest.raises(ValidationError):
            load_table(path)

    def test_manifest_sidecar_written(self, tmp_path, rng):
        table = make_table(rng.normal(size=(2, 4)))
        path = tmp_path / "t.tfcv"
        save_table(table, path, source={"note": "test"})
        manifest = tmp_path / "t.manifest.json"
        assert manifest.exists()
        import json

        obj = json.loads(manifest.read_text())
        assert obj["count"] == 2 and obj["dim"] == 4
        assert obj["source"] == {"note": "test"}


class TestTableInvariants:
    def test_duplicate_ids_rejected(self, rng):
        rec = EmbeddingRecord(id="x", vector=rng.normal(size=3).astype(np.float32))
        with pytest.raises(ValidationError):
            EmbeddingTable.from_records(3, [rec, rec])

    def test_dim_mismatch_rejected(self, rng):
        rec = EmbeddingRecord(id="x", vector=rng.normal(size=5).astype(np.float32))
        with pytest.raises(ShapeError):
            EmbeddingTable.from_records(3, [rec])

    def test_missing_id_lookup(self, rng):
        table = make_table(rng.normal(size=(2, 3)))
        with pytest.raises(MissingIdError):
            table.vector("nope")

    def test_subtable_preserves_order(self, rng):
        table = make_table(rng.normal(size=(5, 3)))
        sub = table.subtable(["id003", "id001"])
        assert sub.ids() == ["id003", "id001"]
