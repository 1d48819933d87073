"""Embedding tables: binary persistence, validation, and the cosine primitive.

File layout (all integers little-endian):

    magic  "TFCV" (4 bytes)
    u16    format version (= 1)
    u32    d, the embedding dimension
    u64    record count
    per record:
        u16    id byte length, then UTF-8 id bytes
        u8     kind (0 video, 1 text, 2 frame_sequence)
        u32    T, number of rows (1 unless frame_sequence)
        f32    T * d values, row-major

Vectors are stored as 32-bit floats; every dot product and norm in this
module accumulates in 64-bit. A sidecar JSON manifest (same basename,
".manifest.json") lists ids and kinds for humans and external tools; the
binary file is authoritative.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    DegenerateVectorError,
    FormatError,
    MissingIdError,
    ShapeError,
    ValidationError,
)

MAGIC = b"TFCV"
FORMAT_VERSION = 1

KIND_VIDEO = "video"
KIND_TEXT = "text"
KIND_FRAME_SEQUENCE = "frame_sequence"

_KIND_TO_CODE = {KIND_VIDEO: 0, KIND_TEXT: 1, KIND_FRAME_SEQUENCE: 2}
_CODE_TO_KIND = {v: k for k, v in _KIND_TO_CODE.items()}


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale ``v`` to unit L2 norm, accumulating the norm in float64.

    Raises DegenerateVectorError on a zero vector.
    """
    v64 = np.asarray(v, dtype=np.float64)
    if v64.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {v64.shape}")
    norm = float(np.sqrt(np.dot(v64, v64)))
    if norm == 0.0:
        raise DegenerateVectorError("cannot normalize a zero vector")
    if not np.isfinite(norm):
        raise ValidationError("vector contains non-finite values")
    return v64 / norm


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two nonzero vectors, accumulated in float64."""
    u64 = np.asarray(u, dtype=np.float64)
    v64 = np.asarray(v, dtype=np.float64)
    if u64.shape != v64.shape or u64.ndim != 1:
        raise ShapeError(f"dimension mismatch: {u64.shape} vs {v64.shape}")
    nu = float(np.sqrt(np.dot(u64, u64)))
    nv = float(np.sqrt(np.dot(v64, v64)))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine undefined for zero vectors")
    return float(np.dot(u64, v64) / (nu * nv))


@dataclass
class EmbeddingRecord:
    """One embedded item: a clip, a text, or a per-frame sequence.

    ``vector`` always has dimension d. For frame sequences it is the mean
    of the frame rows; ``frames`` holds the stored T x d matrix.
    """

    id: str
    vector: np.ndarray
    kind: str = KIND_VIDEO
    frames: np.ndarray | None = None

    def validate(self, dim: int) -> None:
        if self.kind not in _KIND_TO_CODE:
            raise ValidationError(f"unknown record kind {self.kind!r}")
        if (self.frames is not None) != (self.kind == KIND_FRAME_SEQUENCE):
            raise ValidationError(
                f"record {self.id!r}: frames present iff kind is frame_sequence"
            )
        if self.vector.ndim != 1 or self.vector.shape[0] != dim:
            raise ShapeError(
                f"record {self.id!r}: vector shape {self.vector.shape}, expected ({dim},)"
            )
        rows = self.frames if self.frames is not None else self.vector.reshape(1, -1)
        if rows.ndim != 2 or rows.shape[1] != dim or rows.shape[0] < 1:
            raise ShapeError(f"record {self.id!r}: bad frame matrix shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValidationError(f"record {self.id!r}: non-finite values")
        # Zero rows poison cosine and indicate upstream extraction failure.
        if np.any(np.all(rows == 0.0, axis=1)):
            raise ValidationError(f"record {self.id!r}: zero vector")


@dataclass
class EmbeddingTable:
    """Immutable-after-construction, id-indexed set of embeddings."""

    dim: int
    records: list[EmbeddingRecord] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_records(cls, dim: int, records: list[EmbeddingRecord]) -> "EmbeddingTable":
        if dim <= 0:
            raise ValidationError(f"dimension must be positive, got {dim}")
        table = cls(dim=dim)
        for rec in records:
            rec.validate(dim)
            if rec.id in table.index:
                raise ValidationError(f"duplicate id {rec.id!r}")
            table.index[rec.id] = len(table.records)
            table.records.append(rec)
        return table

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, rec_id: str) -> bool:
        return rec_id in self.index

    def get(self, rec_id: str) -> EmbeddingRecord:
        pos = self.index.get(rec_id)
        if pos is None:
            raise MissingIdError(f"id {rec_id!r} not in table")
        return self.records[pos]

    def vector(self, rec_id: str) -> np.ndarray:
        return self.get(rec_id).vector

    def ids(self) -> list[str]:
        return [rec.id for rec in self.records]

    def matrix(self, ids: list[str] | None = None) -> np.ndarray:
        """Stack vectors (float64) for the given ids, table order by default."""
        recs = self.records if ids is None else [self.get(i) for i in ids]
        return np.stack([r.vector for r in recs]).astype(np.float64)

    def checksum(self) -> str:
        """Content hash of all payload bytes, for mutation checks."""
        import hashlib

        h = hashlib.sha256()
        for rec in self.records:
            h.update(rec.id.encode("utf-8"))
            rows = rec.frames if rec.frames is not None else rec.vector.reshape(1, -1)
            h.update(np.ascontiguousarray(rows, dtype=np.float32).tobytes())
        return h.hexdigest()

    def subtable(self, ids: list[str]) -> "EmbeddingTable":
        """New table restricted to the given ids, in the given order."""
        return EmbeddingTable.from_records(self.dim, [self.get(i) for i in ids])


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptionError(f"truncated file while reading {what}")
    return buf


def load_table(path: str | Path) -> EmbeddingTable:
    """Load and validate a binary embedding file."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        (dim,) = struct.unpack("<I", _read_exact(f, 4, "dimension"))
        if dim == 0:
            raise FormatError("dimension must be positive")
        (count,) = struct.unpack("<Q", _read_exact(f, 8, "record count"))

        records: list[EmbeddingRecord] = []
        for i in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(f, 2, f"record {i} id length"))
            try:
                rec_id = _read_exact(f, id_len, f"record {i} id").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptionError(f"record {i}: id is not valid UTF-8") from exc
            (kind_code,) = struct.unpack("<B", _read_exact(f, 1, f"record {i} kind"))
            kind = _CODE_TO_KIND.get(kind_code)
            if kind is None:
                raise CorruptionError(f"record {rec_id!r}: unknown kind code {kind_code}")
            (t,) = struct.unpack("<I", _read_exact(f, 4, f"record {i} frame count"))
            if t < 1:
                raise CorruptionError(f"record {rec_id!r}: T must be >= 1, got {t}")
            if kind != KIND_FRAME_SEQUENCE and t != 1:
                raise CorruptionError(
                    f"record {rec_id!r}: T={t} but kind {kind!r} requires T=1"
                )
            payload = _read_exact(f, 4 * t * dim, f"record {rec_id!r} payload")
            rows = np.frombuffer(payload, dtype="<f4").reshape(t, dim)
            if kind == KIND_FRAME_SEQUENCE:
                rec = EmbeddingRecord(
                    id=rec_id,
                    vector=rows.mean(axis=0, dtype=np.float64).astype(np.float32),
                    kind=kind,
                    frames=rows.copy(),
                )
            else:
                rec = EmbeddingRecord(id=rec_id, vector=rows[0].copy(), kind=kind)
            records.append(rec)

        if f.read(1):
            raise CorruptionError("trailing bytes after last record")

    return EmbeddingTable.from_records(dim, records)


def save_table(table: EmbeddingTable, path: str | Path, source: dict | None = None) -> None:
    """Write the binary file plus its sidecar manifest.

    Round-trips byte-exactly with load_table; the manifest is regenerated
    deterministically (no timestamps).
    """
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<I", table.dim))
        f.write(struct.pack("<Q", len(table.records)))
        for rec in table.records:
            id_bytes = rec.id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise ValidationError(f"id too long: {rec.id[:40]!r}...")
            f.write(struct.pack("<H", len(id_bytes)))
            f.write(id_bytes)
            f.write(struct.pack("<B", _KIND_TO_CODE[rec.kind]))
            rows = rec.frames if rec.frames is not None else rec.vector.reshape(1, -1)
            f.write(struct.pack("<I", rows.shape[0]))
            f.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())
    tmp.replace(path)

    manifest = {
        "dim": table.dim,
        "count": len(table.records),
        "records": [
            {
                "id": rec.id,
                "kind": rec.kind,
                "frames": int(rec.frames.shape[0]) if rec.frames is not None else 1,
            }
            for rec in table.records
        ],
        "source": source or {},
    }
    manifest_path = path.with_suffix(".manifest.json")
    manifest_tmp = manifest_path.with_name(manifest_path.name + ".tmp")
    manifest_tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    manifest_tmp.replace(manifest_path)
