"""Precomputed embedding files (NAVE format).

Layout, little-endian::

    b"NAVE" | version u16 | kind u8 | dim u32 | count u64
    count x ( id_len u16, id, slide_len u16, slide, has_grid u8,
              [row u32, col u32], label u8, dim x f32 )

Vectors are kept exactly as the encoder produced them; nothing here
normalizes.
"""
from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, FormatError, IntegrityError, MissingTerm
from .term_pool import TermPool, normalize_term

MAGIC = b"NAVE"
VERSION = 1

_HEADER = struct.Struct("<4sHBIQ")
_U16 = struct.Struct("<H")
_U8 = struct.Struct("<B")
_GRID = struct.Struct("<II")


class Kind(enum.IntEnum):
    IMAGE_PATCHES = 0
    TERM_TEXTS = 1


class Label(enum.IntEnum):
    NORMAL = 0
    ABNORMAL = 1
    UNKNOWN = 255

    @property
    def text(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise IntegrityError(f"unknown label {value!r}") from None
        return cls(int(value))


@dataclass(eq=False)
class EmbeddingRecord:
    id: str
    vector: np.ndarray
    grid: Optional[tuple[int, int]] = None
    label: Label = Label.UNKNOWN
    slide_id: Optional[str] = None

    def __post_init__(self):
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float32).reshape(-1)
        self.label = Label.parse(self.label)
        if self.grid is not None:
            row, col = (int(v) for v in self.grid)
            if row < 0 or col < 0:
                raise IntegrityError(f"record {self.id!r}: negative grid coordinate")
            self.grid = (row, col)
        if self.slide_id == "":
            self.slide_id = None

    def __eq__(self, other):
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.grid == other.grid
            and self.label == other.label
            and self.slide_id == other.slide_id
            and self.vector.tobytes() == other.vector.tobytes()
        )

    def check(self, dim: int) -> None:
        if self.vector.shape[0] != dim:
            raise DimensionError(
                f"record {self.id!r}: length {self.vector.shape[0]} != declared dim {dim}"
            )
        if not np.all(np.isfinite(self.vector)):
            raise IntegrityError(f"record {self.id!r}: non-finite component")
        if not np.any(self.vector):
            raise IntegrityError(f"record {self.id!r}: zero-norm vector")


@dataclass(eq=False)
class EmbeddingSet:
    dim: int
    records: Sequence[EmbeddingRecord] = field(default_factory=tuple)
    kind: Kind = Kind.IMAGE_PATCHES

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.records = tuple(self.records)
        if self.dim < 1:
            raise DimensionError(f"dim must be positive, got {self.dim}")
        seen = set()
        for rec in self.records:
            rec.check(self.dim)
            if rec.id in seen:
                raise IntegrityError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            if self.kind is Kind.TERM_TEXTS and rec.grid is not None:
                raise IntegrityError(f"record {rec.id!r}: term-text records carry no grid")

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return self.dim == other.dim and self.kind == other.kind and list(self.records) == list(other.records)

    @cached_property
    def vectors(self) -> np.ndarray:
        """All vectors stacked as a read-only ``(len, dim)`` float32 array."""
        if not self.records:
            out = np.zeros((0, self.dim), dtype=np.float32)
        else:
            out = np.stack([r.vector for r in self.records])
        out.setflags(write=False)
        return out

    @property
    def labels(self) -> list[Label]:
        return [r.label for r in self.records]

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]


def _put_str(buf: list, s: Optional[str]) -> None:
    b = (s or "").encode("utf-8")
    if len(b) > 0xFFFF:
        raise IntegrityError("string field longer than 65535 bytes")
    buf.append(_U16.pack(len(b)))
    buf.append(b)


def encode_embedding_set(eset: EmbeddingSet) -> bytes:
    out = [_HEADER.pack(MAGIC, VERSION, int(eset.kind), eset.dim, len(eset.records))]
    for rec in eset.records:
        _put_str(out, rec.id)
        _put_str(out, rec.slide_id)
        if rec.grid is None:
            out.append(_U8.pack(0))
        else:
            out.append(_U8.pack(1))
            out.append(_GRID.pack(*rec.grid))
        out.append(_U8.pack(int(rec.label)))
        out.append(rec.vector.astype("<f4").tobytes())
    return b"".join(out)


def write_embedding_set(eset: EmbeddingSet, path) -> None:
    Path(path).write_bytes(encode_embedding_set(eset))


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file: need {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def string(self) -> str:
        (n,) = self.unpack(_U16)
        try:
            return bytes(self.take(n)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 at offset {self.pos}") from exc


def decode_embedding_set(data: bytes) -> EmbeddingSet:
    rd = _Reader(data)
    magic, version, kind, dim, count = rd.unpack(_HEADER)
    if magic != MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise FormatError(f"unknown kind {kind}") from None
    vec_bytes = 4 * dim
    records = []
    for _ in range(count):
        rid = rd.string()
        slide = rd.string() or None
        (has_grid,) = rd.unpack(_U8)
        if has_grid not in (0, 1):
            raise FormatError(f"record {rid!r}: bad has_grid flag {has_grid}")
        grid = rd.unpack(_GRID) if has_grid else None
        (label,) = rd.unpack(_U8)
        try:
            label = Label(label)
        except ValueError:
            raise FormatError(f"record {rid!r}: bad label byte {label}") from None
        vec = np.frombuffer(rd.take(vec_bytes), dtype="<f4").astype(np.float32)
        records.append(EmbeddingRecord(rid, vec, grid, label, slide))
    if rd.pos != len(rd.data):
        raise FormatError(
            f"{len(rd.data) - rd.pos} trailing bytes after {count} declared records"
        )
    return EmbeddingSet(dim, records, kind)


def read_embedding_set(path) -> EmbeddingSet:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return decode_embedding_set(data)


def align_text_embeddings(pool: TermPool, eset: EmbeddingSet) -> np.ndarray:
    """Text vectors reordered to match ``pool.terms``, shape ``(len(pool), dim)``."""
    if eset.kind is not Kind.TERM_TEXTS:
        raise FormatError("expected a term-text embedding set")
    by_id = {normalize_term(r.id): r.vector for r in eset.records}
    missing = [t for t in pool.terms if t not in by_id]
    if missing:
        raise MissingTerm(f"no embedding for term {missing[0]!r}" + (
            f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    extra = set(by_id) - set(pool.terms)
    if extra:
        warnings.warn(f"{len(extra)} text embeddings have no matching {pool.category.value} term",
                      stacklevel=2)
    return np.stack([by_id[t] for t in pool.terms])
