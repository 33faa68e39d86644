"""Versioned binary embedding store keyed by (sample id, modality).

Embeddings are cached once and reused for every text query, so the on-disk
format is the contract shared with exporters and test fixtures:

    magic "LCEB" | version u16 | d u32 | count u64 |
    count x [id_len u16 | id utf-8 | modality u8 | d x f32 little-endian]

Vectors are stored as f32; retrieval math accumulates in f64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

STORE_MAGIC = b"LCEB"
STORE_VERSION = 1


class Modality(str, Enum):
    IMAGE = "image"
    LIDAR = "lidar"
    TEXT = "text"


MODALITY_CODES = {Modality.IMAGE: 0, Modality.LIDAR: 1, Modality.TEXT: 2}
CODE_MODALITIES = {code: m for m, code in MODALITY_CODES.items()}


class StoreError(Exception):
    pass


class BadMagicError(StoreError):
    pass


class UnsupportedVersionError(StoreError):
    pass


class TruncatedFileError(StoreError):
    pass


class MalformedRecordError(StoreError):
    pass


class DimensionMismatchError(StoreError):
    pass


class NonFiniteVectorError(StoreError):
    pass


@dataclass
class Embedding:
    id: str
    modality: Modality
    vector: np.ndarray

    def __post_init__(self):
        if not self.id:
            raise StoreError("embedding id must be non-empty")
        self.modality = Modality(self.modality)
        vec = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        if vec.size == 0:
            raise StoreError("embedding vector must be non-empty")
        if not np.isfinite(vec).all():
            raise NonFiniteVectorError(f"embedding {self.id!r} contains non-finite values")
        self.vector = vec


@dataclass
class EmbeddingStore:
    """In-memory upsert map over (id, modality) with a fixed dimension d.

    Iteration is always ascending by (id, modality) so downstream tie-breaks
    are reproducible.
    """

    _records: dict = field(default_factory=dict)
    d: int | None = None

    def put(self, e: Embedding) -> None:
        if self.d is None:
            self.d = int(e.vector.size)
        elif e.vector.size != self.d:
            raise DimensionMismatchError(
                f"embedding {e.id!r} has d={e.vector.size}, store has d={self.d}"
            )
        self._records[(e.id, e.modality)] = e.vector.copy()

    def get(self, id: str, modality: Modality):
        """Exact stored embedding, or None when the key is absent."""
        key = (id, Modality(modality))
        vec = self._records.get(key)
        if vec is None:
            return None
        return Embedding(key[0], key[1], vec.copy())

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key) -> bool:
        id, modality = key
        return (id, Modality(modality)) in self._records

    def keys(self):
        return sorted(self._records, key=lambda k: (k[0], k[1].value))

    def items(self):
        for key in self.keys():
            yield key[0], key[1], self._records[key]

    def ids(self, modality: Modality | None = None):
        if modality is None:
            return sorted({k[0] for k in self._records})
        modality = Modality(modality)
        return sorted(k[0] for k in self._records if k[1] is modality)

    def modality_items(self, modality: Modality):
        """(id, vector) pairs of one modality, ascending by id."""
        modality = Modality(modality)
        return [
            (k[0], self._records[k])
            for k in self.keys()
            if k[1] is modality
        ]

    def merge(self, other: "EmbeddingStore") -> None:
        for id, modality, vec in other.items():
            self.put(Embedding(id, modality, vec))


def write_store_file(store: EmbeddingStore, path) -> None:
    d = store.d if store.d is not None else 0
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<H", STORE_VERSION))
        fh.write(struct.pack("<I", d))
        fh.write(struct.pack("<Q", len(store)))
        for id, modality, vec in store.items():
            id_bytes = id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise StoreError(f"id too long: {id[:32]!r}...")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<B", MODALITY_CODES[modality]))
            fh.write(vec.astype("<f4").tobytes())


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"{self.path}: needed {n} bytes at offset {self.pos}, "
                f"only {len(self.data) - self.pos} remain"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def read_store_file(path) -> EmbeddingStore:
    return read_store_bytes(Path(path).read_bytes(), path)


def read_store_bytes(data: bytes, path="<memory>") -> EmbeddingStore:
    reader = _Reader(data, path)
    magic = reader.take(4)
    if magic != STORE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    (version,) = struct.unpack("<H", reader.take(2))
    if version != STORE_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    (d,) = struct.unpack("<I", reader.take(4))
    (count,) = struct.unpack("<Q", reader.take(8))
    store = EmbeddingStore()
    if d:
        store.d = d
    for i in range(count):
        (id_len,) = struct.unpack("<H", reader.take(2))
        try:
            id = reader.take(id_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedRecordError(f"{path}: record {i}: invalid utf-8 id") from exc
        (code,) = struct.unpack("<B", reader.take(1))
        if code not in CODE_MODALITIES:
            raise MalformedRecordError(f"{path}: record {i}: unknown modality code {code}")
        vec = np.frombuffer(reader.take(4 * d), dtype="<f4")
        try:
            store.put(Embedding(id, CODE_MODALITIES[code], vec))
        except StoreError as exc:
            raise MalformedRecordError(f"{path}: record {i}: {exc}") from exc
    if reader.pos != len(reader.data):
        raise MalformedRecordError(
            f"{path}: {len(reader.data) - reader.pos} trailing bytes after {count} records"
        )
    if len(store) != count:
        raise MalformedRecordError(f"{path}: duplicate (id, modality) keys")
    return store
