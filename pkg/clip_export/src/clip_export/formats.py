"""Writer for the pointbridge embedding-store format.

The format is the adapter's only contract with the retrieval engine, so it is
implemented here from the published layout rather than imported:

    magic "LCEB" | version u16=1 | d u32 | count u64 |
    count x [id_len u16 | id utf-8 | modality u8 | d x f32 little-endian]

Records are sorted ascending by (id, modality name); modality codes are
0=image, 1=lidar, 2=text.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"LCEB"
VERSION = 1
MODALITY_CODES = {"image": 0, "lidar": 1, "text": 2}


class FormatError(ValueError):
    pass


def write_store(records, path) -> int:
    """Write (id, modality, vector) triples; returns the record count.

    All vectors must share one dimension and be finite; duplicate
    (id, modality) keys are rejected.
    """
    cleaned = []
    d = None
    seen = set()
    for id, modality, vector in records:
        if not id:
            raise FormatError("record id must be non-empty")
        if modality not in MODALITY_CODES:
            raise FormatError(f"unknown modality {modality!r}")
        vec = np.asarray(vector, dtype=np.float32).reshape(-1)
        if d is None:
            d = vec.size
        if vec.size != d or d == 0:
            raise FormatError(f"record {id!r}: dimension {vec.size}, expected {d}")
        if not np.isfinite(vec).all():
            raise FormatError(f"record {id!r}: non-finite values")
        key = (id, modality)
        if key in seen:
            raise FormatError(f"duplicate record {key}")
        seen.add(key)
        cleaned.append((id, modality, vec))
    cleaned.sort(key=lambda r: (r[0], r[1]))

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", d or 0))
        fh.write(struct.pack("<Q", len(cleaned)))
        for id, modality, vec in cleaned:
            id_bytes = id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise FormatError(f"id too long: {id[:32]!r}...")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<B", MODALITY_CODES[modality]))
            fh.write(vec.astype("<f4").tobytes())
    return len(cleaned)
