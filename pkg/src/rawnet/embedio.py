"""Embedding file: versioned binary container plus a textual sidecar index.

Binary layout (little-endian): magic b"RWEM", version u8, u32 count, then
per entry ``u16 id_len | utterance id utf-8 | u32 dim | float32 values``.
The sidecar ``<file>.idx`` lists ``utterance_id<TAB>dim`` per line so the
container can be inspected without parsing binary.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RWEM"
VERSION = 1


def save_embeddings(path, embeddings):
    """Write ``{utterance_id: vector}`` and the sidecar index."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", VERSION, len(embeddings)))
        for utt_id, vec in embeddings.items():
            vec = np.asarray(vec, dtype="<f4")
            encoded = utt_id.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", vec.size))
            fh.write(vec.tobytes())
    with open(path.with_suffix(path.suffix + ".idx"), "w") as fh:
        for utt_id, vec in embeddings.items():
            fh.write(f"{utt_id}\t{np.asarray(vec).size}\n")


def load_embeddings(path):
    """Read an embedding container back into ``{utterance_id: float32 vector}``."""
    out = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        version, count = struct.unpack("<BI", fh.read(5))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported embedding file version {version}")
        for _ in range(count):
            (id_len,) = struct.unpack("<H", fh.read(2))
            utt_id = fh.read(id_len).decode("utf-8")
            (dim,) = struct.unpack("<I", fh.read(4))
            out[utt_id] = np.frombuffer(fh.read(4 * dim), dtype="<f4").copy()
    return out
