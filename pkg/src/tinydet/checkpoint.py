"""Checkpoint container: magic 'SMEC', u32 version, then tagged sections.

Each section is (u32 name length, utf-8 name, u64 byte length, payload),
with every payload a tensor snapshot in the 'SMET' format from
`tinydet.tensor`.  Text sections (config echo, class names) are stored as
rank-1 tensors of byte values, which float32 represents exactly, so the
whole container round-trips bit-for-bit.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .tensor import load_tensor, save_tensor

MAGIC = b"SMEC"
VERSION = 1


def save_checkpoint(path, sections: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(sections)))
        for name, arr in sections.items():
            buf = io.BytesIO()
            save_tensor(buf, arr)
            payload = buf.getvalue()
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        sections = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode()
            (plen,) = struct.unpack("<Q", f.read(8))
            sections[name] = load_tensor(io.BytesIO(f.read(plen)))
        return sections


def text_to_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode(), dtype=np.uint8).astype(np.float32)


def array_to_text(arr: np.ndarray) -> str:
    return bytes(arr.astype(np.uint8)).decode()
