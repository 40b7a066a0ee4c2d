"""Binary checkpoint format (little-endian).

Layout: magic "MGTC", format version u32, tensor count u32; per tensor:
name length u16, UTF-8 name, ndim u8, dims u32 x ndim, float64 data; then
one u32-length-prefixed UTF-8 key=value block holding the model and train
configuration (keys prefixed "model." / "train.").
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MGTC"
VERSION = 1


def save_checkpoint(path, state: dict, config_text: str) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(state)))
        for name, arr in state.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
        blob = config_text.encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def _read(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated checkpoint while reading {what} "
                          f"at offset {fh.tell() - len(data)}")
    return data


def load_checkpoint(path) -> tuple[dict, str]:
    """Returns (name -> float64 array, config key=value text)."""
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise FormatError("bad checkpoint magic (expected MGTC) at offset 0")
        version, count = struct.unpack("<II", _read(fh, 8, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(fh, 2, "name length"))
            name = _read(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read(fh, 1, "ndim"))
            dims = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim, "dims"))
            n_bytes = 8 * int(np.prod(dims, dtype=np.int64)) if ndim else 8
            data = np.frombuffer(_read(fh, n_bytes, f"tensor '{name}'"), dtype="<f8")
            state[name] = data.reshape(dims).astype(np.float64)
        (blob_len,) = struct.unpack("<I", _read(fh, 4, "config length"))
        config_text = _read(fh, blob_len, "config block").decode("utf-8")
    return state, config_text
