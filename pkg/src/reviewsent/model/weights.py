"""Weight file I/O.

Layout (little-endian)::

    b"STSF1" | uint64 header length | UTF-8 JSON header | raw array payload

The header lists every array (name, shape, dtype, byte offset, byte length)
together with the payload size and its CRC-32.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .network import WeightBundle, param_shapes

MAGIC = b"STSF1"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class WeightFileError(ValueError):
    pass


def save_weights(w: WeightBundle, path: str | Path, dtype: str | None = None) -> None:
    """Write ``w``; ``dtype`` ("f32"/"f64") casts every array, default keeps each array's own."""
    entries, chunks, offset = [], [], 0
    for name in sorted(w):
        arr = np.asarray(w[name])
        if dtype is not None:
            code = dtype
        elif arr.dtype == np.float32:
            code = "f32"
        else:
            code = "f64"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code,
                        "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = json.dumps({"arrays": entries, "payload_bytes": len(payload),
                         "crc32": zlib.crc32(payload)}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)


def read_weights(path: str | Path) -> WeightBundle:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise WeightFileError(f"{path}: bad magic, not a weight file")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise WeightFileError(f"{path}: checksum error, file truncated in header")
    (hlen,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise WeightFileError(f"{path}: checksum error, header unreadable") from None
    payload = raw[pos + hlen:]
    if len(payload) != header["payload_bytes"] or zlib.crc32(payload) != header["crc32"]:
        raise WeightFileError(f"{path}: checksum error, payload corrupt or truncated")
    w = {}
    for e in header["arrays"]:
        dt = _DTYPES[e["dtype"]]
        chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
        w[e["name"]] = np.frombuffer(chunk, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
    return w


def load_weights(path: str | Path, cfg: ModelConfig) -> WeightBundle:
    """Read a weight file and validate every array against ``cfg``."""
    w = read_weights(path)
    expected = param_shapes(cfg)
    for name, shape in expected.items():
        if name not in w:
            raise WeightFileError(f"{path}: missing array {name}")
        if tuple(w[name].shape) != shape:
            raise WeightFileError(f"{path}: array {name} has shape {tuple(w[name].shape)}, expected {shape}")
    extra = sorted(set(w) - set(expected))
    if extra:
        raise WeightFileError(f"{path}: unexpected arrays {', '.join(extra)}")
    return w
