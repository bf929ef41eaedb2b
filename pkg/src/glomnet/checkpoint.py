"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"GLOM" | version u32 | sha256(config description) 32 bytes | tensor count u32
    per tensor: name length u16 | name utf-8 | ndim u32 | dims u32 * ndim | float64 data

Tensors are written in sorted name order so identical parameters give
identical files.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .nn import NetworkConfig

MAGIC = b"GLOM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: Dict[str, np.ndarray], cfg: NetworkConfig) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION), cfg.digest(), struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def loads(blob: bytes, cfg: Optional[NetworkConfig] = None) -> Tuple[Dict[str, np.ndarray], bytes]:
    """Returns (tensors, config digest); checks the digest when ``cfg`` is given."""
    try:
        if blob[:4] != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        digest = blob[8:40]
        if cfg is not None and digest != cfg.digest():
            raise CheckpointError("checkpoint was written for a different network config")
        (count,) = struct.unpack_from("<I", blob, 40)
        pos = 44
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(blob, dtype="<f8", count=size, offset=pos)
            pos += 8 * size
            tensors[name] = data.astype(np.float64).reshape(shape)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return tensors, digest


def save(path: Union[str, Path], tensors: Dict[str, np.ndarray], cfg: NetworkConfig) -> None:
    Path(path).write_bytes(dumps(tensors, cfg))


def load(path: Union[str, Path], cfg: Optional[NetworkConfig] = None) -> Dict[str, np.ndarray]:
    return loads(Path(path).read_bytes(), cfg)[0]
