"""Binary parameter checkpoints with a plain-text sidecar manifest.

Layout of the binary file (all integers little-endian ``uint32``)::

    b"NVIOCKPT"  version  count
    repeated count times:
        name_len  name(utf-8)  rank  extent_0 .. extent_{rank-1}  float64 values (little-endian)

The manifest ``<path>.manifest`` lists ``name shape`` lines followed by any
extra ``key = value`` metadata.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"NVIOCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest")


def save_checkpoint(path, params: Mapping[str, np.ndarray], metadata: Mapping[str, str] | None = None) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        value = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        chunks.append(np.ascontiguousarray(value).tobytes())
    path.write_bytes(b"".join(chunks))

    lines = ["# parameters"]
    lines += [f"{name} {'x'.join(str(d) for d in np.shape(v)) or 'scalar'}" for name, v in params.items()]
    if metadata:
        lines.append("# metadata")
        lines += [f"{k} = {v}" for k, v in metadata.items()]
    manifest_path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    buf = path.read_bytes()
    if not buf.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    offset = len(MAGIC)
    version, count = struct.unpack_from("<II", buf, offset)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset += 8
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        name = buf[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", buf, offset)
        offset += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        params[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * n
    if offset != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - offset} trailing bytes")

    metadata: dict[str, str] = {}
    mpath = manifest_path(path)
    if mpath.exists():
        section = None
        for line in mpath.read_text().splitlines():
            if line.startswith("#"):
                section = line[1:].strip()
            elif section == "metadata" and "=" in line:
                key, _, value = line.partition("=")
                metadata[key.strip()] = value.strip()
    return params, metadata
