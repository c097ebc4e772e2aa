"""Model checkpoints: one JSON header line + little-endian float64 blob.

Round trips are bit-exact: arrays are serialized in the header's declared
order as raw '<f8' bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path: str | Path, kind: str, arrays: dict[str, np.ndarray], meta: dict | None = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    order = list(arrays)
    header = {
        "kind": kind,
        "order": order,
        "shapes": {name: list(arrays[name].shape) for name in order},
        "meta": meta or {},
    }
    blob = b"".join(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes() for name in order)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)
    return path


def load_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray], dict]:
    path = Path(path)
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path.name}: missing header line")
    header = json.loads(raw[:nl].decode("utf-8"))
    blob = raw[nl + 1 :]
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name in header["order"]:
        shape = tuple(header["shapes"][name])
        size = int(np.prod(shape)) * 8
        if offset + size > len(blob):
            raise CheckpointError(f"{path.name}: blob too short for array {name!r}")
        arrays[name] = (
            np.frombuffer(blob[offset : offset + size], dtype="<f8").reshape(shape).copy()
        )
        offset += size
    if offset != len(blob):
        raise CheckpointError(f"{path.name}: {len(blob) - offset} trailing bytes in blob")
    return header["kind"], arrays, header.get("meta", {})
