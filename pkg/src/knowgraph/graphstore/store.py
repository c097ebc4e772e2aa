"""Snapshot store: one file per window, JSON header line + CSV edge table.

The header carries window_index, t_start, t_end, N, E and the node name
list; the table has columns src,dst,auth_is_ntlm,event_count,label with
dense node ids.  Files are UTF-8 with LF endings and written in sorted
window order, so identical snapshot lists produce byte-identical stores.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from knowgraph.graphstore.snapshots import GraphSnapshot

EDGE_COLUMNS = "src,dst,auth_is_ntlm,event_count,label"


class StoreError(ValueError):
    pass


def _window_filename(index: int) -> str:
    return f"window_{index:06d}.snap"


def write_store(snapshots: list[GraphSnapshot], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for snap in sorted(snapshots, key=lambda s: s.window_index):
        header = {
            "window_index": snap.window_index,
            "t_start": snap.t_start,
            "t_end": snap.t_end,
            "N": snap.n_nodes,
            "E": snap.n_edges,
            "names": list(snap.names),
        }
        lines = [json.dumps(header, sort_keys=True, separators=(",", ":")), EDGE_COLUMNS]
        for i in range(snap.n_edges):
            lines.append(
                f"{snap.edge_src[i]},{snap.edge_dst[i]},"
                f"{int(snap.auth_is_ntlm[i])},{snap.event_count[i]},{snap.labels[i]}"
            )
        path = out / _window_filename(snap.window_index)
        path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return out


def read_store(store_dir: str | Path) -> list[GraphSnapshot]:
    store = Path(store_dir)
    if not store.is_dir():
        raise StoreError(f"snapshot store {store} is not a directory")
    snapshots = []
    for path in sorted(store.glob("window_*.snap")):
        text = path.read_text(encoding="utf-8")
        lines = text.splitlines()
        if len(lines) < 2:
            raise StoreError(f"{path.name}: truncated snapshot file")
        header = json.loads(lines[0])
        if lines[1] != EDGE_COLUMNS:
            raise StoreError(f"{path.name}: unexpected edge table columns {lines[1]!r}")
        e = header["E"]
        rows = lines[2 : 2 + e]
        if len(rows) != e:
            raise StoreError(f"{path.name}: expected {e} edge rows, found {len(rows)}")
        src = np.empty(e, dtype=np.int32)
        dst = np.empty(e, dtype=np.int32)
        ntlm = np.empty(e, dtype=bool)
        count = np.empty(e, dtype=np.int64)
        labels = np.empty(e, dtype=np.int8)
        for i, row in enumerate(rows):
            parts = row.split(",")
            if len(parts) != 5:
                raise StoreError(f"{path.name}: bad edge row {row!r}")
            src[i], dst[i] = int(parts[0]), int(parts[1])
            ntlm[i] = parts[2] == "1"
            count[i] = int(parts[3])
            labels[i] = int(parts[4])
        window = header["window_index"]
        secs = header["t_end"] - header["t_start"]
        first = np.full(e, header["t_start"], dtype=np.int64)
        last = np.full(e, max(header["t_start"], header["t_end"] - 1), dtype=np.int64)
        snapshots.append(
            GraphSnapshot(
                window_index=window,
                t_start=header["t_start"],
                t_end=header["t_end"],
                names=tuple(header["names"]),
                edge_src=src,
                edge_dst=dst,
                auth_is_ntlm=ntlm,
                event_count=count,
                first_time=first,
                last_time=last,
                labels=labels,
            )
        )
    return snapshots
