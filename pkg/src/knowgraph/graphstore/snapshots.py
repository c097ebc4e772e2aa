"""Deduplicated temporal graph snapshots with structural node features.

Within a window, an edge is identified by the (src_computer, dst_computer)
pair; repeated events on the same pair merge into one edge with an event
count.  Node ids are dense per snapshot, assigned in lexicographic name
order so snapshot construction is a pure function of the event multiset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from knowgraph.graphstore.events import AuthEvent, RedteamEvent

LABEL_BENIGN = 0
LABEL_MALICIOUS = 1
LABEL_UNLABELED = 2

DEGREE_BUCKETS = 16
FEATURE_DIM = 2 * DEGREE_BUCKETS + 1  # in/out degree buckets + NTLM fraction


@dataclass(frozen=True)
class EdgeAttrs:
    auth_is_ntlm: bool
    event_count: int
    first_time: int
    last_time: int
    numeric_attrs: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.event_count < 1:
            raise ValueError("event_count must be >= 1")
        if self.first_time > self.last_time:
            raise ValueError("first_time > last_time")


@dataclass(frozen=True)
class GraphSnapshot:
    """One deduplicated directed graph for a time window.

    Edge attributes are stored column-oriented; ``edge_attrs(i)`` gives the
    per-edge view.  Instances are treated as immutable after construction;
    relabeling returns a new snapshot.
    """

    window_index: int
    t_start: int
    t_end: int
    names: tuple[str, ...]
    edge_src: np.ndarray  # int32, dense node ids
    edge_dst: np.ndarray
    auth_is_ntlm: np.ndarray  # bool per edge
    event_count: np.ndarray  # int64 per edge
    first_time: np.ndarray
    last_time: np.ndarray
    labels: np.ndarray  # int8: LABEL_* per edge
    numeric_attrs: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n, e = len(self.names), self.edge_src.size
        if self.edge_dst.size != e or self.labels.size != e:
            raise ValueError("edge arrays must have equal length")
        if e and (self.edge_src.max() >= n or self.edge_dst.max() >= n):
            raise ValueError("edge endpoint out of range")
        pairs = set(zip(self.edge_src.tolist(), self.edge_dst.tolist()))
        if len(pairs) != e:
            raise ValueError("duplicate (src, dst) pair in snapshot")

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    @property
    def n_edges(self) -> int:
        return int(self.edge_src.size)

    @property
    def name_to_id(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}

    def edge_attrs(self, i: int) -> EdgeAttrs:
        return EdgeAttrs(
            auth_is_ntlm=bool(self.auth_is_ntlm[i]),
            event_count=int(self.event_count[i]),
            first_time=int(self.first_time[i]),
            last_time=int(self.last_time[i]),
            numeric_attrs={k: float(v[i]) for k, v in self.numeric_attrs.items()},
        )

    def edge_index(self) -> dict[tuple[int, int], int]:
        return {
            (int(s), int(d)): i
            for i, (s, d) in enumerate(zip(self.edge_src, self.edge_dst))
        }

    @property
    def node_features(self) -> np.ndarray:
        return degree_bucket_features(self)

    def with_labels(self, labels: np.ndarray) -> "GraphSnapshot":
        return replace(self, labels=np.asarray(labels, dtype=np.int8))


def degree_bucket_features(snapshot: GraphSnapshot) -> np.ndarray:
    """Default node features: one-hot log2 degree buckets (in and out, 16
    each) plus the event-count-weighted NTLM fraction of incident edges."""
    n = snapshot.n_nodes
    x = np.zeros((n, FEATURE_DIM))
    out_deg = np.bincount(snapshot.edge_src, minlength=n)
    in_deg = np.bincount(snapshot.edge_dst, minlength=n)

    def bucket(deg):
        # Exact buckets for small degrees, log2 spacing beyond, capped at 15.
        deg = np.asarray(deg, dtype=np.float64)
        small = deg < 8
        coarse = 8 + np.floor(np.log2(np.maximum(deg, 8) / 8.0))
        return np.where(small, deg, np.minimum(coarse, DEGREE_BUCKETS - 1)).astype(np.int64)

    x[np.arange(n), bucket(in_deg)] = 1.0
    x[np.arange(n), DEGREE_BUCKETS + bucket(out_deg)] = 1.0

    counts = snapshot.event_count.astype(np.float64)
    ntlm_counts = counts * snapshot.auth_is_ntlm
    tot = np.bincount(snapshot.edge_src, weights=counts, minlength=n)
    tot += np.bincount(snapshot.edge_dst, weights=counts, minlength=n)
    hit = np.bincount(snapshot.edge_src, weights=ntlm_counts, minlength=n)
    hit += np.bincount(snapshot.edge_dst, weights=ntlm_counts, minlength=n)
    x[:, -1] = hit / np.maximum(tot, 1.0)
    return x


def build_snapshots(events: Iterable[AuthEvent], window_secs: int) -> list[GraphSnapshot]:
    """Assign events to windows of ``window_secs`` and merge repeated edges.

    An event at time t goes to window floor(t / window_secs).  Only windows
    that contain at least one event are emitted, in increasing window order.
    Merged edges carry the event count, the NTLM flag if any merged event was
    NTLM, and the first/last event times.  Labels start as LABEL_UNLABELED.
    """
    if window_secs <= 0:
        raise ValueError(f"window_secs must be positive, got {window_secs}")
    windows: dict[int, dict[tuple[str, str], list]] = {}
    for ev in sorted(events, key=lambda e: e.time):
        w = ev.time // window_secs
        acc = windows.setdefault(w, {})
        key = (ev.src_computer, ev.dst_computer)
        slot = acc.get(key)
        if slot is None:
            acc[key] = [ev.is_ntlm, 1, ev.time, ev.time]
        else:
            slot[0] = slot[0] or ev.is_ntlm
            slot[1] += 1
            slot[2] = min(slot[2], ev.time)
            slot[3] = max(slot[3], ev.time)

    snapshots = []
    for w in sorted(windows):
        acc = windows[w]
        names = tuple(sorted({c for pair in acc for c in pair}))
        ids = {name: i for i, name in enumerate(names)}
        order = sorted(acc, key=lambda p: (ids[p[0]], ids[p[1]]))
        e = len(order)
        src = np.fromiter((ids[p[0]] for p in order), dtype=np.int32, count=e)
        dst = np.fromiter((ids[p[1]] for p in order), dtype=np.int32, count=e)
        ntlm = np.fromiter((acc[p][0] for p in order), dtype=bool, count=e)
        count = np.fromiter((acc[p][1] for p in order), dtype=np.int64, count=e)
        first = np.fromiter((acc[p][2] for p in order), dtype=np.int64, count=e)
        last = np.fromiter((acc[p][3] for p in order), dtype=np.int64, count=e)
        snapshots.append(
            GraphSnapshot(
                window_index=int(w),
                t_start=int(w) * window_secs,
                t_end=(int(w) + 1) * window_secs,
                names=names,
                edge_src=src,
                edge_dst=dst,
                auth_is_ntlm=ntlm,
                event_count=count,
                first_time=first,
                last_time=last,
                labels=np.full(e, LABEL_UNLABELED, dtype=np.int8),
            )
        )
    return snapshots


def label_malicious_edges(
    snapshots: Sequence[GraphSnapshot], redteam: Sequence[RedteamEvent]
) -> tuple[list[GraphSnapshot], int]:
    """Mark edges matched by red-team records Malicious, all others Benign.

    A record matches an edge when the (src, dst) computer pair is present in
    the snapshot whose window contains the record's time.  Records that match
    no window, an unknown computer, or a missing edge increment the returned
    warning counter instead of labeling anything.
    """
    by_window = {s.window_index: i for i, s in enumerate(snapshots)}
    labels = [np.full(s.n_edges, LABEL_BENIGN, dtype=np.int8) for s in snapshots]
    edge_maps: dict[int, dict] = {}
    name_maps: dict[int, dict] = {}
    warnings = 0
    for ev in redteam:
        matched = False
        for i in _windows_containing(snapshots, by_window, ev.time):
            snap = snapshots[i]
            if i not in name_maps:
                name_maps[i] = snap.name_to_id
                edge_maps[i] = snap.edge_index()
            ids = name_maps[i]
            s_id, d_id = ids.get(ev.src_computer), ids.get(ev.dst_computer)
            if s_id is None or d_id is None:
                continue
            e = edge_maps[i].get((s_id, d_id))
            if e is None:
                continue
            labels[i][e] = LABEL_MALICIOUS
            matched = True
        if not matched:
            warnings += 1
    return [s.with_labels(lab) for s, lab in zip(snapshots, labels)], warnings


def _windows_containing(snapshots, by_window, time: int) -> list[int]:
    if not snapshots:
        return []
    secs = snapshots[0].t_end - snapshots[0].t_start
    i = by_window.get(time // secs)
    return [] if i is None else [i]
