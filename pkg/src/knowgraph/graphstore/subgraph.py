"""K-hop enclosing subgraph extraction with double-radius distance labels.

BFS ignores edge direction.  The node set is the union of the k-hop
neighborhoods of both endpoints (center edge present); distance labels are
computed with the center edge removed and capped at k+1, which also encodes
disconnection.  The center edge itself is excluded from the returned
adjacency so candidate non-edges and real edges look alike structurally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from knowgraph.graphstore.snapshots import LABEL_UNLABELED, GraphSnapshot


@dataclass(frozen=True)
class EnclosingSubgraph:
    center_edge: tuple[int, int]  # original snapshot node ids
    nodes: tuple[int, ...]  # original ids, local index = position
    adjacency: tuple[tuple[int, int], ...]  # local directed pairs, center excluded
    dist_labels: np.ndarray  # (n, 2): hops to src, hops to dst; k+1 = far/cut
    label: int
    k: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def _undirected_neighbors(snapshot: GraphSnapshot) -> list[np.ndarray]:
    n = snapshot.n_nodes
    buckets: list[list[int]] = [[] for _ in range(n)]
    for s, d in zip(snapshot.edge_src.tolist(), snapshot.edge_dst.tolist()):
        if s != d:
            buckets[s].append(d)
            buckets[d].append(s)
    return [np.unique(np.asarray(b, dtype=np.int64)) for b in buckets]


def _bfs_depths(
    neighbors: list[np.ndarray], start: int, max_depth: int, skip: tuple[int, int] | None
) -> dict[int, int]:
    """Hop distances from ``start`` up to ``max_depth``; ``skip`` removes one
    undirected edge from the graph."""
    depths = {start: 0}
    frontier = [start]
    for depth in range(1, max_depth + 1):
        nxt = []
        for u in frontier:
            for v in neighbors[u].tolist():
                if skip is not None and {u, v} == set(skip):
                    continue
                if v not in depths:
                    depths[v] = depth
                    nxt.append(v)
        if not nxt:
            break
        frontier = nxt
    return depths


def extract_enclosing_subgraph(
    snapshot: GraphSnapshot, edge: tuple[int, int], k: int
) -> EnclosingSubgraph:
    """Extract the k-hop enclosing subgraph around ``edge`` (ids or names).

    ``edge`` may be a real edge or a candidate non-edge.  Nodes are ordered
    by (dist-to-src, dist-to-dst, original id) so extraction is deterministic.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    src, dst = edge
    ids = snapshot.name_to_id
    if isinstance(src, str):
        src = ids.get(src)
    if isinstance(dst, str):
        dst = ids.get(dst)
    n = snapshot.n_nodes
    if src is None or dst is None or not (0 <= src < n and 0 <= dst < n):
        raise ValueError(f"edge endpoint {edge!r} not in snapshot")
    if src == dst:
        raise ValueError("center edge endpoints must differ")

    neighbors = _undirected_neighbors(snapshot)
    with_edge_src = _bfs_depths(neighbors, src, k, skip=None)
    with_edge_dst = _bfs_depths(neighbors, dst, k, skip=None)
    union = set(with_edge_src) | set(with_edge_dst) | {src, dst}

    center = (src, dst)
    d_src = _bfs_depths(neighbors, src, k, skip=center)
    d_dst = _bfs_depths(neighbors, dst, k, skip=center)
    far = k + 1

    def key(u):
        return (d_src.get(u, far), d_dst.get(u, far), u)

    ordered = sorted(union, key=key)
    local = {u: i for i, u in enumerate(ordered)}
    dist = np.array([[d_src.get(u, far), d_dst.get(u, far)] for u in ordered], dtype=np.int64)

    adjacency = []
    for s, d in zip(snapshot.edge_src.tolist(), snapshot.edge_dst.tolist()):
        if (s, d) == center:
            continue
        if s in local and d in local:
            adjacency.append((local[s], local[d]))

    label = LABEL_UNLABELED
    idx = snapshot.edge_index().get(center)
    if idx is not None:
        label = int(snapshot.labels[idx])

    return EnclosingSubgraph(
        center_edge=center,
        nodes=tuple(ordered),
        adjacency=tuple(adjacency),
        dist_labels=dist,
        label=label,
        k=k,
    )
