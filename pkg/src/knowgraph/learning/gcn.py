"""Two-layer GCN over snapshot graphs with inner-product or bilinear edge heads.

The propagation operator is the symmetric normalization
``D^{-1/2} (A + A^T + I) D^{-1/2}`` applied through edge-list scatter, so
isolated nodes keep a self-loop and the operator is symmetric.  The main
edge scorer follows the link-prediction convention: z is the probability the
edge is a normal link, so LOW z flags an anomaly and ``1 - z`` is exposed as
the anomaly score.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from knowgraph.graphstore.snapshots import GraphSnapshot
from knowgraph.numerics import GraphOperator, RowSelector, Tape, Tensor

DECODER_INNER = "inner_product"
DECODER_BILINEAR = "bilinear"


@dataclass(frozen=True)
class GcnParams:
    W1: np.ndarray
    b1: np.ndarray  # 1 x H
    W2: np.ndarray
    b2: np.ndarray
    decoder: str = DECODER_INNER
    bilinear: np.ndarray | None = None  # H x H when decoder == bilinear

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}
        if self.bilinear is not None:
            out["bilinear"] = self.bilinear
        return out

    def replace_arrays(self, arrays: dict[str, np.ndarray]) -> "GcnParams":
        return replace(self, **{k: v for k, v in arrays.items()})

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]


def init_gcn_params(rng: np.random.Generator, f0: int, hidden: int, decoder: str = DECODER_INNER) -> GcnParams:
    def glorot(rows, cols):
        scale = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-scale, scale, size=(rows, cols))

    bilinear = None
    if decoder == DECODER_BILINEAR:
        bilinear = glorot(hidden, hidden)
    elif decoder != DECODER_INNER:
        raise ValueError(f"unknown decoder {decoder!r}")
    return GcnParams(
        W1=glorot(f0, hidden),
        b1=np.zeros((1, hidden)),
        W2=glorot(hidden, hidden),
        b2=np.zeros((1, hidden)),
        decoder=decoder,
        bilinear=bilinear,
    )


def normalize_adjacency(
    edge_src: np.ndarray, edge_dst: np.ndarray, n_nodes: int
) -> GraphOperator:
    """Symmetric normalized operator over A + A^T + I as a sparse matmul."""
    a = sparse.csr_matrix(
        (np.ones(len(edge_src)), (edge_src, edge_dst)), shape=(n_nodes, n_nodes)
    )
    m = a + a.T + sparse.identity(n_nodes, format="csr")
    deg = np.asarray(m.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    scale = sparse.diags(inv_sqrt)
    return GraphOperator((scale @ m @ scale).tocsr())


def snapshot_operator(snapshot: GraphSnapshot) -> GraphOperator:
    if snapshot.n_nodes == 0:
        raise ValueError("cannot build an operator for an empty snapshot")
    return normalize_adjacency(snapshot.edge_src, snapshot.edge_dst, snapshot.n_nodes)


def gcn_forward(tape: Tape, op: GraphOperator, x: Tensor, params: dict[str, Tensor]) -> Tensor:
    """H1 = relu(A_hat X W1 + b1); returns A_hat H1 W2 + b2."""
    h1 = tape.relu(tape.add(tape.scatter_matmul(op, tape.matmul(x, params["W1"])), params["b1"]))
    return tape.add(tape.scatter_matmul(op, tape.matmul(h1, params["W2"])), params["b2"])


def edge_logits(
    tape: Tape,
    h: Tensor,
    src: RowSelector | np.ndarray,
    dst: RowSelector | np.ndarray,
    params: dict[str, Tensor],
    decoder: str,
) -> Tensor:
    hu = tape.gather_rows(h, src)
    hv = tape.gather_rows(h, dst)
    if decoder == DECODER_BILINEAR:
        hu = tape.matmul(hu, params["bilinear"])
    elif decoder != DECODER_INNER:
        raise ValueError(f"unknown decoder {decoder!r}")
    ones = tape.constant(np.ones((hu.cols, 1)))
    return tape.matmul(tape.mul(hu, hv), ones)


def register_params(tape: Tape, params) -> dict[str, Tensor]:
    return {name: tape.parameter(arr, name) for name, arr in params.arrays().items()}


@dataclass(frozen=True)
class EdgeScore:
    edge: tuple[int, int]
    z: float  # probability the edge is a normal link
    logit: float

    @property
    def anomaly(self) -> float:
        return 1.0 - self.z


def score_edge(
    params: GcnParams, snapshot: GraphSnapshot, edge: tuple[int, int]
) -> EdgeScore:
    """Convenience single-edge forward pass (fresh tape, no gradients)."""
    src, dst = edge
    tape = Tape()
    x = tape.constant(snapshot.node_features)
    tp = register_params(tape, params)
    h = gcn_forward(tape, snapshot_operator(snapshot), x, tp)
    logits = edge_logits(
        tape, h, np.array([src]), np.array([dst]), tp, params.decoder
    )
    z = tape.sigmoid(logits).data[0, 0]
    return EdgeScore(edge=(src, dst), z=float(z), logit=float(logits.data[0, 0]))
