"""Full-batch training for the main link scorer and the NTLM edge classifier.

Training snapshots are merged into one disjoint-union graph so each epoch is
a single forward/backward pass.  The main model treats existing edges as
class 1 against an equal count of sampled non-edges (class 0); the auth
model is supervised on each edge's NTLM flag, skipping windows where every
edge has the same class.  Plain gradient descent, best-validation-AUC
parameters returned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from knowgraph.graphstore.snapshots import GraphSnapshot
from knowgraph.learning.gcn import (
    GcnParams,
    edge_logits,
    gcn_forward,
    init_gcn_params,
    normalize_adjacency,
    register_params,
)
from knowgraph.metrics import MetricError, ScoredSet, roc_auc
from knowgraph.numerics import NumericsError, RowSelector, Tape

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 32
    lr: float = 0.01
    epochs: int = 200
    patience: int = 20
    decoder: str = "inner_product"
    max_windows: int | None = None  # evenly-spaced subsample of training windows


@dataclass
class TrainResult:
    params: GcnParams
    val_auc: float
    train_losses: list[float] = field(default_factory=list)
    warnings: int = 0
    best_epoch: int = -1


def negative_sample(
    snapshot: GraphSnapshot, count: int, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Uniform (src, dst) pairs that are not edges and not self-loops."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return []
    n = snapshot.n_nodes
    existing = set(zip(snapshot.edge_src.tolist(), snapshot.edge_dst.tolist()))
    if n * (n - 1) <= len(existing):
        raise ValueError("no non-edges available: graph is complete")
    out: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    attempts = 0
    limit = max(1000, 100 * count)
    while len(out) < count:
        attempts += 1
        if attempts > limit:
            raise ValueError(f"negative sampling failed after {limit} attempts")
        s = int(rng.integers(n))
        d = int(rng.integers(n))
        pair = (s, d)
        if s == d or pair in existing or pair in seen:
            continue
        seen.add(pair)
        out.append(pair)
    return out


@dataclass
class _Batch:
    """A disjoint union of snapshots with scoring edges and targets."""

    x: np.ndarray
    op: object
    src: RowSelector
    dst: RowSelector
    targets: np.ndarray  # column vector


def _subsample(snapshots: list[GraphSnapshot], max_windows: int | None) -> list[GraphSnapshot]:
    if max_windows is None or len(snapshots) <= max_windows:
        return snapshots
    idx = np.linspace(0, len(snapshots) - 1, max_windows).round().astype(int)
    return [snapshots[i] for i in sorted(set(idx.tolist()))]


def _union_batch(
    snapshots: list[GraphSnapshot],
    per_window_edges: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> _Batch:
    xs, srcs, dsts, targets = [], [], [], []
    adj_src, adj_dst = [], []
    offset = 0
    for snap, (s, d, y) in zip(snapshots, per_window_edges):
        xs.append(snap.node_features)
        adj_src.append(snap.edge_src.astype(np.int64) + offset)
        adj_dst.append(snap.edge_dst.astype(np.int64) + offset)
        srcs.append(s + offset)
        dsts.append(d + offset)
        targets.append(y)
        offset += snap.n_nodes
    x = np.vstack(xs)
    op = normalize_adjacency(np.concatenate(adj_src), np.concatenate(adj_dst), offset)
    src = RowSelector(np.concatenate(srcs), offset)
    dst = RowSelector(np.concatenate(dsts), offset)
    y = np.concatenate(targets).astype(np.float64).reshape(-1, 1)
    return _Batch(x=x, op=op, src=src, dst=dst, targets=y)


def _forward_probs(batch: _Batch, params: GcnParams, tape: Tape | None = None):
    tape = tape or Tape()
    x = tape.constant(batch.x)
    tp = register_params(tape, params)
    h = gcn_forward(tape, batch.op, x, tp)
    logits = edge_logits(tape, h, batch.src, batch.dst, tp, params.decoder)
    return tape, tape.sigmoid(logits)


def _batch_auc(batch: _Batch, params: GcnParams) -> float:
    _, probs = _forward_probs(batch, params)
    # Anomaly orientation: positives are the class-0 (non-link / non-NTLM)
    # examples only for the main model; for AUC symmetry we can rank by the
    # raw probability against the stored targets directly.
    try:
        return roc_auc(ScoredSet(probs.data.ravel(), batch.targets.ravel().astype(int)))
    except MetricError:
        return float("nan")


def _gradient_descent(
    train_batch: _Batch,
    val_batch: _Batch | None,
    params: GcnParams,
    cfg: TrainConfig,
) -> TrainResult:
    result = TrainResult(params=params, val_auc=float("nan"))
    best_auc = -np.inf
    since_best = 0
    for epoch in range(cfg.epochs):
        tape, probs = _forward_probs(train_batch, params)
        loss = tape.binary_cross_entropy(probs, train_batch.targets, mean=True)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise NumericsError(f"training diverged at epoch {epoch}")
        result.train_losses.append(loss_val)
        grads = tape.backward(loss)
        arrays = {k: v - cfg.lr * grads[k] for k, v in params.arrays().items()}
        params = params.replace_arrays(arrays)

        if val_batch is not None:
            auc = _batch_auc(val_batch, params)
            if np.isfinite(auc) and auc > best_auc:
                best_auc = auc
                result.params = params
                result.best_epoch = epoch
                since_best = 0
            else:
                since_best += 1
                if since_best > cfg.patience:
                    break
        else:
            result.params = params
            result.best_epoch = epoch
    result.val_auc = best_auc if np.isfinite(best_auc) else float("nan")
    return result


def _link_edges(
    snap: GraphSnapshot, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pos_s = snap.edge_src.astype(np.int64)
    pos_d = snap.edge_dst.astype(np.int64)
    negs = negative_sample(snap, snap.n_edges, rng)
    neg_s = np.array([p[0] for p in negs], dtype=np.int64)
    neg_d = np.array([p[1] for p in negs], dtype=np.int64)
    s = np.concatenate([pos_s, neg_s])
    d = np.concatenate([pos_d, neg_d])
    y = np.concatenate([np.ones(len(pos_s)), np.zeros(len(neg_s))])
    return s, d, y


def train_main(
    train_snaps: list[GraphSnapshot],
    val_snaps: list[GraphSnapshot],
    cfg: TrainConfig,
    seed: int,
) -> TrainResult:
    """Link-prediction training: existing edges high z, sampled non-edges low."""
    if not train_snaps:
        raise ValueError("train split is empty")
    train_snaps = _subsample(train_snaps, cfg.max_windows)
    root = np.random.SeedSequence([seed, 1])
    streams = root.spawn(len(train_snaps) + len(val_snaps))
    rngs = [np.random.Generator(np.random.PCG64(s)) for s in streams]
    train_batch = _union_batch(
        train_snaps, [_link_edges(s, rngs[i]) for i, s in enumerate(train_snaps)]
    )
    val_batch = None
    if val_snaps:
        val_batch = _union_batch(
            val_snaps,
            [_link_edges(s, rngs[len(train_snaps) + i]) for i, s in enumerate(val_snaps)],
        )
    f0 = train_snaps[0].node_features.shape[1]
    init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    params = init_gcn_params(init_rng, f0, cfg.hidden, cfg.decoder)
    return _gradient_descent(train_batch, val_batch, params, cfg)


def _ntlm_edges(snap: GraphSnapshot) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    y = snap.auth_is_ntlm.astype(np.float64)
    if y.size == 0 or y.min() == y.max():
        return None
    return snap.edge_src.astype(np.int64), snap.edge_dst.astype(np.int64), y


def train_auth(
    train_snaps: list[GraphSnapshot],
    val_snaps: list[GraphSnapshot],
    cfg: TrainConfig,
    seed: int,
) -> TrainResult:
    """Supervised NTLM edge classification on existing edges only."""
    if not train_snaps:
        raise ValueError("train split is empty")
    train_snaps = _subsample(train_snaps, cfg.max_windows)
    warnings = 0
    kept, edges = [], []
    for snap in train_snaps:
        item = _ntlm_edges(snap)
        if item is None:
            warnings += 1
            logger.warning("auth training: window %d has a single class; skipped", snap.window_index)
            continue
        kept.append(snap)
        edges.append(item)
    if not kept:
        raise ValueError("auth training: every window was single-class")
    train_batch = _union_batch(kept, edges)
    val_batch = None
    val_kept = [(s, _ntlm_edges(s)) for s in val_snaps]
    val_kept = [(s, e) for s, e in val_kept if e is not None]
    if val_kept:
        val_batch = _union_batch([s for s, _ in val_kept], [e for _, e in val_kept])
    f0 = kept[0].node_features.shape[1]
    init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    params = init_gcn_params(init_rng, f0, cfg.hidden, cfg.decoder)
    result = _gradient_descent(train_batch, val_batch, params, cfg)
    result.warnings = warnings
    return result


def predict_edge_probs(
    params: GcnParams,
    snapshot: GraphSnapshot,
    edges: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Probabilities for the given (or all) edges of one snapshot."""
    if edges is None:
        edges = (snapshot.edge_src.astype(np.int64), snapshot.edge_dst.astype(np.int64))
    src, dst = edges
    batch = _Batch(
        x=snapshot.node_features,
        op=normalize_adjacency(snapshot.edge_src, snapshot.edge_dst, snapshot.n_nodes),
        src=RowSelector(src, snapshot.n_nodes),
        dst=RowSelector(dst, snapshot.n_nodes),
        targets=np.zeros((len(src), 1)),
    )
    _, probs = _forward_probs(batch, params)
    return probs.data.ravel()
