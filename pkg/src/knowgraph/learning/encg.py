"""Edge classifier over k-hop enclosing subgraphs.

Node features are a learned embedding of the (dist-to-src, dist-to-dst)
label pair, so the classifier sees only local structure around the candidate
edge.  Subgraphs are batched as one disjoint graph; the readout mean-pools
node states per subgraph and applies a linear head.  Training positives are
malicious edges when the training windows contain any, otherwise sampled
non-edges stand in as pseudo-anomalies (the pre-attack regime, where the
task reduces to structural link plausibility).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from knowgraph.graphstore.snapshots import LABEL_MALICIOUS, GraphSnapshot
from knowgraph.graphstore.subgraph import EnclosingSubgraph, extract_enclosing_subgraph
from knowgraph.learning.gcn import GcnParams, gcn_forward, init_gcn_params, normalize_adjacency
from knowgraph.learning.training import TrainConfig, negative_sample
from knowgraph.metrics import MetricError, ScoredSet, roc_auc
from knowgraph.numerics import NumericsError, Tape, graph_operator


@dataclass(frozen=True)
class EncgConfig:
    k: int = 2
    embed_dim: int = 8
    hidden: int = 16
    lr: float = 0.01
    epochs: int = 100
    patience: int = 10
    examples_per_window: int = 32
    max_windows: int | None = None


@dataclass(frozen=True)
class EncgParams:
    embed: np.ndarray  # (k+2)^2 x embed_dim
    gcn: GcnParams
    readout_w: np.ndarray  # hidden x 1
    readout_b: np.ndarray  # 1 x 1
    k: int

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"embed": self.embed, "readout_w": self.readout_w, "readout_b": self.readout_b}
        out.update({f"gcn.{k}": v for k, v in self.gcn.arrays().items()})
        return out

    def replace_arrays(self, arrays: dict[str, np.ndarray]) -> "EncgParams":
        gcn_arrays = {k[4:]: v for k, v in arrays.items() if k.startswith("gcn.")}
        rest = {k: v for k, v in arrays.items() if not k.startswith("gcn.")}
        return replace(self, gcn=self.gcn.replace_arrays(gcn_arrays), **rest)


def init_encg_params(rng: np.random.Generator, cfg: EncgConfig) -> EncgParams:
    side = cfg.k + 2
    return EncgParams(
        embed=rng.normal(0.0, 0.1, size=(side * side, cfg.embed_dim)),
        gcn=init_gcn_params(rng, cfg.embed_dim, cfg.hidden),
        readout_w=np.zeros((cfg.hidden, 1)),
        readout_b=np.zeros((1, 1)),
        k=cfg.k,
    )


@dataclass
class _SubgraphBatch:
    label_idx: np.ndarray  # embedding row per node
    op: object  # propagation operator over the union graph
    pool: object  # per-subgraph mean pooling operator
    targets: np.ndarray  # n_graphs x 1


def _batch_subgraphs(subgraphs: list[EnclosingSubgraph], labels: np.ndarray, k: int) -> _SubgraphBatch:
    side = k + 2
    label_idx, adj_s, adj_d, pool_s, pool_d, pool_c = [], [], [], [], [], []
    offset = 0
    for g_id, sg in enumerate(subgraphs):
        if sg.dist_labels.max(initial=0) > k + 1:
            raise ValueError(
                f"subgraph extracted with k != {k}: distance label {sg.dist_labels.max()}"
            )
        label_idx.append(sg.dist_labels[:, 0] * side + sg.dist_labels[:, 1])
        for a, b in sg.adjacency:
            adj_s.append(a + offset)
            adj_d.append(b + offset)
        n = sg.n_nodes
        pool_s.extend(range(offset, offset + n))
        pool_d.extend([g_id] * n)
        pool_c.extend([1.0 / n] * n)
        offset += n
    op = normalize_adjacency(
        np.asarray(adj_s, dtype=np.int64), np.asarray(adj_d, dtype=np.int64), offset
    )
    pool = graph_operator(
        np.asarray(pool_s), np.asarray(pool_d), np.asarray(pool_c), len(subgraphs), offset
    )
    return _SubgraphBatch(
        label_idx=np.concatenate(label_idx).astype(np.int64),
        op=op,
        pool=pool,
        targets=labels.astype(np.float64).reshape(-1, 1),
    )


def _encg_forward(batch: _SubgraphBatch, params: EncgParams, tape: Tape | None = None):
    tape = tape or Tape()
    tensors = {name: tape.parameter(arr, name) for name, arr in params.arrays().items()}
    gcn = {k[4:]: v for k, v in tensors.items() if k.startswith("gcn.")}
    x = tape.gather_rows(tensors["embed"], batch.label_idx)
    h = gcn_forward(tape, batch.op, x, gcn)
    pooled = tape.scatter_matmul(batch.pool, h)
    logits = tape.add(tape.matmul(pooled, tensors["readout_w"]), tensors["readout_b"])
    return tape, tape.sigmoid(logits)


def encg_probs(params: EncgParams, subgraphs: list[EnclosingSubgraph]) -> np.ndarray:
    """P(anomalous) for each subgraph; chunked to bound memory."""
    out = []
    for lo in range(0, len(subgraphs), 4096):
        chunk = subgraphs[lo : lo + 4096]
        batch = _batch_subgraphs(chunk, np.zeros(len(chunk)), params.k)
        _, probs = _encg_forward(batch, params)
        out.append(probs.data.ravel())
    return np.concatenate(out) if out else np.zeros(0)


def encg_predict(
    params: EncgParams, snapshot: GraphSnapshot, edges: list[tuple[int, int]]
) -> np.ndarray:
    subgraphs = [extract_enclosing_subgraph(snapshot, e, params.k) for e in edges]
    return encg_probs(params, subgraphs)


def _collect_examples(
    snaps: list[GraphSnapshot], cfg: EncgConfig, rng: np.random.Generator, use_true_labels: bool
) -> tuple[list[EnclosingSubgraph], list[int]]:
    subgraphs: list[EnclosingSubgraph] = []
    labels: list[int] = []
    for snap in snaps:
        if snap.n_edges == 0:
            continue
        per = min(cfg.examples_per_window, snap.n_edges)
        mal = np.flatnonzero(snap.labels == LABEL_MALICIOUS)
        benign = np.setdiff1d(np.arange(snap.n_edges), mal)
        if use_true_labels:
            pos_edges = [
                (int(snap.edge_src[i]), int(snap.edge_dst[i])) for i in mal.tolist()
            ]
        else:
            pos_edges = negative_sample(snap, per, rng)
        if benign.size:
            pick = rng.choice(benign, size=min(per, benign.size), replace=False)
        else:
            pick = np.array([], dtype=np.int64)
        neg_edges = [(int(snap.edge_src[i]), int(snap.edge_dst[i])) for i in pick.tolist()]
        for e in pos_edges:
            subgraphs.append(extract_enclosing_subgraph(snap, e, cfg.k))
            labels.append(1)
        for e in neg_edges:
            subgraphs.append(extract_enclosing_subgraph(snap, e, cfg.k))
            labels.append(0)
    return subgraphs, labels


def train_encg(
    train_snaps: list[GraphSnapshot],
    val_snaps: list[GraphSnapshot],
    cfg: EncgConfig,
    seed: int,
):
    """Train the enclosing-subgraph classifier; returns a TrainResult-like
    object whose ``params`` is an :class:`EncgParams`."""
    from knowgraph.learning.training import TrainResult, _subsample

    if not train_snaps:
        raise ValueError("train split is empty")
    train_snaps = _subsample(train_snaps, cfg.max_windows)
    use_true = any((s.labels == LABEL_MALICIOUS).any() for s in train_snaps)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))
    train_gs, train_y = _collect_examples(train_snaps, cfg, rng, use_true)
    if not any(train_y):
        raise ValueError("encg training: no positive examples under either regime")
    val_gs, val_y = _collect_examples(val_snaps, cfg, rng, use_true) if val_snaps else ([], [])

    train_batch = _batch_subgraphs(train_gs, np.asarray(train_y), cfg.k)
    val_batch = _batch_subgraphs(val_gs, np.asarray(val_y), cfg.k) if val_gs else None

    init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    params = init_encg_params(init_rng, cfg)
    result = TrainResult(params=params, val_auc=float("nan"))
    best_auc = -np.inf
    since_best = 0
    for epoch in range(cfg.epochs):
        tape, probs = _encg_forward(train_batch, params)
        loss = tape.binary_cross_entropy(probs, train_batch.targets, mean=True)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise NumericsError(f"encg training diverged at epoch {epoch}")
        result.train_losses.append(loss_val)
        grads = tape.backward(loss)
        params = params.replace_arrays(
            {k: v - cfg.lr * grads[k] for k, v in params.arrays().items()}
        )
        if val_batch is not None:
            _, vp = _encg_forward(val_batch, params)
            try:
                auc = roc_auc(ScoredSet(vp.data.ravel(), val_batch.targets.ravel().astype(int)))
            except MetricError:
                auc = float("nan")
            if np.isfinite(auc) and auc > best_auc:
                best_auc, since_best = auc, 0
                result.params = params
                result.best_epoch = epoch
            else:
                since_best += 1
                if since_best > cfg.patience:
                    break
        else:
            result.params = params
            result.best_epoch = epoch
    result.val_auc = best_auc if np.isfinite(best_auc) else float("nan")
    return result
