"""GCN edge scorers, enclosing-subgraph classifier, and weight-noise ensembles."""

from knowgraph.learning.gcn import (
    EdgeScore,
    GcnParams,
    gcn_forward,
    init_gcn_params,
    normalize_adjacency,
    score_edge,
    snapshot_operator,
)
from knowgraph.learning.training import (
    TrainConfig,
    TrainResult,
    negative_sample,
    predict_edge_probs,
    train_auth,
    train_main,
)
from knowgraph.learning.encg import (
    EncgConfig,
    EncgParams,
    encg_predict,
    init_encg_params,
    train_encg,
)
from knowgraph.learning.ensemble import Ensemble, EnsemblePrediction, ensemble_predict, perturb_weights
from knowgraph.learning.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "GcnParams",
    "EdgeScore",
    "init_gcn_params",
    "normalize_adjacency",
    "snapshot_operator",
    "gcn_forward",
    "score_edge",
    "TrainConfig",
    "TrainResult",
    "negative_sample",
    "train_main",
    "train_auth",
    "predict_edge_probs",
    "EncgConfig",
    "EncgParams",
    "init_encg_params",
    "train_encg",
    "encg_predict",
    "Ensemble",
    "EnsemblePrediction",
    "perturb_weights",
    "ensemble_predict",
    "load_checkpoint",
    "save_checkpoint",
]
