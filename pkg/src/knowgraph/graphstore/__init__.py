"""Log ingestion, temporal graph snapshots, labeling, subgraphs, and splits."""

from knowgraph.graphstore.events import (
    AuthEvent,
    ParseError,
    RedteamEvent,
    parse_auth_line,
    parse_redteam_line,
    read_auth_file,
    read_redteam_file,
)
from knowgraph.graphstore.snapshots import (
    LABEL_BENIGN,
    LABEL_MALICIOUS,
    LABEL_UNLABELED,
    EdgeAttrs,
    GraphSnapshot,
    build_snapshots,
    label_malicious_edges,
)
from knowgraph.graphstore.subgraph import EnclosingSubgraph, extract_enclosing_subgraph
from knowgraph.graphstore.splits import DatasetSplit, SplitError, make_split
from knowgraph.graphstore.synth import SynthConfig, synth_generate
from knowgraph.graphstore.store import read_store, write_store

__all__ = [
    "AuthEvent",
    "RedteamEvent",
    "ParseError",
    "parse_auth_line",
    "parse_redteam_line",
    "read_auth_file",
    "read_redteam_file",
    "EdgeAttrs",
    "GraphSnapshot",
    "LABEL_BENIGN",
    "LABEL_MALICIOUS",
    "LABEL_UNLABELED",
    "build_snapshots",
    "label_malicious_edges",
    "EnclosingSubgraph",
    "extract_enclosing_subgraph",
    "DatasetSplit",
    "SplitError",
    "make_split",
    "SynthConfig",
    "synth_generate",
    "read_store",
    "write_store",
]
