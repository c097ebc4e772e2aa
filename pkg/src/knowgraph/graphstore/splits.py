"""Transductive/inductive dataset splits anchored at the first attack window."""

from __future__ import annotations

import math
from dataclasses import dataclass

from knowgraph.graphstore.snapshots import LABEL_MALICIOUS, GraphSnapshot

MODE_TRANSDUCTIVE = "transductive"
MODE_INDUCTIVE = "inductive"


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSplit:
    """Positions into the snapshot list; train/val precede the attack.

    ``test_offsets`` (inductive mode) carries each test snapshot's window
    offset from the first attack window for time-shift curves.
    """

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    mode: str
    attack_window: int
    test_offsets: tuple[int, ...] = ()

    def __post_init__(self):
        groups = [set(self.train), set(self.val), set(self.test)]
        for i in range(3):
            for j in range(i + 1, 3):
                if groups[i] & groups[j]:
                    raise SplitError("train/val/test must be pairwise disjoint")


def make_split(
    snapshots: list[GraphSnapshot], mode: str = MODE_TRANSDUCTIVE, val_fraction: float = 0.05
) -> DatasetSplit:
    """Split labeled snapshots around the first window containing an attack.

    All pre-attack snapshots become train/val, with the last
    ceil(val_fraction * n_pre) windows as validation; everything from the
    first attack window on is test.
    """
    if mode not in (MODE_TRANSDUCTIVE, MODE_INDUCTIVE):
        raise SplitError(f"unknown split mode {mode!r}")
    if not (0.0 < val_fraction < 1.0):
        raise SplitError(f"val_fraction {val_fraction} outside (0, 1)")
    order = sorted(range(len(snapshots)), key=lambda i: snapshots[i].window_index)
    attack = None
    for i in order:
        if (snapshots[i].labels == LABEL_MALICIOUS).any():
            attack = snapshots[i].window_index
            break
    if attack is None:
        raise SplitError("no attack boundary: no malicious edge in any snapshot")

    pre = [i for i in order if snapshots[i].window_index < attack]
    post = [i for i in order if snapshots[i].window_index >= attack]
    if not pre:
        raise SplitError("first malicious edge is in the earliest window; no training data")
    n_val = math.ceil(val_fraction * len(pre))
    if n_val >= len(pre):
        raise SplitError("validation fraction leaves no training windows")
    offsets = ()
    if mode == MODE_INDUCTIVE:
        offsets = tuple(snapshots[i].window_index - attack for i in post)
    return DatasetSplit(
        train=tuple(pre[:-n_val]),
        val=tuple(pre[-n_val:]),
        test=tuple(post),
        mode=mode,
        attack_window=attack,
        test_offsets=offsets,
    )
