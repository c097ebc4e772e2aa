"""Weight-noise ensembles: Gaussian parameter perturbation, mean/variance fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class Ensemble:
    """n replicas of a parameter object, each with independent Gaussian noise
    of scale sigma added to every parameter entry; the base stays untouched."""

    replicas: tuple
    sigma: float
    n: int

    def __post_init__(self):
        if self.n < 1 or len(self.replicas) != self.n:
            raise ValueError("ensemble needs n >= 1 replicas")


@dataclass(frozen=True)
class EnsemblePrediction:
    mean: np.ndarray
    variance: np.ndarray  # population variance over replicas
    per_replica: tuple[np.ndarray, ...]


def perturb_weights(params, sigma: float, n: int, rng: np.random.Generator) -> Ensemble:
    """Build an Ensemble from any object exposing arrays()/replace_arrays()."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    replicas = []
    for _ in range(n):
        noisy = {
            name: arr + rng.normal(0.0, sigma, size=arr.shape)
            for name, arr in params.arrays().items()
        }
        replicas.append(params.replace_arrays(noisy))
    return Ensemble(replicas=tuple(replicas), sigma=float(sigma), n=int(n))


def ensemble_predict(ensemble: Ensemble, forward: Callable) -> EnsemblePrediction:
    """Run ``forward(replica) -> probs`` for every replica and aggregate.

    Aggregation order is fixed by replica order, so results are deterministic
    even when replicas are evaluated elsewhere in parallel.
    """
    outputs = [np.asarray(forward(r), dtype=np.float64) for r in ensemble.replicas]
    stack = np.stack(outputs)
    return EnsemblePrediction(
        mean=stack.mean(axis=0),
        variance=stack.var(axis=0),
        per_replica=tuple(outputs),
    )
