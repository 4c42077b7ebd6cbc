"""Score integration and the ranked top-K list."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import LengthMismatch


@dataclass(frozen=True)
class IntegrationConfig:
    gamma: float = 0.1  # weight of the individual score; 1 - gamma goes to the topological score
    k: int = 10

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")


def combine_scores(indiv: np.ndarray, topol: np.ndarray, gamma: float) -> np.ndarray:
    """Convex combination gamma * individual + (1 - gamma) * topological.

    Both inputs are expected min-max normalized to [0, 1] upstream so the
    mixture weight is comparable across datasets.
    """
    indiv = np.asarray(indiv, dtype=float)
    topol = np.asarray(topol, dtype=float)
    if indiv.shape != topol.shape:
        raise LengthMismatch(f"score vectors disagree: {indiv.shape} vs {topol.shape}")
    return gamma * indiv + (1.0 - gamma) * topol


def rank_top_k(final: Mapping[str, float], k: int) -> list[str]:
    """Entity ids sorted by score descending, ties broken lexicographically."""
    if not final:
        raise ValueError("cannot rank an empty score mapping")
    ordered = sorted(final, key=lambda entity: (-final[entity], entity))
    return ordered[: min(k, len(ordered))]
