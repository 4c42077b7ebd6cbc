"""Shared numeric helpers: named RNG streams, score normalization, worker caps."""

from __future__ import annotations

import hashlib
import os

import numpy as np


def named_rng(seed: int, *names: str) -> np.random.Generator:
    """Deterministic generator for a named substream of a root seed.

    Stream identity depends only on (seed, names), so parallel workers can
    draw independently without any coordination, and reruns with the same
    seed reproduce every stream bit for bit.
    """
    digest = hashlib.sha256("/".join(names).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([abs(int(seed)), *words]))


def minmax_unit(values: np.ndarray) -> np.ndarray:
    """Min-max rescale to [0, 1]; a constant vector maps to all 0.5."""
    values = np.asarray(values, dtype=float)
    lo = float(values.min())
    hi = float(values.max())
    if hi - lo < 1e-12:
        return np.full(values.shape, 0.5)
    return (values - lo) / (hi - lo)


def worker_count(n_jobs: int) -> int:
    """Effective worker count for a pool, capped by INCA_THREADS when set."""
    cap = os.environ.get("INCA_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        limit = max(1, int(cap))
    return max(1, min(n_jobs, limit))
