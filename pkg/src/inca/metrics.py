"""Evaluation metrics over sets of faults: PR@K, MAP@K, MRR.

Each fault is a (predicted ranking, true root causes) pair. Indicator sums
stay integer-exact; division happens once per fault.
"""

from __future__ import annotations

from typing import Collection, Sequence

from .errors import EmptyTruth

Fault = tuple[Sequence[str], Collection[str]]


def _check(faults: Sequence[Fault]) -> None:
    if not faults:
        raise EmptyTruth("no faults to evaluate")
    for ranking, truth in faults:
        if not truth:
            raise EmptyTruth("a fault has no true root causes")
        if len(set(ranking)) != len(ranking):
            raise ValueError("predicted rankings must be duplicate-free")


def _precision(ranking: Sequence[str], truth: Collection[str], k: int) -> float:
    truth = set(truth)
    hits = sum(1 for entity in ranking[:k] if entity in truth)
    return hits / min(k, len(truth))


def pr_at_k(faults: Sequence[Fault], k: int) -> float:
    """Mean over faults of (hits in the top k) / min(k, truth size)."""
    _check(faults)
    return sum(_precision(r, v, k) for r, v in faults) / len(faults)


def map_at_k(faults: Sequence[Fault], k: int) -> float:
    """Mean over faults of the average of PR@j for j = 1..k."""
    _check(faults)
    total = 0.0
    for ranking, truth in faults:
        total += sum(_precision(ranking, truth, j) for j in range(1, k + 1)) / k
    return total / len(faults)


def mrr(faults: Sequence[Fault]) -> float:
    """Mean reciprocal rank of the first correct prediction (0 when none is correct)."""
    _check(faults)
    total = 0.0
    for ranking, truth in faults:
        truth = set(truth)
        for position, entity in enumerate(ranking, start=1):
            if entity in truth:
                total += 1.0 / position
                break
    return total / len(faults)
