"""Adjacency materialization, matrix exponential, and the differentiable DAG penalty.

The adjacency layer turns a pair of unconstrained parameter matrices into a
nonnegative weighted adjacency with no self-loops and pairwise mutual
exclusion (at most one direction per node pair). The trace-exponential
penalty h(W) = tr(exp(W * W)) - d vanishes exactly when the support of W is
acyclic, and its gradient is available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np

from .errors import NonFinite, ShapeMismatch


@dataclass(frozen=True, eq=False)
class AdjacencyParams:
    """Unconstrained trainables behind one materialized adjacency."""

    w_plus: np.ndarray
    w_minus: np.ndarray

    def __post_init__(self):
        wp = np.asarray(self.w_plus, dtype=float)
        wm = np.asarray(self.w_minus, dtype=float)
        if wp.ndim != 2 or wp.shape[0] != wp.shape[1] or wp.shape != wm.shape:
            raise ShapeMismatch(f"expected equal square matrices, got {wp.shape} and {wm.shape}")
        if not (np.isfinite(wp).all() and np.isfinite(wm).all()):
            raise NonFinite("adjacency parameters must be finite")
        object.__setattr__(self, "w_plus", wp)
        object.__setattr__(self, "w_minus", wm)


def materialize_adjacency(params: AdjacencyParams) -> np.ndarray:
    """Nonnegative asymmetric adjacency from a parameter pair.

    W = relu(tanh(Wp @ Wm.T - Wm @ Wp.T)). The inner difference is exactly
    antisymmetric, so W(i, j) > 0 forces W(j, i) = 0. The diagonal is zeroed
    explicitly as well; self-loops are never allowed.
    """
    wp, wm = params.w_plus, params.w_minus
    score = wp @ wm.T - wm @ wp.T
    w = np.tanh(score)
    np.maximum(w, 0.0, out=w)
    np.fill_diagonal(w, 0.0)
    return w


def matrix_exponential(m: np.ndarray, tol: float = 1e-12, max_terms: int = 64) -> np.ndarray:
    """exp(M) by scaling-and-squaring over a truncated Taylor series.

    The argument is halved until its 1-norm is at most 0.5, the series is
    summed until the next term falls below ``tol`` relative to the running
    result, and the answer is squared back up.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise NonFinite("matrix exponential of a non-finite matrix")
    d = m.shape[0]
    norm = float(np.abs(m).sum(axis=0).max()) if d else 0.0
    squarings = 0
    if norm > 0.5:
        squarings = int(np.ceil(np.log2(norm / 0.5)))
    a = m / (2.0**squarings)
    result = np.eye(d)
    term = np.eye(d)
    for k in range(1, max_terms + 1):
        term = term @ a / k
        result = result + term
        if np.abs(term).sum(axis=0).max() <= tol * max(np.abs(result).sum(axis=0).max(), 1.0):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def acyclicity_penalty(w: np.ndarray) -> tuple[float, np.ndarray]:
    """DAG-ness penalty h(W) = tr(exp(W * W)) - d and its gradient.

    h is zero exactly when the nonzero pattern of W has no directed cycle;
    the gradient is exp(W * W).T * 2W.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got shape {w.shape}")
    e = matrix_exponential(w * w)
    h = float(np.trace(e)) - w.shape[0]
    grad = e.T * (2.0 * w)
    return h, grad


def prune_to_dag(w: np.ndarray, w_min: float = 0.01) -> np.ndarray:
    """Drop edges below ``w_min``, then break any surviving cycle at its weakest edge.

    Soft-penalty training can stall short of exact acyclicity; this makes the
    returned support a DAG unconditionally.
    """
    pruned = np.where(np.asarray(w, dtype=float) >= w_min, w, 0.0)
    graph = nx.DiGraph()
    graph.add_nodes_from(range(pruned.shape[0]))
    rows, cols = np.nonzero(pruned)
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    while True:
        try:
            cycle = nx.find_cycle(graph)
        except nx.NetworkXNoCycle:
            break
        u, v = min(((e[0], e[1]) for e in cycle), key=lambda e: pruned[e[0], e[1]])
        graph.remove_edge(u, v)
        pruned[u, v] = 0.0
    return pruned
