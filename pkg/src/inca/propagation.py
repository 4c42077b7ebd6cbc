"""Fault backtracing: transition structure over the transposed graph and RWR.

The learned edges point cause -> effect, ending at the KPI. To trace back
from the KPI toward candidate causes, the walk runs on the transposed
structure. State ordering is high-level nodes first, then low-level nodes,
matching the block layout [[H_gg, H_ga], [H_ag, H_aa]].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGraph, NoConvergence
from .model import InterdependentCausalGraph
from .util import minmax_unit


@dataclass(frozen=True)
class PropagationConfig:
    phi: float = 0.5  # probability of jumping between levels rather than walking within one
    varphi: float = 0.15  # restart probability
    tol: float = 1e-10  # L1 stopping tolerance
    max_iters: int = 10000

    def __post_init__(self):
        if not (0.0 <= self.phi <= 1.0 and 0.0 <= self.varphi <= 1.0):
            raise ValueError("phi and varphi must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic walk matrix over [high | low] nodes; dangling rows stay zero."""

    h: np.ndarray
    phi: float
    dangling: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float))
        object.__setattr__(self, "dangling", np.asarray(self.dangling, dtype=bool))


def _fill_rows(h, row_offset, col_offsets, intra, cross, phi):
    """Populate H rows for one level given its transposed intra and cross weights.

    When a node has out-edges in only one block, that block takes the whole
    row mass rather than its phi share, keeping the row stochastic.
    """
    intra_off, cross_off = col_offsets
    intra_sums = intra.sum(axis=1)
    cross_sums = cross.sum(axis=1)
    for i in range(intra.shape[0]):
        row = row_offset + i
        has_intra = intra_sums[i] > 0
        has_cross = cross_sums[i] > 0
        if has_intra and has_cross:
            h[row, intra_off : intra_off + intra.shape[1]] = (1.0 - phi) * intra[i] / intra_sums[i]
            h[row, cross_off : cross_off + cross.shape[1]] = phi * cross[i] / cross_sums[i]
        elif has_intra:
            h[row, intra_off : intra_off + intra.shape[1]] = intra[i] / intra_sums[i]
        elif has_cross:
            h[row, cross_off : cross_off + cross.shape[1]] = cross[i] / cross_sums[i]


def build_transition(graph: InterdependentCausalGraph, phi: float) -> tuple[TransitionMatrix, np.ndarray]:
    """Transition matrix of the backtracing walk and its restart distribution.

    All blocks are row-normalized slices of the transposed learned graph.
    Restart mass sits on high-level nodes in proportion to the (transposed)
    KPI edge weights, uniform over high-level nodes when no KPI edge was
    learned, and zero on low-level nodes.
    """
    g, n = graph.g, graph.n_low
    if (
        not graph.w_low.any()
        and not graph.w_high.any()
        and not graph.w_cross.any()
        and not graph.w_kpi.any()
    ):
        raise EmptyGraph(f"graph for metric {graph.metric_name!r} has no edges")
    size = g + n
    h = np.zeros((size, size))
    # high rows: within-level walk on w_high^T, jump to low level on w_cross^T
    _fill_rows(h, 0, (0, g), graph.w_high.T, graph.w_cross.T, phi)
    # low rows: within-level walk on w_low^T, jump back up along the original cross edges
    _fill_rows(h, g, (g, 0), graph.w_low.T, graph.w_cross, phi)
    row_sums = h.sum(axis=1)
    dangling = row_sums == 0

    restart_high = graph.w_kpi.astype(float)
    if restart_high.sum() <= 0:
        restart_high = np.ones(g)
    restart = np.concatenate([restart_high / restart_high.sum(), np.zeros(n)])
    return TransitionMatrix(h=h, phi=phi, dangling=dangling), restart


def rwr(transition: TransitionMatrix, restart: np.ndarray, config: PropagationConfig) -> np.ndarray:
    """Stationary visiting distribution of the restarting walk.

    Iterates p <- (1 - varphi) p H + varphi p_rs with per-iteration
    renormalization, which compensates probability mass leaking through
    dangling rows.
    """
    restart = np.asarray(restart, dtype=float)
    if restart.shape != (transition.h.shape[0],):
        raise ValueError("restart vector length does not match the transition matrix")
    if abs(restart.sum() - 1.0) > 1e-9:
        raise ValueError("restart vector must sum to 1")
    ht = transition.h.T
    p = restart.copy()
    for _ in range(config.max_iters):
        nxt = (1.0 - config.varphi) * (ht @ p) + config.varphi * restart
        total = nxt.sum()
        if total <= 0:
            raise NoConvergence("walk lost all probability mass")
        nxt /= total
        if np.abs(nxt - p).sum() <= config.tol:
            return nxt
        p = nxt
    raise NoConvergence(f"no fixed point within {config.max_iters} iterations")


def topological_scores(graph: InterdependentCausalGraph, config: PropagationConfig) -> dict[str, float]:
    """Per low-level entity causal score: the walk's low-level stationary mass.

    The low-level slice is min-max normalized over entities; a constant
    slice maps to all 0.5.
    """
    transition, restart = build_transition(graph, config.phi)
    stationary = rwr(transition, restart, config)
    low_mass = minmax_unit(stationary[graph.g :])
    return {entity: float(score) for entity, score in zip(graph.low_ids, low_mass)}
