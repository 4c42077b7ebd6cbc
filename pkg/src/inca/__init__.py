"""Root-cause localization for multi-level system telemetry.

Learns weighted causal graphs within and across entity levels from
monitoring time series, traces fault likelihood back from the KPI with a
restarting random walk, scores each entity's own series with
peaks-over-threshold extreme-value analysis, and blends both signals into
a ranked top-K root-cause report.
"""

from .dag import AdjacencyParams, acyclicity_penalty, materialize_adjacency, matrix_exponential, prune_to_dag
from .evt import EvtConfig, EvtState, compute_boundary, detect_stream, estimate_eta, fit_gpd, individual_score
from .gnn import (
    FitResult,
    TrainableParams,
    TrainConfig,
    fit_interdependent,
    inter_aggregate,
    intra_forward,
    total_loss,
)
from .lags import LagTensor, build_lag_embedding, standardize, standardize_values
from .metrics import map_at_k, mrr, pr_at_k
from .model import (
    EntityScores,
    FaultLabel,
    InterdependentCausalGraph,
    KpiSeries,
    MetricPanel,
    RcaReport,
    TopologyDescriptor,
    ValidatedBundle,
    validate_topology,
)
from .pipeline import LocalizeConfig, LocalizeResult, localize, standardize_bundle
from .propagation import PropagationConfig, TransitionMatrix, build_transition, rwr, topological_scores
from .ranking import IntegrationConfig, combine_scores, rank_top_k
from .synth import FaultSpec, SynthSpec, SynthSystem, generate_system, kpi_connected_low_nodes, simulate

__version__ = "0.1.0"

__all__ = [
    "AdjacencyParams",
    "EntityScores",
    "EvtConfig",
    "EvtState",
    "FaultLabel",
    "FaultSpec",
    "FitResult",
    "IntegrationConfig",
    "InterdependentCausalGraph",
    "KpiSeries",
    "LagTensor",
    "LocalizeConfig",
    "LocalizeResult",
    "MetricPanel",
    "PropagationConfig",
    "RcaReport",
    "SynthSpec",
    "SynthSystem",
    "TopologyDescriptor",
    "TrainConfig",
    "TrainableParams",
    "TransitionMatrix",
    "ValidatedBundle",
    "acyclicity_penalty",
    "build_lag_embedding",
    "build_transition",
    "combine_scores",
    "compute_boundary",
    "detect_stream",
    "estimate_eta",
    "fit_gpd",
    "fit_interdependent",
    "generate_system",
    "individual_score",
    "inter_aggregate",
    "intra_forward",
    "kpi_connected_low_nodes",
    "localize",
    "map_at_k",
    "materialize_adjacency",
    "matrix_exponential",
    "mrr",
    "pr_at_k",
    "prune_to_dag",
    "rank_top_k",
    "rwr",
    "simulate",
    "standardize",
    "standardize_bundle",
    "standardize_values",
    "topological_scores",
    "total_loss",
    "validate_topology",
]
