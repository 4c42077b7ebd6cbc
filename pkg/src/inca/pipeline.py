"""End-to-end localization: standardize, fit graphs, propagate, score, rank."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyGraph
from .evt import EvtConfig, individual_score
from .gnn import FitResult, TrainConfig, fit_interdependent
from .lags import standardize, standardize_values
from .model import (
    EntityScores,
    FaultLabel,
    InterdependentCausalGraph,
    KpiSeries,
    MetricPanel,
    RcaReport,
    ValidatedBundle,
    validate_topology,
)
from .propagation import PropagationConfig, topological_scores
from .ranking import IntegrationConfig, combine_scores, rank_top_k
from .util import minmax_unit, worker_count


@dataclass(frozen=True)
class LocalizeConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    evt: EvtConfig = field(default_factory=EvtConfig)
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    # nominal context preceding a fault window in the per-fault training slice
    train_lead: int = 500

    def snapshot(self) -> dict:
        return {
            "train": asdict(self.train),
            "propagation": asdict(self.propagation),
            "evt": asdict(self.evt),
            "integration": asdict(self.integration),
            "train_lead": self.train_lead,
        }


@dataclass(eq=False)
class FaultAnalysis:
    """Everything computed for one fault: per-metric fits and the report."""

    report: RcaReport
    fits: dict[str, FitResult]

    @property
    def graphs(self) -> dict[str, InterdependentCausalGraph]:
        return {metric: fit.graph for metric, fit in self.fits.items()}


@dataclass(eq=False)
class LocalizeResult:
    analyses: tuple[FaultAnalysis, ...]

    @property
    def reports(self) -> tuple[RcaReport, ...]:
        return tuple(a.report for a in self.analyses)

    @property
    def all_converged(self) -> bool:
        return all(f.converged for a in self.analyses for f in a.fits.values())

    def nonconverged(self) -> list[tuple[str, str]]:
        return [
            (a.report.fault_id, metric)
            for a in self.analyses
            for metric, f in a.fits.items()
            if not f.converged
        ]


def standardize_bundle(bundle: ValidatedBundle) -> ValidatedBundle:
    """Bundle with every panel column and the KPI rescaled to zero mean, unit stdev."""
    panels = [standardize(p)[0] for p in bundle.panels()]
    kpi_values, _, _ = standardize_values(bundle.kpi.values)
    kpi = KpiSeries(timestamps=bundle.kpi.timestamps, values=kpi_values)
    return validate_topology(bundle.topology, panels, kpi)


def slice_bundle(bundle: ValidatedBundle, start: int, stop: int) -> ValidatedBundle:
    """Bundle restricted to the index window [start, stop)."""
    panels = [
        MetricPanel(p.metric_name, p.entity_ids, p.timestamps[start:stop], p.values[start:stop])
        for p in bundle.panels()
    ]
    kpi = KpiSeries(bundle.kpi.timestamps[start:stop], bundle.kpi.values[start:stop])
    return validate_topology(bundle.topology, panels, kpi)


def _rescale_by_prefix(values: np.ndarray, split: int) -> np.ndarray:
    """Standardize columns by the mean/stdev of the first ``split`` rows.

    Keeps fault excursions at their pre-fault z-scale instead of letting
    them deflate themselves through the slice statistics, so the squared
    loss of a fit on the slice is dominated by the abnormal samples.
    """
    head = values[:split]
    means = head.mean(axis=0)
    stds = head.std(axis=0)
    stds = np.where(stds < 1e-12, 1.0, stds)
    return (values - means) / stds


def fault_training_bundle(std: ValidatedBundle, window: tuple[int, int], lead: int) -> ValidatedBundle:
    """Per-fault training slice: ``lead`` nominal points plus the fault window,
    standardized by the nominal prefix statistics."""
    start = max(0, window[0] - lead)
    split = window[0] - start
    sliced = slice_bundle(std, start, window[1])
    if split < 20:
        return standardize_bundle(sliced)
    panels = [
        MetricPanel(p.metric_name, p.entity_ids, p.timestamps, _rescale_by_prefix(p.values, split))
        for p in sliced.panels()
    ]
    kpi_values = _rescale_by_prefix(sliced.kpi.values[:, None], split)[:, 0]
    kpi = KpiSeries(sliced.kpi.timestamps, kpi_values)
    return validate_topology(std.topology, panels, kpi)


def _window_indices(kpi: KpiSeries, label: FaultLabel) -> tuple[int, int]:
    start = int(np.searchsorted(kpi.timestamps, label.fault_window[0], side="left"))
    end = int(np.searchsorted(kpi.timestamps, label.fault_window[1], side="right"))
    return start, end


def _fit_metrics(bundle: ValidatedBundle, train: TrainConfig) -> dict[str, FitResult]:
    metrics = bundle.metrics
    with ThreadPoolExecutor(max_workers=worker_count(len(metrics))) as pool:
        futures = {m: pool.submit(fit_interdependent, bundle, train, m) for m in metrics}
        return {m: futures[m].result() for m in metrics}


def _fused_topological(fits: Mapping[str, FitResult], low_ids, config: LocalizeConfig) -> np.ndarray:
    per_metric = []
    for m in sorted(fits):
        try:
            scores = topological_scores(fits[m].graph, config.propagation)
            per_metric.append([scores[e] for e in low_ids])
        except EmptyGraph:
            per_metric.append([0.5] * len(low_ids))  # nothing learned, no preference
    return minmax_unit(np.mean(per_metric, axis=0))


def _individual_vector(
    std: ValidatedBundle, window: tuple[int, int] | None, config: LocalizeConfig
) -> np.ndarray:
    low_ids = std.topology.low_level_ids
    metrics = std.metrics

    def entity_score(col: int) -> float:
        per_metric = [
            individual_score(std.low_panels[m].values[:, col], config.evt, window) for m in metrics
        ]
        return float(np.mean(per_metric))

    with ThreadPoolExecutor(max_workers=worker_count(len(low_ids))) as pool:
        raw = list(pool.map(entity_score, range(len(low_ids))))
    return minmax_unit(np.array(raw))


def localize(bundle: ValidatedBundle, labels: Sequence[FaultLabel], config: LocalizeConfig) -> LocalizeResult:
    """Run the whole pipeline on a validated dataset.

    Each labeled fault is analyzed on its own training slice, the fault
    window plus ``train_lead`` preceding points, so the learned graph
    reflects the causal activity of that fault rather than only nominal
    behavior. Without labels, a single report is produced from the full
    series with the trailing share of each series used for detection.
    All per-metric fits and per-entity detections are deterministic given
    the seed, and aggregation order is fixed.
    """
    std = standardize_bundle(bundle)
    low_ids = std.topology.low_level_ids
    snapshot = config.snapshot()

    analyses = []
    for label in labels if labels else [None]:
        if label is None:
            fault_id, window = "unlabeled", None
            train_bundle = std
        else:
            fault_id = label.fault_id
            window = _window_indices(std.kpi, label)
            train_bundle = fault_training_bundle(std, window, config.train_lead)
        fits = _fit_metrics(train_bundle, config.train)
        topol = _fused_topological(fits, low_ids, config)
        indiv = _individual_vector(std, window, config)
        final = combine_scores(indiv, topol, config.integration.gamma)
        final_by_id = {e: float(v) for e, v in zip(low_ids, final)}
        ranked = rank_top_k(final_by_id, config.integration.k)
        per_entity = {
            e: EntityScores(topological=float(t), individual=float(i), final=final_by_id[e])
            for e, t, i in zip(low_ids, topol, indiv)
        }
        report = RcaReport(
            fault_id=fault_id,
            per_entity=per_entity,
            ranked=tuple(ranked),
            k=config.integration.k,
            config_snapshot=snapshot,
        )
        analyses.append(FaultAnalysis(report=report, fits=fits))
    return LocalizeResult(analyses=tuple(analyses))
