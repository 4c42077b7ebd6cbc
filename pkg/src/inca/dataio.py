"""Dataset and result files: CSV telemetry, topology/label JSON, report JSON.

Telemetry lives in one CSV per (level, metric) named ``low_<metric>.csv`` /
``high_<metric>.csv`` plus ``kpi.csv``, each with a ``timestamp`` header
column of integer epoch seconds. Topology and fault labels share a single
``topology.json``. All JSON is emitted with sorted keys and fixed
indentation, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import ValidationError
from .model import (
    FaultLabel,
    InterdependentCausalGraph,
    KpiSeries,
    MetricPanel,
    RcaReport,
    TopologyDescriptor,
)

METRIC_COLUMNS = ("PR@1", "PR@3", "PR@5", "PR@7", "PR@10", "MAP@3", "MAP@5", "MAP@7", "MAP@10", "MRR")


def dump_json(payload, path: Path) -> None:
    path = Path(path)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_json(path: Path):
    return json.loads(Path(path).read_text())


def _interpolate_missing(values: np.ndarray) -> np.ndarray:
    """Linear interpolation of NaNs per column, nearest value at the edges."""
    out = values.astype(float).copy()
    idx = np.arange(out.shape[0])
    for col in range(out.shape[1]):
        good = np.isfinite(out[:, col])
        if good.all():
            continue
        if not good.any():
            raise ValidationError(f"column {col} has no observed values to impute from")
        out[~good, col] = np.interp(idx[~good], idx[good], out[good, col])
    return out


def _read_series_csv(path: Path) -> tuple[np.ndarray, list[str], np.ndarray]:
    frame = pd.read_csv(path)
    if frame.columns[0] != "timestamp":
        raise ValidationError(f"{path.name}: first column must be 'timestamp'")
    timestamps = frame["timestamp"].to_numpy(dtype=np.int64)
    ids = [str(c) for c in frame.columns[1:]]
    values = _interpolate_missing(frame.iloc[:, 1:].to_numpy(dtype=float))
    return timestamps, ids, values


def _write_series_csv(path: Path, timestamps: np.ndarray, ids: Iterable[str], values: np.ndarray) -> None:
    frame = pd.DataFrame(values, columns=list(ids))
    frame.insert(0, "timestamp", timestamps)
    frame.to_csv(path, index=False)


def save_dataset(
    directory: Path,
    topo: TopologyDescriptor,
    panels: Iterable[MetricPanel],
    kpi: KpiSeries,
    labels: Iterable[FaultLabel] = (),
    truth: InterdependentCausalGraph | None = None,
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    low_set = set(topo.low_level_ids)
    for panel in panels:
        level = "low" if set(panel.entity_ids) <= low_set else "high"
        _write_series_csv(directory / f"{level}_{panel.metric_name}.csv", panel.timestamps, panel.entity_ids, panel.values)
    _write_series_csv(directory / "kpi.csv", kpi.timestamps, [topo.kpi_id], kpi.values[:, None])
    payload = topo.to_dict()
    payload["faults"] = [label.to_dict() for label in labels]
    dump_json(payload, directory / "topology.json")
    if truth is not None:
        dump_json(truth.to_dict(), directory / "truth.json")


def load_dataset(directory: Path) -> tuple[TopologyDescriptor, list[MetricPanel], KpiSeries, list[FaultLabel]]:
    directory = Path(directory)
    topo_doc = load_json(directory / "topology.json")
    topo = TopologyDescriptor.from_dict(topo_doc)
    labels = [FaultLabel.from_dict(f) for f in topo_doc.get("faults", [])]
    panels: list[MetricPanel] = []
    kpi = None
    for path in sorted(directory.glob("*.csv")):
        timestamps, ids, values = _read_series_csv(path)
        if path.name == "kpi.csv":
            kpi = KpiSeries(timestamps=timestamps, values=values[:, 0])
        elif path.name.startswith(("low_", "high_")):
            prefix, metric = path.stem.split("_", 1)
            panels.append(MetricPanel(metric, tuple(ids), timestamps, values))
    if kpi is None:
        raise ValidationError(f"no kpi.csv found in {directory}")
    if not panels:
        raise ValidationError(f"no metric CSVs found in {directory}")
    return topo, panels, kpi, labels


def graphs_to_dict(analyses, config_snapshot: Mapping) -> dict:
    """Serializable learned graphs per (fault, metric) with traces and final h values."""
    by_fault = {}
    for analysis in analyses:
        graphs = {}
        for metric in sorted(analysis.fits):
            fit = analysis.fits[metric]
            entry = fit.graph.to_dict()
            entry["h_low"] = fit.h_low
            entry["h_high"] = fit.h_high
            entry["converged"] = bool(fit.converged)
            entry["iterations"] = int(fit.iterations)
            entry["loss_trace"] = [float(v) for v in fit.trace]
            graphs[metric] = entry
        by_fault[analysis.report.fault_id] = graphs
    return {"config_snapshot": dict(config_snapshot), "graphs": by_fault}


def graph_from_entry(entry: Mapping) -> InterdependentCausalGraph:
    return InterdependentCausalGraph.from_dict(entry)


def reports_to_dict(reports: Iterable[RcaReport]) -> dict:
    return {"reports": [r.to_dict() for r in reports]}


def reports_from_dict(payload: Mapping) -> list[RcaReport]:
    return [RcaReport.from_dict(r) for r in payload["reports"]]


def metrics_table(metric_values: Mapping[str, float]) -> str:
    """Fixed-order text table of the evaluation metrics."""
    header = " | ".join(f"{c:>7}" for c in METRIC_COLUMNS)
    row = " | ".join(f"{100 * metric_values[c]:6.2f}%" for c in METRIC_COLUMNS)
    return header + "\n" + row
