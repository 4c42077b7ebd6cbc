"""Domain model: topology, telemetry panels, learned graphs, labels, and reports.

All types here are immutable after construction (frozen dataclasses with
read-only arrays) and carry their own invariant checks, so a constructed
value can be shared freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import dag
from .errors import (
    LengthMismatch,
    NonMonotoneTimestamps,
    NonUniformGrid,
    UnknownEntity,
    ValidationError,
)

# Post-training acyclicity tolerance on learned adjacencies.
EPS_ACYC = 1e-8


def _frozen_array(value, dtype) -> np.ndarray:
    arr = np.array(value, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TopologyDescriptor:
    """Entity inventory: high-level node ids, low-to-high affiliation, KPI id."""

    high_level_ids: tuple[str, ...]
    affiliation: Mapping[str, str]
    kpi_id: str

    def __post_init__(self):
        high = tuple(str(h) for h in self.high_level_ids)
        affiliation = {str(k): str(v) for k, v in dict(self.affiliation).items()}
        object.__setattr__(self, "high_level_ids", high)
        object.__setattr__(self, "affiliation", MappingProxyType(affiliation))
        if not high:
            raise ValidationError("at least one high-level entity is required")
        if not affiliation:
            raise ValidationError("at least one low-level entity is required")
        if len(set(high)) != len(high):
            raise ValidationError("high-level ids must be unique")
        high_set = set(high)
        for low, parent in affiliation.items():
            if parent not in high_set:
                raise UnknownEntity(f"low-level entity {low!r} affiliates with unknown {parent!r}")
        all_ids = list(high) + list(affiliation)
        if self.kpi_id in all_ids:
            raise ValidationError(f"kpi id {self.kpi_id!r} collides with an entity id")
        if len(set(all_ids)) != len(all_ids):
            raise ValidationError("entity ids must be unique across levels")

    @property
    def low_level_ids(self) -> tuple[str, ...]:
        """Canonical (sorted) low-level ordering used for all matrix indexing."""
        return tuple(sorted(self.affiliation))

    @property
    def g(self) -> int:
        return len(self.high_level_ids)

    @property
    def n_low(self) -> int:
        return len(self.affiliation)

    def to_dict(self) -> dict:
        return {
            "high_level": list(self.high_level_ids),
            "affiliation": dict(self.affiliation),
            "kpi_id": self.kpi_id,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TopologyDescriptor":
        return cls(
            high_level_ids=tuple(data["high_level"]),
            affiliation=dict(data["affiliation"]),
            kpi_id=data["kpi_id"],
        )


@dataclass(frozen=True, eq=False)
class MetricPanel:
    """One metric's multivariate series over the entities of a single level."""

    metric_name: str
    entity_ids: tuple[str, ...]
    timestamps: np.ndarray  # (T+1,) integers, strictly increasing
    values: np.ndarray  # (T+1, d) floats, no missing values

    def __post_init__(self):
        ids = tuple(str(e) for e in self.entity_ids)
        ts = _frozen_array(self.timestamps, np.int64)
        vals = _frozen_array(self.values, float)
        object.__setattr__(self, "entity_ids", ids)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate entity ids in panel {self.metric_name!r}")
        if vals.ndim != 2 or vals.shape != (ts.shape[0], len(ids)):
            raise LengthMismatch(
                f"panel {self.metric_name!r}: values shape {vals.shape} does not match "
                f"{ts.shape[0]} timestamps x {len(ids)} entities"
            )
        if ts.ndim != 1 or np.any(np.diff(ts) <= 0):
            raise NonMonotoneTimestamps(f"panel {self.metric_name!r}: timestamps must strictly increase")
        if not np.isfinite(vals).all():
            raise ValidationError(f"panel {self.metric_name!r}: missing values must be imputed at load time")

    @property
    def n_times(self) -> int:
        return self.timestamps.shape[0]

    def reorder(self, entity_ids: Sequence[str]) -> "MetricPanel":
        """Panel with columns rearranged to the given id order."""
        index = {e: i for i, e in enumerate(self.entity_ids)}
        cols = [index[e] for e in entity_ids]
        return MetricPanel(self.metric_name, tuple(entity_ids), self.timestamps, self.values[:, cols])

    def to_dict(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "entity_ids": list(self.entity_ids),
            "timestamps": self.timestamps.tolist(),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricPanel":
        return cls(data["metric_name"], tuple(data["entity_ids"]), data["timestamps"], data["values"])


@dataclass(frozen=True, eq=False)
class KpiSeries:
    """The system health indicator series."""

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = _frozen_array(self.timestamps, np.int64)
        vals = _frozen_array(self.values, float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.shape[0] != ts.shape[0]:
            raise LengthMismatch("kpi values and timestamps must have equal length")
        if np.any(np.diff(ts) <= 0):
            raise NonMonotoneTimestamps("kpi timestamps must strictly increase")
        if not np.isfinite(vals).all():
            raise ValidationError("kpi series contains missing values")

    @property
    def n_times(self) -> int:
        return self.timestamps.shape[0]

    def to_dict(self) -> dict:
        return {"timestamps": self.timestamps.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "KpiSeries":
        return cls(data["timestamps"], data["values"])


@dataclass(frozen=True, eq=False)
class InterdependentCausalGraph:
    """Learned weighted adjacencies within and across levels, plus KPI edges.

    Row index is the cause, column index the effect, in every block:
    w_low (n x n) low-to-low, w_high (g x g) high-to-high, w_cross (n x g)
    low-to-high, w_kpi (g,) high-to-KPI.
    """

    metric_name: str
    low_ids: tuple[str, ...]
    high_ids: tuple[str, ...]
    w_low: np.ndarray
    w_high: np.ndarray
    w_cross: np.ndarray
    w_kpi: np.ndarray

    def __post_init__(self):
        n, g = len(self.low_ids), len(self.high_ids)
        w_low = _frozen_array(self.w_low, float)
        w_high = _frozen_array(self.w_high, float)
        w_cross = _frozen_array(self.w_cross, float)
        w_kpi = _frozen_array(self.w_kpi, float)
        for name, arr, shape in (
            ("w_low", w_low, (n, n)),
            ("w_high", w_high, (g, g)),
            ("w_cross", w_cross, (n, g)),
            ("w_kpi", w_kpi, (g,)),
        ):
            if arr.shape != shape:
                raise LengthMismatch(f"{name} has shape {arr.shape}, expected {shape}")
            if np.any(arr < 0):
                raise ValidationError(f"{name} must be nonnegative")
            object.__setattr__(self, name, arr)
        for name, arr in (("w_low", w_low), ("w_high", w_high)):
            if np.any(np.diag(arr) != 0):
                raise ValidationError(f"{name} must have a zero diagonal")
            if np.any((arr > 0) & (arr.T > 0)):
                raise ValidationError(f"{name} must not contain mutual edges")
            h, _ = dag.acyclicity_penalty(arr)
            if h > EPS_ACYC:
                raise ValidationError(f"{name} is not acyclic (h = {h:.3e})")

    @property
    def n_low(self) -> int:
        return len(self.low_ids)

    @property
    def g(self) -> int:
        return len(self.high_ids)

    def to_dict(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "low_ids": list(self.low_ids),
            "high_ids": list(self.high_ids),
            "w_low": self.w_low.tolist(),
            "w_high": self.w_high.tolist(),
            "w_cross": self.w_cross.tolist(),
            "w_kpi": self.w_kpi.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "InterdependentCausalGraph":
        return cls(
            data["metric_name"],
            tuple(data["low_ids"]),
            tuple(data["high_ids"]),
            data["w_low"],
            data["w_high"],
            data["w_cross"],
            data["w_kpi"],
        )


@dataclass(frozen=True)
class FaultLabel:
    """Ground truth for one system fault."""

    fault_id: str
    true_root_causes: frozenset[str]
    fault_window: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "true_root_causes", frozenset(self.true_root_causes))
        object.__setattr__(self, "fault_window", (int(self.fault_window[0]), int(self.fault_window[1])))
        if not self.true_root_causes:
            raise ValidationError(f"fault {self.fault_id!r} has no root causes")
        if self.fault_window[0] > self.fault_window[1]:
            raise ValidationError(f"fault {self.fault_id!r} window is inverted")

    def to_dict(self) -> dict:
        return {
            "fault_id": self.fault_id,
            "root_causes": sorted(self.true_root_causes),
            "window": list(self.fault_window),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FaultLabel":
        return cls(data["fault_id"], frozenset(data["root_causes"]), tuple(data["window"]))


@dataclass(frozen=True)
class EntityScores:
    """Score triple for one low-level entity, each in [0, 1]."""

    topological: float
    individual: float
    final: float

    def __post_init__(self):
        for name in ("topological", "individual", "final"):
            v = float(getattr(self, name))
            object.__setattr__(self, name, v)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} score {v} outside [0, 1]")


@dataclass(frozen=True)
class RcaReport:
    """Ranked root-cause candidates for one fault, with the scores behind them."""

    fault_id: str
    per_entity: Mapping[str, EntityScores]
    ranked: tuple[str, ...]
    k: int
    config_snapshot: Mapping[str, object]

    def __post_init__(self):
        per_entity = dict(self.per_entity)
        object.__setattr__(self, "per_entity", MappingProxyType(per_entity))
        object.__setattr__(self, "ranked", tuple(self.ranked))
        object.__setattr__(self, "config_snapshot", MappingProxyType(dict(self.config_snapshot)))
        if self.k < 1:
            raise ValidationError("k must be positive")
        expected = sorted(per_entity, key=lambda e: (-per_entity[e].final, e))
        expected = tuple(expected[: min(self.k, len(per_entity))])
        if self.ranked != expected:
            raise ValidationError("ranked list is not the top-k by final score with lexicographic ties")

    def to_dict(self) -> dict:
        return {
            "fault_id": self.fault_id,
            "per_entity": {
                e: {"topological": s.topological, "individual": s.individual, "final": s.final}
                for e, s in sorted(self.per_entity.items())
            },
            "ranked": list(self.ranked),
            "k": self.k,
            "config_snapshot": _plain(self.config_snapshot),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RcaReport":
        per_entity = {
            e: EntityScores(s["topological"], s["individual"], s["final"])
            for e, s in data["per_entity"].items()
        }
        return cls(data["fault_id"], per_entity, tuple(data["ranked"]), data["k"], data["config_snapshot"])


def _plain(obj):
    """Recursively convert mapping proxies to plain dicts for JSON emission."""
    if isinstance(obj, Mapping):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


@dataclass(frozen=True)
class ValidatedBundle:
    """Topology plus aligned per-metric panels for both levels and the KPI."""

    topology: TopologyDescriptor
    low_panels: Mapping[str, MetricPanel]
    high_panels: Mapping[str, MetricPanel]
    kpi: KpiSeries

    def __post_init__(self):
        object.__setattr__(self, "low_panels", MappingProxyType(dict(self.low_panels)))
        object.__setattr__(self, "high_panels", MappingProxyType(dict(self.high_panels)))

    @property
    def metrics(self) -> tuple[str, ...]:
        return tuple(sorted(self.low_panels))

    @property
    def n_times(self) -> int:
        return self.kpi.n_times

    def panels(self) -> list[MetricPanel]:
        return [self.low_panels[m] for m in self.metrics] + [self.high_panels[m] for m in self.metrics]


def validate_topology(
    topo: TopologyDescriptor,
    panels: Iterable[MetricPanel],
    kpi: KpiSeries,
) -> ValidatedBundle:
    """Check panels against the topology and align everything on one grid.

    Every metric must come with one panel per level covering that level's
    entities exactly; all series must share strictly increasing, uniformly
    spaced timestamps. Panel columns are reordered to the canonical entity
    order, so downstream matrix indices are stable. Idempotent on its output.
    """
    low_set = set(topo.low_level_ids)
    high_set = set(topo.high_level_ids)
    low_panels: dict[str, MetricPanel] = {}
    high_panels: dict[str, MetricPanel] = {}
    for panel in panels:
        ids = set(panel.entity_ids)
        unknown = ids - low_set - high_set
        if unknown:
            raise UnknownEntity(f"panel {panel.metric_name!r} references unknown entities {sorted(unknown)}")
        if ids <= low_set:
            level, target, full = "low", low_panels, low_set
        elif ids <= high_set:
            level, target, full = "high", high_panels, high_set
        else:
            raise UnknownEntity(f"panel {panel.metric_name!r} mixes entities from both levels")
        missing = full - ids
        if missing:
            raise UnknownEntity(
                f"panel {panel.metric_name!r} ({level}) is missing entities {sorted(missing)}"
            )
        if panel.metric_name in target:
            raise ValidationError(f"duplicate {level}-level panel for metric {panel.metric_name!r}")
        order = topo.low_level_ids if level == "low" else topo.high_level_ids
        target[panel.metric_name] = panel.reorder(order)
    if set(low_panels) != set(high_panels):
        odd = set(low_panels) ^ set(high_panels)
        raise LengthMismatch(f"metrics {sorted(odd)} are missing a panel on one level")
    if not low_panels:
        raise LengthMismatch("no metric panels supplied")

    reference = kpi.timestamps
    if reference.shape[0] < 2:
        raise LengthMismatch("need at least two time points")
    steps = np.diff(reference)
    if np.any(steps != steps[0]):
        raise NonUniformGrid("timestamps must lie on a uniform grid")
    for panel in list(low_panels.values()) + list(high_panels.values()):
        if panel.n_times != kpi.n_times:
            raise LengthMismatch(
                f"panel {panel.metric_name!r} has {panel.n_times} points, kpi has {kpi.n_times}"
            )
        if np.any(panel.timestamps != reference):
            raise LengthMismatch(f"panel {panel.metric_name!r} timestamps disagree with the kpi grid")
    return ValidatedBundle(topo, low_panels, high_panels, kpi)
