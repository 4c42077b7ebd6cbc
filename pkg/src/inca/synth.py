"""Synthetic interdependent systems: ground-truth graphs, dynamics, fault injection.

Each level's DAG is sampled under a random topological order, so acyclicity
holds by construction. Dynamics follow a linear lagged recursion whose
companion matrix is rescaled to a safe spectral radius. Faults are additive
shocks overlaid on the nominal trajectory: the root cause takes the full
decaying shock, and every causal descendant (KPI included) takes a
path-weight-scaled copy delayed by hop_delay steps per hop, mirroring the
impulse response of the linear dynamics. Because the overlay never touches
the noise stream, runs with and without faults differ only at affected
cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    FaultLabel,
    InterdependentCausalGraph,
    KpiSeries,
    MetricPanel,
    TopologyDescriptor,
)
from .util import named_rng

_EPOCH_START = 1_600_000_000
_STEP_SECONDS = 60


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of one synthetic system draw."""

    g: int
    low_per_high: tuple[int, ...]
    p: int = 2
    edge_density: float = 0.2
    weight_range: tuple[float, float] = (0.3, 0.8)
    noise_sigma: float = 0.05
    t_steps: int = 2000  # produces t_steps + 1 samples
    seed: int = 0
    self_inertia: float = 0.3
    lag_decay: float = 0.5  # geometric split of each edge weight across lags
    spectral_radius_cap: float = 0.95
    noise_family: str = "gaussian"  # or "student_t"
    t_dof: float = 4.0
    metric_names: tuple[str, ...] = ("m0",)

    def __post_init__(self):
        object.__setattr__(self, "low_per_high", tuple(int(v) for v in self.low_per_high))
        object.__setattr__(self, "metric_names", tuple(self.metric_names))
        if len(self.low_per_high) != self.g:
            raise ValueError("low_per_high must list one domain size per high-level node")
        if self.g < 1 or any(v < 1 for v in self.low_per_high):
            raise ValueError("need at least one entity per level")
        if self.noise_family not in ("gaussian", "student_t"):
            raise ValueError(f"unknown noise family {self.noise_family!r}")


@dataclass(frozen=True)
class FaultSpec:
    """One injected fault: where, when, and how hard it hits."""

    root_cause: str
    onset: int
    magnitude: float = 5.0  # shock size in stdev units of the nominal series
    decay: float = 0.9  # per-step retention of the shock
    hop_delay: int = 2  # steps per causal hop

    def __post_init__(self):
        if self.magnitude <= 0:
            raise ValueError("magnitude must be positive")
        if not (0.0 < self.decay < 1.0):
            raise ValueError("decay must lie in (0, 1)")
        if self.hop_delay < 1:
            raise ValueError("hop_delay must be at least 1")


@dataclass(frozen=True, eq=False)
class SynthSystem:
    """Ground truth: topology, causal graph, and the lagged coefficient tensor."""

    topology: TopologyDescriptor
    graph: InterdependentCausalGraph
    coeffs: np.ndarray  # (p, N, N), row causes column, ordering [low | high | kpi]
    node_ids: tuple[str, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def edge_weights(self) -> np.ndarray:
        """Full (N, N) edge-weight matrix of the causal graph, KPI column included."""
        n, g = self.graph.n_low, self.graph.g
        full = np.zeros((n + g + 1, n + g + 1))
        full[:n, :n] = self.graph.w_low
        full[n : n + g, n : n + g] = self.graph.w_high
        full[:n, n : n + g] = self.graph.w_cross
        full[n : n + g, n + g] = self.graph.w_kpi
        return full


def _sample_dag(d: int, density: float, weights, rng: np.random.Generator) -> np.ndarray:
    order = rng.permutation(d)
    rank = np.empty(d, dtype=int)
    rank[order] = np.arange(d)
    w = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            if rank[i] < rank[j] and rng.random() < density:
                w[i, j] = rng.uniform(*weights)
    return w


def _companion_radius(coeffs: np.ndarray) -> float:
    p, n, _ = coeffs.shape
    comp = np.zeros((p * n, p * n))
    for s in range(p):
        comp[:n, s * n : (s + 1) * n] = coeffs[s].T
    if p > 1:
        comp[n:, : (p - 1) * n] = np.eye((p - 1) * n)
    return float(np.abs(np.linalg.eigvals(comp)).max())


def generate_system(spec: SynthSpec) -> SynthSystem:
    """Sample a ground-truth system for the given spec, deterministically per seed.

    Every high-level node is guaranteed at least one incoming cross edge and
    the KPI at least one incoming edge, so injected faults have a route to
    the system indicator.
    """
    rng = named_rng(spec.seed, "system")
    high_ids = tuple(f"h{i}" for i in range(spec.g))
    affiliation: dict[str, str] = {}
    for i, count in enumerate(spec.low_per_high):
        for j in range(count):
            affiliation[f"h{i}.l{j}"] = high_ids[i]
    topo = TopologyDescriptor(high_level_ids=high_ids, affiliation=affiliation, kpi_id="kpi")
    low_ids = topo.low_level_ids
    n, g = len(low_ids), spec.g

    w_low = _sample_dag(n, spec.edge_density, spec.weight_range, rng)
    w_high = _sample_dag(g, spec.edge_density, spec.weight_range, rng)
    w_cross = np.zeros((n, g))
    for b in range(n):
        for i in range(g):
            if rng.random() < spec.edge_density:
                w_cross[b, i] = rng.uniform(*spec.weight_range)
    domain = {e: topo.affiliation[e] for e in low_ids}
    for i, high in enumerate(high_ids):
        if spec.edge_density > 0 and not w_cross[:, i].any():
            local = [b for b, e in enumerate(low_ids) if domain[e] == high]
            w_cross[rng.choice(local), i] = rng.uniform(*spec.weight_range)
    w_kpi = np.where(rng.random(g) < spec.edge_density, rng.uniform(*spec.weight_range, size=g), 0.0)
    if spec.edge_density > 0 and not w_kpi.any():
        w_kpi[rng.integers(g)] = rng.uniform(*spec.weight_range)

    graph = InterdependentCausalGraph(
        metric_name="ground_truth",
        low_ids=low_ids,
        high_ids=high_ids,
        w_low=w_low,
        w_high=w_high,
        w_cross=w_cross,
        w_kpi=w_kpi,
    )
    node_ids = tuple(low_ids) + high_ids + ("kpi",)
    n_all = len(node_ids)

    profile = spec.lag_decay ** np.arange(spec.p)
    profile = profile / profile.sum()
    system = SynthSystem(topology=topo, graph=graph, coeffs=np.zeros((spec.p, n_all, n_all)), node_ids=node_ids)
    coeffs = np.einsum("s,jk->sjk", profile, system.edge_weights())
    coeffs[0] += spec.self_inertia * np.eye(n_all)
    for _ in range(20):
        radius = _companion_radius(coeffs)
        if radius <= spec.spectral_radius_cap:
            break
        coeffs *= spec.spectral_radius_cap / radius
    return SynthSystem(topology=topo, graph=graph, coeffs=coeffs, node_ids=node_ids)


def _simulate_nominal(system: SynthSystem, spec: SynthSpec, metric: str) -> np.ndarray:
    rng = named_rng(spec.seed, "noise", metric)
    p, n_all = spec.p, system.n_nodes
    burn = 10 * p
    total = burn + spec.t_steps + 1
    if spec.noise_family == "student_t":
        noise = spec.noise_sigma * rng.standard_t(spec.t_dof, size=(total, n_all))
    else:
        noise = spec.noise_sigma * rng.standard_normal((total, n_all))
    series = np.zeros((total, n_all))
    for t in range(total):
        x = noise[t].copy()
        for s in range(min(p, t)):
            x += series[t - 1 - s] @ system.coeffs[s]
        series[t] = x
    return series[burn:]


def _shock_overlay(system: SynthSystem, fault: FaultSpec, scales: np.ndarray, n_times: int) -> np.ndarray:
    """Additive fault signal per (time, node): decaying shocks along causal paths."""
    node_index = {e: i for i, e in enumerate(system.node_ids)}
    root = node_index[fault.root_cause]
    weights = system.edge_weights()
    n_all = system.n_nodes
    # influence[k] = summed path weights from the root at delay k = hop_delay * path length
    influence: dict[int, np.ndarray] = {0: np.zeros(n_all)}
    influence[0][root] = 1.0
    frontier = [0]
    max_delay = fault.hop_delay * n_all
    while frontier:
        delay = frontier.pop(0)
        nxt = influence[delay] @ weights
        if not nxt.any() or delay + fault.hop_delay > max_delay:
            continue
        key = delay + fault.hop_delay
        if key in influence:
            influence[key] += nxt
        else:
            influence[key] = nxt
            frontier.append(key)
    overlay = np.zeros((n_times, n_all))
    for delay, weight in sorted(influence.items()):
        start = fault.onset + delay
        if start >= n_times or not weight.any():
            continue
        tail = fault.decay ** np.arange(n_times - start)
        overlay[start:] += np.outer(tail, fault.magnitude * scales * weight)
    return overlay


def fault_window(fault: FaultSpec, system: SynthSystem, n_times: int) -> tuple[int, int]:
    """Index window [onset, end] over which the injected shock is material."""
    settle = int(np.ceil(np.log(0.02) / np.log(fault.decay)))
    end = fault.onset + fault.hop_delay * system.n_nodes + settle
    return fault.onset, min(end, n_times - 1)


def simulate(
    system: SynthSystem, spec: SynthSpec, faults: tuple[FaultSpec, ...] = ()
) -> tuple[list[MetricPanel], KpiSeries, list[FaultLabel]]:
    """Panels, KPI series, and fault labels for one simulated run.

    Shock magnitudes are expressed in units of each node's nominal standard
    deviation (falling back to 1 for degenerate constant series).
    """
    if any(f.onset < 0 or f.onset > spec.t_steps for f in faults):
        raise ValueError("fault onset outside the simulated range")
    n, g = system.graph.n_low, system.graph.g
    timestamps = _EPOCH_START + _STEP_SECONDS * np.arange(spec.t_steps + 1)
    panels: list[MetricPanel] = []
    kpi_values = None
    for metric in spec.metric_names:
        series = _simulate_nominal(system, spec, metric)
        scales = series.std(axis=0)
        scales = np.where(scales < 1e-12, 1.0, scales)
        for fault in faults:
            series = series + _shock_overlay(system, fault, scales, series.shape[0])
        panels.append(MetricPanel(metric, system.graph.low_ids, timestamps, series[:, :n]))
        panels.append(MetricPanel(metric, system.graph.high_ids, timestamps, series[:, n : n + g]))
        if kpi_values is None:
            kpi_values = series[:, n + g]
    kpi = KpiSeries(timestamps=timestamps, values=kpi_values)
    labels = []
    for idx, fault in enumerate(faults):
        lo, hi = fault_window(fault, system, spec.t_steps + 1)
        labels.append(
            FaultLabel(
                fault_id=f"f{idx}",
                true_root_causes=frozenset({fault.root_cause}),
                fault_window=(int(timestamps[lo]), int(timestamps[hi])),
            )
        )
    return panels, kpi, labels


def kpi_connected_low_nodes(system: SynthSystem) -> tuple[str, ...]:
    """Low-level entities with a directed causal path to the KPI node."""
    weights = system.edge_weights() > 0
    n_all = system.n_nodes
    reach = weights.copy()
    for _ in range(n_all):
        new = reach | (reach @ weights)
        if (new == reach).all():
            break
        reach = new
    kpi_idx = n_all - 1
    n = system.graph.n_low
    return tuple(e for i, e in enumerate(system.node_ids[:n]) if reach[i, kpi_idx])
