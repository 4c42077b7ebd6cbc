"""Hierarchical two-level forward model, the combined objective, and the trainer.

One metric at a time, the model predicts each series from its own lags and
its causal parents' lags. Low-level nodes feed a message-passing stack
gated by a learned adjacency; their final embeddings are aggregated into
the high-level stack through learned cross-level weights, and the
high-level embeddings feed a KPI prediction head through learned KPI
edges. The objective adds elementwise L1 sparsity on every learned weight
block and a trace-exponential acyclicity penalty on both within-level
adjacencies. Gradients are an explicit hand-written backward pass (checked
against finite differences in the test suite), so quasi-Newton training
needs no autodiff machinery.

Shape conventions (single metric):
    m           effective sample count, m = T + 1 - p
    n, g        low-level / high-level entity counts
    p           lag order; low embeddings have width p, high embeddings 2p
    w[j, i]     weight of the directed edge j -> i (row causes column)
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.optimize import minimize

from . import dag
from .errors import NonFiniteLoss, ShapeMismatch
from .lags import LagTensor, build_lag_embedding, lag_matrix
from .model import InterdependentCausalGraph, ValidatedBundle
from .util import named_rng

_LOSS_CEILING = 1e12  # returned instead of NaN/inf so line searches can back off


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of one structure-learning run."""

    p: int = 2
    layers: int = 2
    lambda1: float = 0.01
    lambda2: float = 10.0
    optimizer: str = "lbfgsb"  # "lbfgsb" (quasi-Newton, bounded) or "gd" (first-order fallback)
    max_iters: int = 2000
    grad_tol: float = 1e-6
    seed: int = 0
    init_scale: float = 0.1
    w_min: float = 0.05
    embed_width: int = 0  # message-passing embedding width; 0 means p
    n_starts: int = 4  # seeded inits probed before the main run
    probe_iters: int = 150
    cross_affiliation_only: bool = False
    low_block_diagonal: bool = False
    inter_level: bool = True

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.layers < 1:
            raise ValueError("need at least one message-passing layer")
        if self.p < 1:
            raise ValueError("lag order must be at least 1")


@dataclass(frozen=True)
class ModelDims:
    """Entity counts and derived layer widths.

    Message-passing layers keep a fixed embedding width k; the first layer
    maps the initial block (raw lag width p for the low level, lag width
    plus aggregation width for the high level) into it.
    """

    n_low: int
    g: int
    p: int
    layers: int
    k: int = 0

    def __post_init__(self):
        if self.k < 1:
            object.__setattr__(self, "k", self.p)

    @property
    def z0_low(self) -> int:
        return self.p

    @property
    def z0_high(self) -> int:
        return self.p + self.k

    @property
    def hidden(self) -> int:
        return 2 * self.p

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered (block name, shape) listing; packing order for the flat vector."""
        n, g, p, k = self.n_low, self.g, self.p, self.k
        out: list[tuple[str, tuple[int, ...]]] = [
            ("wp_low", (n, n)),
            ("wm_low", (n, n)),
            ("wp_high", (g, g)),
            ("wm_high", (g, g)),
            ("cross", (n, g)),
            ("kpi", (g,)),
            ("t_low", (p, p)),
            ("t_high", (p, p)),
        ]
        for l in range(self.layers):
            width_in = self.z0_low if l == 0 else k
            out.append((f"b_low.{l}", (2 * width_in, k)))
        for l in range(self.layers):
            width_in = self.z0_high if l == 0 else k
            out.append((f"b_high.{l}", (2 * width_in, k)))
        for name, k_in in (("mlp_low", k), ("mlp_high", k), ("mlp_kpi", p + k)):
            out += [
                (f"{name}.w1", (k_in, self.hidden)),
                (f"{name}.b1", (self.hidden,)),
                (f"{name}.w2", (self.hidden, 1)),
                (f"{name}.b2", (1,)),
            ]
        return out


@dataclass
class Mlp:
    """Two-layer perceptron head: relu hidden layer, linear scalar output."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class TrainableParams:
    """Every trainable block of the model for one metric."""

    wp_low: np.ndarray
    wm_low: np.ndarray
    wp_high: np.ndarray
    wm_high: np.ndarray
    cross: np.ndarray  # (n, g), nonnegative, low -> high
    kpi: np.ndarray  # (g,), nonnegative, high -> KPI
    t_low: np.ndarray  # (p, p) temporal weights on lagged inputs
    t_high: np.ndarray
    b_low: tuple[np.ndarray, ...]
    b_high: tuple[np.ndarray, ...]
    mlp_low: Mlp
    mlp_high: Mlp
    mlp_kpi: Mlp

    def blocks(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "wp_low", self.wp_low
        yield "wm_low", self.wm_low
        yield "wp_high", self.wp_high
        yield "wm_high", self.wm_high
        yield "cross", self.cross
        yield "kpi", self.kpi
        yield "t_low", self.t_low
        yield "t_high", self.t_high
        for l, b in enumerate(self.b_low):
            yield f"b_low.{l}", b
        for l, b in enumerate(self.b_high):
            yield f"b_high.{l}", b
        for name, mlp in (("mlp_low", self.mlp_low), ("mlp_high", self.mlp_high), ("mlp_kpi", self.mlp_kpi)):
            yield f"{name}.w1", mlp.w1
            yield f"{name}.b1", mlp.b1
            yield f"{name}.w2", mlp.w2
            yield f"{name}.b2", mlp.b2


def _params_from_arrays(dims: ModelDims, arrays: dict[str, np.ndarray]) -> TrainableParams:
    def head(name: str) -> Mlp:
        return Mlp(arrays[f"{name}.w1"], arrays[f"{name}.b1"], arrays[f"{name}.w2"], arrays[f"{name}.b2"])

    return TrainableParams(
        wp_low=arrays["wp_low"],
        wm_low=arrays["wm_low"],
        wp_high=arrays["wp_high"],
        wm_high=arrays["wm_high"],
        cross=arrays["cross"],
        kpi=arrays["kpi"],
        t_low=arrays["t_low"],
        t_high=arrays["t_high"],
        b_low=tuple(arrays[f"b_low.{l}"] for l in range(dims.layers)),
        b_high=tuple(arrays[f"b_high.{l}"] for l in range(dims.layers)),
        mlp_low=head("mlp_low"),
        mlp_high=head("mlp_high"),
        mlp_kpi=head("mlp_kpi"),
    )


def init_params(dims: ModelDims, config: TrainConfig, rng: np.random.Generator) -> TrainableParams:
    """Seeded symmetric-uniform init, with block scales that keep training alive.

    Structural blocks (adjacency pairs, cross, KPI) start at init_scale so
    edges begin near zero. The temporal map starts at identity plus noise,
    making the initial embedding essentially the raw lag block. Layer and
    head matrices draw at triple scale with a small positive hidden bias;
    starting every block at init_scale leaves the prediction path so weak
    that the sparsity penalty collapses the graph before anything is learned.
    """
    s = config.init_scale
    arrays = {}
    for name, shape in dims.shapes():
        if name.startswith(("b_", "mlp_")):
            if name.endswith(".b1"):
                arrays[name] = np.full(shape, s)
            elif name.endswith(".b2"):
                arrays[name] = np.zeros(shape)
            else:
                arrays[name] = rng.uniform(-3.0 * s, 3.0 * s, size=shape)
        else:
            arrays[name] = rng.uniform(-s, s, size=shape)
    arrays["cross"] = np.abs(arrays["cross"])
    arrays["kpi"] = np.abs(arrays["kpi"])
    arrays["t_low"] = arrays["t_low"] + np.eye(dims.p)
    arrays["t_high"] = arrays["t_high"] + np.eye(dims.p)
    return _params_from_arrays(dims, arrays)


def pack(params: TrainableParams) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in params.blocks()])


def unpack(dims: ModelDims, vec: np.ndarray) -> TrainableParams:
    arrays = {}
    offset = 0
    for name, shape in dims.shapes():
        size = int(np.prod(shape))
        arrays[name] = vec[offset : offset + size].reshape(shape)
        offset += size
    if offset != vec.size:
        raise ShapeMismatch(f"parameter vector has {vec.size} entries, expected {offset}")
    return _params_from_arrays(dims, arrays)


@dataclass(eq=False)
class _Masks:
    low: np.ndarray  # (n, n), zero diagonal, optionally block-diagonal
    high: np.ndarray  # (g, g), zero diagonal
    cross: np.ndarray  # (n, g), 0/1 support of allowed cross edges
    kpi: np.ndarray  # (g,)


def _build_masks(dims: ModelDims, config: TrainConfig, affil_cols: np.ndarray) -> _Masks:
    low = 1.0 - np.eye(dims.n_low)
    if config.low_block_diagonal:
        low *= (affil_cols[:, None] == affil_cols[None, :]).astype(float)
    high = 1.0 - np.eye(dims.g)
    cross = np.ones((dims.n_low, dims.g))
    if config.cross_affiliation_only:
        cross = np.zeros((dims.n_low, dims.g))
        cross[np.arange(dims.n_low), affil_cols] = 1.0
    kpi = np.ones(dims.g)
    if not config.inter_level:
        cross = np.zeros_like(cross)
        kpi = np.zeros_like(kpi)
    return _Masks(low=low, high=high, cross=cross, kpi=kpi)


def _materialize(wp: np.ndarray, wm: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    score = wp @ wm.T - wm @ wp.T
    th = np.tanh(score)
    return np.maximum(th, 0.0) * mask, th


def _materialize_backward(dw, th, mask, wp, wm) -> tuple[np.ndarray, np.ndarray]:
    ds = dw * mask * (th > 0) * (1.0 - th * th)
    dd = ds - ds.T
    return dd @ wm, dd.T @ wp


def _stack_forward(z0: np.ndarray, w: np.ndarray, b_layers) -> tuple[list, list, list]:
    """Message-passing layers: z_l = relu(cat(z, aggregated parents) @ B_l).

    Embeddings are kept in (nodes, time, width) layout so every neighbor
    aggregation is a single GEMM instead of a time-batched loop.
    """
    zs, cats, pres = [z0], [], []
    z = z0
    wt = np.ascontiguousarray(w.T)
    d = z0.shape[0]
    for b in b_layers:
        nbr = (wt @ z.reshape(d, -1)).reshape(z.shape)  # node i receives sum_j w[j, i] z_j
        cat = np.concatenate([z, nbr], axis=2)
        pre = np.matmul(cat, b)
        z = np.maximum(pre, 0.0)
        cats.append(cat)
        pres.append(pre)
        zs.append(z)
    return zs, cats, pres


def _contract_leading(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(d, m, c), (d, m, k) -> (c, k), contracting the first two axes via one GEMM."""
    return a.reshape(-1, a.shape[2]).T @ b.reshape(-1, b.shape[2])


def _contract_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(j, m, k), (i, m, k) -> (j, i), contracting time and feature axes."""
    return a.reshape(a.shape[0], -1) @ b.reshape(b.shape[0], -1).T


def _stack_backward(dz, zs, cats, pres, w, b_layers):
    layers = len(b_layers)
    g_bs = [None] * layers
    dw = np.zeros_like(w)
    d = dz.shape[0]
    for l in reversed(range(layers)):
        dpre = dz * (pres[l] > 0)
        g_bs[l] = _contract_leading(cats[l], dpre)
        dcat = np.matmul(dpre, b_layers[l].T)
        k = zs[l].shape[2]
        dnbr = dcat[..., k:]
        dz = dcat[..., :k] + (w @ dnbr.reshape(d, -1)).reshape(dnbr.shape)
        dw += _contract_outer(zs[l], dnbr)
    return g_bs, dw, dz


def _head_forward(z: np.ndarray, mlp: Mlp):
    lead = z.shape[:-1]
    zf = z.reshape(-1, z.shape[-1])
    h1_pre = zf @ mlp.w1 + mlp.b1
    h1 = np.maximum(h1_pre, 0.0)
    pred = (h1 @ mlp.w2)[:, 0] + mlp.b2[0]
    return h1_pre, h1, pred.reshape(lead)


def _head_backward(dpred, z, h1_pre, h1, mlp):
    zf = z.reshape(-1, z.shape[-1])
    df = dpred.reshape(-1, 1)
    g_w2 = h1.T @ df
    g_b2 = df.sum(axis=0)
    dh1 = df @ mlp.w2.T
    dh1 *= h1_pre > 0
    g_w1 = zf.T @ dh1
    g_b1 = dh1.sum(axis=0)
    dz = (dh1 @ mlp.w1.T).reshape(z.shape)
    return Mlp(g_w1, g_b1, g_w2, g_b2), dz


@dataclass(eq=False)
class MetricTensors:
    """Lagged views of one metric's panels and the KPI, ready for training."""

    lag3d_low: np.ndarray  # (n, m, p)
    targets_low: np.ndarray  # (n, m)
    lag3d_high: np.ndarray  # (g, m, p)
    targets_high: np.ndarray  # (g, m)
    kpi_lags: np.ndarray  # (m, p)
    kpi_targets: np.ndarray  # (m,)
    m: int


def metric_tensors(bundle: ValidatedBundle, metric: str, p: int) -> MetricTensors:
    low = build_lag_embedding(bundle.low_panels[metric], p)
    high = build_lag_embedding(bundle.high_panels[metric], p)
    kpi_targets, kpi_lags = lag_matrix(bundle.kpi.values, p)
    return MetricTensors(
        lag3d_low=np.ascontiguousarray(low.node_blocks().transpose(1, 0, 2)),
        targets_low=np.ascontiguousarray(low.targets.T),
        lag3d_high=np.ascontiguousarray(high.node_blocks().transpose(1, 0, 2)),
        targets_high=np.ascontiguousarray(high.targets.T),
        kpi_lags=kpi_lags,
        kpi_targets=kpi_targets[:, 0],
        m=low.m,
    )


def _evaluate(t: MetricTensors, params: TrainableParams, config: TrainConfig, masks: _Masks, need_grad: bool):
    m = t.m
    w_low, th_low = _materialize(params.wp_low, params.wm_low, masks.low)
    w_high, th_high = _materialize(params.wp_high, params.wm_high, masks.high)
    cross = params.cross * masks.cross
    kpi = params.kpi * masks.kpi

    # low-level stack and prediction head
    z0_low = np.matmul(t.lag3d_low, params.t_low)
    zs_l, cats_l, pres_l = _stack_forward(z0_low, w_low, params.b_low)
    h1p_l, h1_l, pred_low = _head_forward(zs_l[-1], params.mlp_low)
    res_low = pred_low - t.targets_low
    loss_low = float((res_low**2).sum()) / m

    # high-level stack seeded by lag block plus aggregated low embeddings
    lag_embed_high = np.matmul(t.lag3d_high, params.t_high)
    zl_last = zs_l[-1]
    agg = (cross.T @ zl_last.reshape(zl_last.shape[0], -1)).reshape(cross.shape[1], *zl_last.shape[1:])
    z0_high = np.concatenate([lag_embed_high, agg], axis=2)
    zs_h, cats_h, pres_h = _stack_forward(z0_high, w_high, params.b_high)
    h1p_h, h1_h, pred_high = _head_forward(zs_h[-1], params.mlp_high)
    res_high = pred_high - t.targets_high
    loss_high = float((res_high**2).sum()) / m

    # KPI head over KPI lags plus aggregated high embeddings
    zh_last = zs_h[-1]
    kagg = (kpi @ zh_last.reshape(zh_last.shape[0], -1)).reshape(zh_last.shape[1:])
    zk = np.concatenate([t.kpi_lags, kagg], axis=1)
    h1p_s, h1_s, pred_kpi = _head_forward(zk, params.mlp_kpi)
    res_kpi = pred_kpi - t.kpi_targets
    loss_kpi = float((res_kpi**2).sum()) / m

    h_low, gh_low = dag.acyclicity_penalty(w_low)
    h_high, gh_high = dag.acyclicity_penalty(w_high)
    l1 = float(w_low.sum() + w_high.sum() + cross.sum() + kpi.sum())
    total = loss_low + loss_high + loss_kpi + config.lambda1 * l1 + config.lambda2 * (h_low + h_high)

    if not need_grad:
        return total, None

    scale = 2.0 / m

    # KPI head
    g_mlp_kpi, dzk = _head_backward(scale * res_kpi, zk, h1p_s, h1_s, params.mlp_kpi)
    dkagg = dzk[:, t.kpi_lags.shape[1] :]
    g_kpi = zh_last.reshape(kpi.shape[0], -1) @ dkagg.ravel()
    dz_high = kpi[:, None, None] * dkagg[None, :, :]

    # high level (head contribution plus KPI aggregation contribution)
    g_mlp_high, dz_head_h = _head_backward(scale * res_high, zs_h[-1], h1p_h, h1_h, params.mlp_high)
    dz_high = dz_high + dz_head_h
    g_b_high, dw_high, dz0_high = _stack_backward(dz_high, zs_h, cats_h, pres_h, w_high, params.b_high)
    p_width = lag_embed_high.shape[2]
    g_t_high = _contract_leading(t.lag3d_high, dz0_high[..., :p_width])
    dagg = dz0_high[..., p_width:]
    g_cross = _contract_outer(zl_last, dagg)
    dz_low_cross = (cross @ dagg.reshape(dagg.shape[0], -1)).reshape(cross.shape[0], *dagg.shape[1:])

    # low level (head contribution plus cross-level aggregation contribution)
    g_mlp_low, dz_low = _head_backward(scale * res_low, zs_l[-1], h1p_l, h1_l, params.mlp_low)
    dz_low = dz_low + dz_low_cross
    g_b_low, dw_low, dz0_low = _stack_backward(dz_low, zs_l, cats_l, pres_l, w_low, params.b_low)
    g_t_low = _contract_leading(t.lag3d_low, dz0_low)

    # sparsity and acyclicity act on the materialized weights
    dw_low += config.lambda1 + config.lambda2 * gh_low
    dw_high += config.lambda1 + config.lambda2 * gh_high
    g_wp_low, g_wm_low = _materialize_backward(dw_low, th_low, masks.low, params.wp_low, params.wm_low)
    g_wp_high, g_wm_high = _materialize_backward(dw_high, th_high, masks.high, params.wp_high, params.wm_high)
    g_cross = (g_cross + config.lambda1) * masks.cross
    g_kpi = (g_kpi + config.lambda1) * masks.kpi

    grads = TrainableParams(
        wp_low=g_wp_low,
        wm_low=g_wm_low,
        wp_high=g_wp_high,
        wm_high=g_wm_high,
        cross=g_cross,
        kpi=g_kpi,
        t_low=g_t_low,
        t_high=g_t_high,
        b_low=tuple(g_b_low),
        b_high=tuple(g_b_high),
        mlp_low=g_mlp_low,
        mlp_high=g_mlp_high,
        mlp_kpi=g_mlp_kpi,
    )
    return total, grads


class _Problem:
    """Flat-vector objective wrapper around one metric's tensors."""

    def __init__(self, tensors: MetricTensors, dims: ModelDims, config: TrainConfig, affil_cols: np.ndarray):
        self.tensors = tensors
        self.dims = dims
        self.config = config
        self.masks = _build_masks(dims, config, affil_cols)
        self._last_x: np.ndarray | None = None
        self._last_f: float = np.nan

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        params = unpack(self.dims, x)
        total, grads = _evaluate(self.tensors, params, self.config, self.masks, need_grad=True)
        if not np.isfinite(total):
            return _LOSS_CEILING, np.zeros_like(x)
        self._last_x = x.copy()
        self._last_f = total
        return total, pack(grads)

    def value(self, x: np.ndarray) -> float:
        params = unpack(self.dims, x)
        total, _ = _evaluate(self.tensors, params, self.config, self.masks, need_grad=False)
        return total if np.isfinite(total) else _LOSS_CEILING

    def cached_value(self, x: np.ndarray) -> float:
        if self._last_x is not None and np.array_equal(x, self._last_x):
            return self._last_f
        return self.value(x)

    def bounds(self) -> list[tuple[float | None, float | None]]:
        out: list[tuple[float | None, float | None]] = []
        for name, shape in self.dims.shapes():
            size = int(np.prod(shape))
            if name == "cross":
                out += [(0.0, 0.0) if v == 0 else (0.0, None) for v in self.masks.cross.ravel()]
            elif name == "kpi":
                out += [(0.0, 0.0) if v == 0 else (0.0, None) for v in self.masks.kpi.ravel()]
            else:
                out += [(None, None)] * size
        return out


def relu_preactivations(
    bundle: ValidatedBundle, params: TrainableParams, config: TrainConfig, metric: str | None = None
) -> np.ndarray:
    """All relu pre-activation values of one forward pass, flattened.

    Finite-difference gradient checks are only meaningful when no unit sits
    on the relu kink; this exposes the margins so a test can pick its
    evaluation points accordingly.
    """
    metric = _resolve_metric(bundle, metric)
    dims = _dims_for(bundle, config)
    t = metric_tensors(bundle, metric, config.p)
    masks = _build_masks(dims, config, _affil_cols(bundle))
    w_low, _ = _materialize(params.wp_low, params.wm_low, masks.low)
    w_high, _ = _materialize(params.wp_high, params.wm_high, masks.high)
    cross = params.cross * masks.cross
    kpi = params.kpi * masks.kpi
    z0_low = np.matmul(t.lag3d_low, params.t_low)
    zs_l, _, pres_l = _stack_forward(z0_low, w_low, params.b_low)
    h1p_l, _, _ = _head_forward(zs_l[-1], params.mlp_low)
    lag_embed_high = np.matmul(t.lag3d_high, params.t_high)
    zl_last = zs_l[-1]
    agg = (cross.T @ zl_last.reshape(zl_last.shape[0], -1)).reshape(cross.shape[1], *zl_last.shape[1:])
    z0_high = np.concatenate([lag_embed_high, agg], axis=2)
    zs_h, _, pres_h = _stack_forward(z0_high, w_high, params.b_high)
    h1p_h, _, _ = _head_forward(zs_h[-1], params.mlp_high)
    zh_last = zs_h[-1]
    kagg = (kpi @ zh_last.reshape(zh_last.shape[0], -1)).reshape(zh_last.shape[1:])
    zk = np.concatenate([t.kpi_lags, kagg], axis=1)
    h1p_s, _, _ = _head_forward(zk, params.mlp_kpi)
    pieces = [p.ravel() for p in pres_l + pres_h] + [h1p_l.ravel(), h1p_h.ravel(), h1p_s.ravel()]
    return np.concatenate(pieces)


def total_loss(
    bundle: ValidatedBundle, params: TrainableParams, config: TrainConfig, metric: str | None = None
) -> tuple[float, TrainableParams]:
    """Objective value and gradients for explicit parameters on one metric."""
    metric = _resolve_metric(bundle, metric)
    dims = _dims_for(bundle, config)
    problem = _Problem(metric_tensors(bundle, metric, config.p), dims, config, _affil_cols(bundle))
    total, grads = _evaluate(problem.tensors, params, config, problem.masks, need_grad=True)
    if not np.isfinite(total):
        raise NonFiniteLoss(f"objective for metric {metric!r} is not finite")
    return total, grads


def intra_forward(lag: LagTensor, w: np.ndarray, params: TrainableParams, level: str = "low") -> np.ndarray:
    """Within-level predictions (m x d) from a lag tensor and an adjacency."""
    if level == "low":
        temporal, b_layers, mlp = params.t_low, params.b_low, params.mlp_low
    elif level == "high":
        temporal, b_layers, mlp = params.t_high, params.b_high, params.mlp_high
    else:
        raise ValueError(f"unknown level {level!r}")
    d = w.shape[0]
    if w.shape != (d, d) or lag.d != d:
        raise ShapeMismatch(f"adjacency {w.shape} does not match {lag.d} entities")
    if temporal.shape != (lag.p, lag.p):
        raise ShapeMismatch(f"temporal weights {temporal.shape} do not match lag order {lag.p}")
    blocks = np.ascontiguousarray(lag.node_blocks().transpose(1, 0, 2))  # (d, m, p)
    z0 = np.matmul(blocks, temporal)
    zs, _, _ = _stack_forward(z0, w, b_layers)
    _, _, pred = _head_forward(zs[-1], mlp)
    if not np.isfinite(pred).all():
        raise NonFiniteLoss("forward pass produced non-finite predictions")
    return np.ascontiguousarray(pred.T)


def inter_aggregate(low_embed: np.ndarray, cross: np.ndarray, high_lag_embed: np.ndarray) -> np.ndarray:
    """High-level initial embeddings: lag block then cross-aggregated low block."""
    if low_embed.ndim != 3 or high_lag_embed.ndim != 3:
        raise ShapeMismatch("embeddings must be (m, nodes, width) arrays")
    m, n, _ = low_embed.shape
    if cross.shape[0] != n or high_lag_embed.shape[0] != m or cross.shape[1] != high_lag_embed.shape[1]:
        raise ShapeMismatch(
            f"cross weights {cross.shape} incompatible with embeddings {low_embed.shape} / {high_lag_embed.shape}"
        )
    agg = np.matmul(cross.T, low_embed)
    return np.concatenate([high_lag_embed, agg], axis=2)


@dataclass(eq=False)
class FitResult:
    """Learned graph plus the optimizer trajectory behind it."""

    graph: InterdependentCausalGraph
    trace: np.ndarray  # objective at the start point and after each accepted step
    converged: bool
    iterations: int
    grad_norm: float
    h_low: float
    h_high: float
    params: TrainableParams


def _resolve_metric(bundle: ValidatedBundle, metric: str | None) -> str:
    if metric is not None:
        if metric not in bundle.low_panels:
            raise KeyError(f"metric {metric!r} not in bundle")
        return metric
    if len(bundle.metrics) != 1:
        raise ValueError(f"bundle holds metrics {bundle.metrics}; pass one explicitly")
    return bundle.metrics[0]


def _dims_for(bundle: ValidatedBundle, config: TrainConfig) -> ModelDims:
    return ModelDims(
        n_low=bundle.topology.n_low,
        g=bundle.topology.g,
        p=config.p,
        layers=config.layers,
        k=config.embed_width,
    )


def _affil_cols(bundle: ValidatedBundle) -> np.ndarray:
    topo = bundle.topology
    high_index = {h: i for i, h in enumerate(topo.high_level_ids)}
    return np.array([high_index[topo.affiliation[e]] for e in topo.low_level_ids])


def _probe_start(problem: _Problem, config: TrainConfig, metric: str) -> np.ndarray:
    """Pick the most promising seeded init by short quasi-Newton probes.

    The objective has bad basins where the sparsity penalty flattens the
    graph before the prediction path wakes up; a short probe separates
    those from productive starts cheaply.
    """
    candidates = []
    for start in range(max(config.n_starts, 1)):
        rng = named_rng(config.seed, "fit", metric, f"start{start}")
        params0 = init_params(problem.dims, config, rng)
        params0.cross *= problem.masks.cross
        params0.kpi *= problem.masks.kpi
        candidates.append(pack(params0))
    if len(candidates) == 1 or config.probe_iters < 1:
        return candidates[0]
    best_x, best_f = None, np.inf
    for x0 in candidates:
        res = minimize(
            problem.value_and_grad,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=problem.bounds(),
            options={"maxiter": config.probe_iters, "gtol": config.grad_tol},
        )
        if res.fun < best_f:
            best_x, best_f = x0, res.fun
    return best_x


def fit_interdependent(bundle: ValidatedBundle, config: TrainConfig, metric: str | None = None) -> FitResult:
    """Train one metric's interdependent causal graph.

    Probes n_starts seeded inits, then runs the bounded quasi-Newton solver
    (or the first-order fallback) from the best one, prunes weights below
    w_min and breaks any residual cycle, so the returned graph always
    satisfies the acyclicity contract. A run that hits the iteration cap
    still returns its best iterate with ``converged`` set to False.
    """
    metric = _resolve_metric(bundle, metric)
    dims = _dims_for(bundle, config)
    tensors = metric_tensors(bundle, metric, config.p)
    problem = _Problem(tensors, dims, config, _affil_cols(bundle))

    x0 = _probe_start(problem, config, metric)

    trace = [problem.value(x0)]
    if config.optimizer == "lbfgsb":
        res = minimize(
            problem.value_and_grad,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=problem.bounds(),
            callback=lambda xk: trace.append(problem.cached_value(xk)),
            options={"maxiter": config.max_iters, "gtol": config.grad_tol, "maxfun": 20 * config.max_iters},
        )
        x, converged, iterations = res.x, res.status == 0, int(res.nit)
        grad_norm = float(np.max(np.abs(res.jac))) if res.jac is not None else np.inf
    elif config.optimizer == "gd":
        x, converged, iterations, grad_norm = _gd_minimize(problem, x0, config, trace)
    else:
        raise ValueError(f"unknown optimizer {config.optimizer!r}")

    params = unpack(dims, x)
    w_low, _ = _materialize(params.wp_low, params.wm_low, problem.masks.low)
    w_high, _ = _materialize(params.wp_high, params.wm_high, problem.masks.high)
    w_low = dag.prune_to_dag(w_low, config.w_min)
    w_high = dag.prune_to_dag(w_high, config.w_min)
    cross = params.cross * problem.masks.cross
    kpi = params.kpi * problem.masks.kpi
    cross = np.where(cross >= config.w_min, cross, 0.0)
    kpi = np.where(kpi >= config.w_min, kpi, 0.0)
    topo = bundle.topology
    graph = InterdependentCausalGraph(
        metric_name=metric,
        low_ids=topo.low_level_ids,
        high_ids=topo.high_level_ids,
        w_low=w_low,
        w_high=w_high,
        w_cross=cross,
        w_kpi=kpi,
    )
    return FitResult(
        graph=graph,
        trace=np.asarray(trace),
        converged=converged,
        iterations=iterations,
        grad_norm=grad_norm,
        h_low=dag.acyclicity_penalty(w_low)[0],
        h_high=dag.acyclicity_penalty(w_high)[0],
        params=params,
    )


def _gd_minimize(problem: _Problem, x0: np.ndarray, config: TrainConfig, trace: list):
    """Projected gradient descent with backtracking, the first-order fallback."""
    bounds = problem.bounds()
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])
    x = np.clip(x0, lo, hi)
    f, grad = problem.value_and_grad(x)
    step = 1.0
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        pg = grad.copy()
        pg[(x <= lo) & (pg > 0)] = 0.0
        pg[(x >= hi) & (pg < 0)] = 0.0
        if np.max(np.abs(pg)) <= config.grad_tol:
            converged = True
            break
        accepted = False
        while step >= 1e-14:
            x_new = np.clip(x - step * grad, lo, hi)
            f_new = problem.value(x_new)
            if f_new <= f - 1e-4 * float(grad @ (x - x_new)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        x = x_new
        f, grad = problem.value_and_grad(x)
        trace.append(f)
        step = min(step * 2.0, 1e3)
    pg = grad.copy()
    pg[(x <= lo) & (pg > 0)] = 0.0
    pg[(x >= hi) & (pg < 0)] = 0.0
    grad_norm = float(np.max(np.abs(pg)))
    return x, converged or grad_norm <= config.grad_tol, iterations, grad_norm
