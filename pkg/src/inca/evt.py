"""Extreme-value scoring of individual entity series.

Values above a peak threshold eta follow a generalized Pareto tail; its
maximum-likelihood fit yields an anomaly boundary. Streaming detection
keeps refitting the tail as new in-between peaks arrive and flags values
beyond the current boundary. The per-entity score is the mean logistic of
the flagged anomaly magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .errors import InvalidCounts, TooFewPeaks, TooShort

_MIN_FIT_PEAKS = 10  # public fit contract; the streaming path has softer fallbacks


@dataclass(frozen=True)
class EvtConfig:
    q: float = 1e-3  # tail probability of potential extreme values
    init_fraction: float = 0.5  # share of the series used for initialization
    eta_quantile: float = 0.98  # empirical quantile defining the peak threshold
    refit_every: int = 1  # refit the tail after this many new peaks
    two_sided: bool = True  # also detect drops by scanning the negated series

    def __post_init__(self):
        for name in ("q", "init_fraction", "eta_quantile"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {v}")
        if self.refit_every < 1:
            raise ValueError("refit_every must be at least 1")


@dataclass(frozen=True, eq=False)
class EvtState:
    """Fitted tail state: threshold, GPD parameters, boundary, and counts."""

    eta: float
    zeta: float
    delta: float
    boundary: float
    n: int
    n_eta: int
    peaks: np.ndarray  # excesses over eta, all positive

    def __post_init__(self):
        peaks = np.asarray(self.peaks, dtype=float)
        peaks.setflags(write=False)
        object.__setattr__(self, "peaks", peaks)
        if self.delta <= 0:
            raise ValueError(f"scale must be positive, got {self.delta}")
        if self.n_eta != peaks.size or self.n_eta > self.n:
            raise InvalidCounts(f"peak count {self.n_eta} inconsistent with n={self.n}, stored={peaks.size}")
        if peaks.size and peaks.min() <= 0:
            raise ValueError("stored peaks must be positive excesses")
        if self.n_eta and self.boundary < self.eta:
            raise ValueError("boundary must not fall below the peak threshold")


def estimate_eta(init_segment: np.ndarray, config: EvtConfig) -> float:
    """Peak threshold: the linear-interpolated empirical quantile of the segment."""
    seg = np.asarray(init_segment, dtype=float)
    if seg.size < 20:
        raise TooShort(f"threshold estimation needs at least 20 points, got {seg.size}")
    return float(np.quantile(seg, config.eta_quantile))


def _log_likelihood(y: np.ndarray, zeta: float, delta: float) -> float:
    """GPD log-likelihood; -inf outside the feasible region."""
    if delta <= 0:
        return -np.inf
    if abs(zeta) < 1e-9:
        return float(-y.size * math.log(delta) - y.sum() / delta)
    arg = 1.0 + zeta * y / delta
    if np.any(arg <= 0):
        return -np.inf
    return float(-y.size * math.log(delta) - (1.0 + 1.0 / zeta) * np.log(arg).sum())


def _grimshaw_roots(y: np.ndarray) -> list[float]:
    """Roots of the reduced likelihood equation u(s) v(s) = 1 over s = 1 + t y."""

    def w(t: float) -> float:
        s = 1.0 + t * y
        return (1.0 + np.mean(np.log(s))) * np.mean(1.0 / s) - 1.0

    y_min, y_max, y_mean = float(y.min()), float(y.max()), float(y.mean())
    eps = 1e-8 / max(y_mean, 1e-12)
    left = (-1.0 / y_max + eps, -eps)
    right = (eps, max(2.0 * (y_mean - y_min) / y_min**2, 10.0 * eps))
    roots: list[float] = []
    for lo, hi in (left, right):
        if hi <= lo:
            continue
        grid = np.linspace(lo, hi, 65)
        vals = np.array([w(t) for t in grid])
        sign_flip = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
        for idx in sign_flip:
            try:
                roots.append(float(brentq(w, grid[idx], grid[idx + 1], xtol=1e-14)))
            except ValueError:
                continue
    return roots


def _fit_excesses(y: np.ndarray) -> tuple[float, float]:
    """Best (zeta, delta) among Grimshaw roots, a zeta grid, and the exponential fit."""
    y = np.asarray(y, dtype=float)
    y_mean = float(y.mean())
    if y.size < 2 or float(np.ptp(y)) < 1e-12:
        return 0.0, max(y_mean, 1e-12)
    candidates: list[tuple[float, float]] = [(0.0, y_mean)]
    for t in _grimshaw_roots(y):
        if t == 0.0:
            continue
        zeta = float(np.mean(np.log(1.0 + t * y)))
        candidates.append((zeta, zeta / t))
    # moment-matched fallback family over a fixed shape grid
    for zeta in np.linspace(-0.5, 1.0, 31):
        delta = y_mean * (1.0 - zeta)
        if delta > 0:
            candidates.append((float(zeta), float(delta)))
    best = max(candidates, key=lambda zd: _log_likelihood(y, zd[0], zd[1]))
    return best


def fit_gpd(excesses: np.ndarray) -> tuple[float, float]:
    """Maximum-likelihood GPD parameters (zeta, delta) for positive excesses.

    Identical excesses degenerate to the exponential fit zeta = 0 with
    delta equal to their mean.
    """
    y = np.asarray(excesses, dtype=float)
    if y.size < _MIN_FIT_PEAKS:
        raise TooFewPeaks(f"need at least {_MIN_FIT_PEAKS} excesses, got {y.size}")
    if np.any(y <= 0):
        raise ValueError("excesses must be strictly positive")
    return _fit_excesses(y)


def _boundary(eta: float, zeta: float, delta: float, q: float, n: int, n_eta: int) -> float:
    if n <= 0 or n_eta <= 0:
        raise InvalidCounts(f"counts must be positive, got n={n}, n_eta={n_eta}")
    ratio = q * n / n_eta
    if ratio <= 0:
        raise InvalidCounts(f"q n / n_eta must be positive, got {ratio}")
    if abs(zeta) < 1e-9:
        return eta + delta * math.log(1.0 / ratio)
    return eta + (delta / zeta) * (ratio ** (-zeta) - 1.0)


def compute_boundary(state: EvtState, config: EvtConfig) -> float:
    """Anomaly boundary above which a value is recorded as anomalous."""
    return _boundary(state.eta, state.zeta, state.delta, config.q, state.n, state.n_eta)


def initialize_state(init_segment: np.ndarray, config: EvtConfig) -> EvtState:
    """Threshold, tail fit, and boundary from the initialization segment.

    With no peaks above the threshold (a flat segment, say) the boundary is
    +inf until the stream supplies peaks to fit.
    """
    seg = np.asarray(init_segment, dtype=float)
    eta = estimate_eta(seg, config)
    peaks = seg[seg > eta] - eta
    if peaks.size:
        zeta, delta = _fit_excesses(peaks)
        boundary = _boundary(eta, zeta, delta, config.q, seg.size, peaks.size)
        boundary = max(boundary, eta)
    else:
        zeta, delta, boundary = 0.0, 1.0, np.inf
    return EvtState(
        eta=eta, zeta=zeta, delta=delta, boundary=boundary, n=int(seg.size), n_eta=int(peaks.size), peaks=peaks
    )


def detect_stream(
    detect_segment: np.ndarray, state: EvtState, config: EvtConfig
) -> tuple[np.ndarray, EvtState]:
    """Walk the detection segment, flagging anomalies and refreshing the tail.

    A value above the current boundary is recorded as anomalous; a value
    between the threshold and the boundary becomes a new peak and triggers a
    refit; anything at or below the threshold only advances the observation
    count.
    """
    seg = np.asarray(detect_segment, dtype=float)
    peaks = list(state.peaks)
    n = state.n
    zeta, delta, boundary = state.zeta, state.delta, state.boundary
    anomalies: list[float] = []
    pending = 0
    for value in seg:
        n += 1
        if value > boundary:
            anomalies.append(float(value))
        elif value > state.eta:
            peaks.append(float(value - state.eta))
            pending += 1
            if pending >= config.refit_every:
                zeta, delta = _fit_excesses(np.asarray(peaks))
                boundary = max(_boundary(state.eta, zeta, delta, config.q, n, len(peaks)), state.eta)
                pending = 0
    new_state = EvtState(
        eta=state.eta,
        zeta=zeta,
        delta=delta,
        boundary=boundary,
        n=n,
        n_eta=len(peaks),
        peaks=np.asarray(peaks),
    )
    return np.asarray(anomalies), new_state


def _one_sided_anomalies(series: np.ndarray, split: int, end: int, config: EvtConfig) -> np.ndarray:
    init, detect = series[:split], series[split:end]
    if detect.size == 0:
        return np.empty(0)
    state = initialize_state(init, config)
    anomalies, _ = detect_stream(detect, state, config)
    return anomalies


def individual_score(
    series: np.ndarray, config: EvtConfig, detect_window: tuple[int, int] | None = None
) -> float:
    """Fluctuation score of one standardized entity series, in [0, 1].

    The series splits into an initialization prefix and a detection window
    (by init_fraction unless an explicit index window is given). Both tails
    are scanned, the series as-is and negated, and pooled anomalies enter as
    absolute standardized magnitudes through the logistic map; the score is
    their mean, or 0 when nothing was anomalous.
    """
    series = np.asarray(series, dtype=float)
    if detect_window is None:
        split = int(series.size * config.init_fraction)
        end = series.size
    else:
        split, end = detect_window
    split = max(int(split), 0)
    end = min(int(end), series.size)
    magnitudes = np.abs(_one_sided_anomalies(series, split, end, config))
    if config.two_sided:
        dips = np.abs(_one_sided_anomalies(-series, split, end, config))
        magnitudes = np.concatenate([magnitudes, dips])
    if magnitudes.size == 0:
        return 0.0
    return float(np.mean(expit(magnitudes)))


def replace_boundary(state: EvtState, boundary: float) -> EvtState:
    """State copy with a recomputed boundary (used by replay-style checks)."""
    return replace(state, boundary=boundary)
