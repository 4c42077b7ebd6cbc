"""Per-entity standardization and lagged design matrices for the VAR view."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LagTooLarge, TooShort
from .model import MetricPanel


@dataclass(frozen=True, eq=False)
class LagTensor:
    """Targets X (m x d) and stacked lags [X_1 | ... | X_p] (m x p*d).

    Row r corresponds to time t = p + r; lag block j holds the series
    shifted by j + 1 steps, so m = T + 1 - p.
    """

    targets: np.ndarray
    lagged: np.ndarray
    p: int
    m: int

    def __post_init__(self):
        d = self.targets.shape[1]
        if self.targets.shape != (self.m, d) or self.lagged.shape != (self.m, self.p * d):
            raise LagTooLarge(
                f"inconsistent lag tensor: targets {self.targets.shape}, lagged {self.lagged.shape}"
            )

    @property
    def d(self) -> int:
        return self.targets.shape[1]

    def node_blocks(self) -> np.ndarray:
        """(m, d, p) view: per node, lag-1 first."""
        return self.lagged.reshape(self.m, self.p, self.d).transpose(0, 2, 1)


def standardize_values(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-wise zero-mean unit-variance rescale (population stdev).

    Constant columns map to all zeros with a recorded stdev of 1, so the
    transform is total and invertible in intent.
    """
    values = np.asarray(values, dtype=float)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    if values.shape[0] < 2:
        raise TooShort("standardization needs at least 2 time points")
    means = values.mean(axis=0)
    stds = values.std(axis=0)
    stds = np.where(stds < 1e-12, 1.0, stds)
    out = (values - means) / stds
    if squeeze:
        return out[:, 0], means, stds
    return out, means, stds


def standardize(panel: MetricPanel) -> tuple[MetricPanel, np.ndarray, np.ndarray]:
    """Standardized copy of a panel plus the per-entity (mean, stdev) used."""
    out, means, stds = standardize_values(panel.values)
    return MetricPanel(panel.metric_name, panel.entity_ids, panel.timestamps, out), means, stds


def lag_matrix(values: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw (targets, lagged) arrays for a (T+1, d) series at lag order p."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if p < 1:
        raise LagTooLarge(f"lag order must be at least 1, got {p}")
    n_times = values.shape[0]
    m = n_times - p
    if m < 1:
        raise LagTooLarge(f"lag order {p} leaves no samples out of {n_times} points")
    targets = values[p:]
    blocks = [values[p - j : n_times - j] for j in range(1, p + 1)]
    return targets, np.concatenate(blocks, axis=1)


def build_lag_embedding(panel: MetricPanel, p: int) -> LagTensor:
    """Lag tensor of a panel: row r targets time p + r, lags ordered newest first."""
    targets, lagged = lag_matrix(panel.values, p)
    return LagTensor(targets=targets, lagged=lagged, p=p, m=targets.shape[0])
