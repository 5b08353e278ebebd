"""Cost functional, extreme-set extraction and polar decomposition.

A series ``f`` is written ``f = cost(f) * angle(f)`` with ``cost`` the
discrete L2 norm; the extremes are the series whose cost exceeds ``u_ell``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import FunctionalDataset
from .errors import DataError

MIN_EXTREMES = 20


def cost(series) -> np.ndarray | float:
    """Euclidean norm over the last axis (no time-step weighting)."""
    out = np.linalg.norm(np.asarray(series, dtype=float), axis=-1)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True, eq=False)
class PolarRepresentation:
    u_ell: float
    radii: np.ndarray
    angles: np.ndarray  # (n, T), unit cost
    source_ids: np.ndarray

    @property
    def n(self) -> int:
        return self.radii.size

    def series(self) -> np.ndarray:
        return self.radii[:, None] * self.angles

    def to_dict(self) -> dict:
        return {
            "u_ell": self.u_ell,
            "radii": self.radii.tolist(),
            "angles": self.angles.tolist(),
            "source_ids": self.source_ids.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolarRepresentation":
        return cls(
            float(d["u_ell"]),
            np.array(d["radii"], dtype=float),
            np.array(d["angles"], dtype=float),
            np.array(d["source_ids"], dtype=np.int64),
        )


def _values_and_ids(Z):
    if isinstance(Z, FunctionalDataset):
        return Z.values, Z.index
    values = np.asarray(Z, dtype=float)
    return values, np.arange(values.shape[0])


def cost_quantile_threshold(Z, level: float = 0.95, cost_fn: Callable = cost) -> float:
    """Threshold ``u_ell`` as the empirical ``level``-quantile of the costs."""
    if not 0 < level < 1:
        raise DataError(f"quantile level must lie in (0, 1), got {level}")
    values, _ = _values_and_ids(Z)
    return float(np.quantile(cost_fn(values), level))


def extract_extremes(Z, u_ell: float, cost_fn: Callable = cost,
                     min_extremes: int = MIN_EXTREMES) -> PolarRepresentation:
    """Radius and angle of every series with ``cost > u_ell``."""
    values, ids = _values_and_ids(Z)
    r = np.asarray(cost_fn(values), dtype=float)
    sel = r > u_ell
    if sel.sum() < min_extremes:
        raise DataError(
            f"only {int(sel.sum())} series exceed u_ell={u_ell:.6g}; need {min_extremes}"
        )
    radii = r[sel]
    return PolarRepresentation(float(u_ell), radii, values[sel] / radii[:, None], ids[sel])


@dataclass(frozen=True)
class ConvergenceScan:
    k_grid: np.ndarray
    j_values: np.ndarray
    mean_abs_projection: np.ndarray  # (len(k_grid), len(j_values))

    def rows(self):
        for a, k in enumerate(self.k_grid):
            for b, j in enumerate(self.j_values):
                yield {"k": int(k), "j": int(j),
                       "mean_abs_projection": self.mean_abs_projection[a, b]}


def sine_basis(T: int, j_max: int) -> np.ndarray:
    """Rows ``h_j(t) = sin(2 pi j t / T)`` for ``t = 1..T``, ``j = 1..j_max``."""
    t = np.arange(1, T + 1)
    return np.sin(2.0 * np.pi * np.outer(np.arange(1, j_max + 1), t) / T)


def angular_convergence_scan(Z, j_max: int = 8, k_grid=None,
                             cost_fn: Callable = cost) -> ConvergenceScan:
    """Mean of ``|<angle, h_j>|`` over the top-k series, for each k.

    Stability of these curves over a range of k indicates that the angle
    law has settled; the table is meant for inspection, not automatic
    threshold selection.
    """
    values, _ = _values_and_ids(Z)
    n, T = values.shape
    if j_max < 1:
        raise DataError("j_max must be >= 1")
    if k_grid is None:
        k_grid = np.unique(np.linspace(MIN_EXTREMES, n, 50).astype(int))
    k_grid = np.asarray(k_grid, dtype=int)
    if k_grid.min() < 1 or k_grid.max() > n:
        raise DataError(f"k values must lie in [1, N={n}]")
    r = np.asarray(cost_fn(values), dtype=float)
    order = np.argsort(-r, kind="stable")
    angles = values[order] / r[order, None]
    proj = np.abs(angles @ sine_basis(T, j_max).T)  # (n, j_max)
    csum = np.cumsum(proj, axis=0)
    means = csum[k_grid - 1] / k_grid[:, None]
    return ConvergenceScan(k_grid, np.arange(1, j_max + 1), means)
