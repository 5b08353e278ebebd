"""Synthetic cycle data with a known extremal structure.

Shocks are built from a Pareto process ``Z = R * W`` (Pareto radius, smooth
positive random profile ``W``) mapped to a light-tailed scale by
``eps = sigma * log Z``.  Their size can depend on the previous cycle, which
makes the predecessor informative among extremes.  Cycles then follow a
per time step AR(1) with a linear trend in the cycle index.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from datetime import datetime, timedelta

import numpy as np

from .dataset import FunctionalDataset
from .errors import DataError
from .pipeline import FittedModels, InitialHistory
from .polar import cost
from .whitening import invert_ar

CYCLE_LENGTH = timedelta(hours=12, minutes=25)


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 5000
    T: int = 37
    sigma: float = 0.1
    profile_sd: tuple = (0.25, 0.2, 0.15, 0.1, 0.07, 0.05, 0.035, 0.025)
    nugget: float = 0.005  # independent per time step log-profile noise
    ar_coef: float = 0.6
    intercept: float = 0.2
    slope: float = 2e-5
    coupling: float = 0.0  # > 0: shocks grow with the previous cycle's level
    coupling_bounds: tuple = (0.25, 4.0)
    burn_in: int = 200
    start: str = "2000-01-01T00:00:00"

    def to_dict(self) -> dict:
        return asdict(self)


def profile_basis(T: int, k: int) -> np.ndarray:
    """Smooth basis rows: constant, then cosines of increasing frequency."""
    s = (np.arange(T) + 0.5) / T
    rows = [np.ones(T)] + [np.cos(np.pi * j * s) for j in range(1, k)]
    return np.array(rows)


def pareto_process(n: int, T: int, profile_sd, rng: np.random.Generator,
                   nugget: float = 0.0) -> np.ndarray:
    """``R * W`` with ``R`` standard Pareto and ``log W`` a random curve.

    ``log W`` is a random combination of :func:`profile_basis` rows plus
    independent noise of standard deviation ``nugget`` at each time step.
    """
    basis = profile_basis(T, len(profile_sd))
    xi = rng.standard_normal((n, len(profile_sd))) * np.asarray(profile_sd)
    W = np.exp(xi @ basis + nugget * rng.standard_normal((n, T)))
    R = 1.0 / (1.0 - rng.uniform(size=n))
    return R[:, None] * W


def generate(config: SyntheticConfig | None = None, seed: int = 0,
             timestamps: bool = True) -> FunctionalDataset:
    """Draw ``config.n`` cycles; indices run ``1..n``."""
    c = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    total = c.n + c.burn_in
    Z = pareto_process(total, c.T, c.profile_sd, rng, c.nugget)
    base = c.sigma * np.log(Z)
    x = np.empty((total, c.T))
    prev = np.full(c.T, c.intercept / (1.0 - c.ar_coef))
    centre = prev.mean() + c.sigma / (1.0 - c.ar_coef)
    lo, hi = np.log(c.coupling_bounds)
    for m in range(total):
        scale = np.exp(np.clip(c.coupling * (prev.mean() - centre) / c.sigma, lo, hi))
        prev = c.intercept + c.ar_coef * prev + scale * base[m]
        x[m] = prev
    x = x[c.burn_in:]
    idx = np.arange(1, c.n + 1)
    x = x + np.outer(idx, np.full(c.T, c.slope))
    stamps = None
    if timestamps:
        t0 = datetime.fromisoformat(c.start)
        stamps = tuple((t0 + int(i) * CYCLE_LENGTH).isoformat() for i in idx)
    return FunctionalDataset(x, idx, stamps)


def couple_predecessors(models: FittedModels, extreme_eps, strength: float = 0.5):
    """Replace the predecessors of the extremes by level-shifted copies.

    The level of each predecessor is moved so that ``beta * level`` falls by
    ``strength`` times the per time step excess of the shock size
    ``cost(eps) / sqrt(T)`` over its mean.  This gives a near-perfect
    negative rank dependence between the predecessor and shock costs while
    keeping the predecessor shapes.  Returns the modified models and the
    extreme cycles implied by the AR recursion.
    """
    eps = np.asarray(extreme_eps, dtype=float)
    h = models.history
    if eps.shape[0] != h.n:
        raise DataError("one residual per extreme is needed")
    size = np.asarray(cost(eps), dtype=float) / np.sqrt(eps.shape[1])
    beta = models.ar.beta.sum(axis=1).mean()
    level = h.series[:, 0].mean() - strength * (size - size.mean()) / beta
    series = h.series - h.series.mean(axis=2, keepdims=True) + level[:, None, None]
    history = InitialHistory(h.ell_eps, np.asarray(cost(series[:, 0]), dtype=float),
                             series, h.pred_index)
    return replace(models, history=history), invert_ar(models.ar, eps, series)
