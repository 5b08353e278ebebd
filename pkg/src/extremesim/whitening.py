"""Per time step autoregressive whitening across cycles.

For every time step ``t`` the detrended, delta-spaced values are regressed on
their own ``p`` previous cycles (lags counted in positions of the spaced
list, so lag 1 is ``delta`` cycles).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import FunctionalDataset
from .errors import DataError, NumericalError


@dataclass(frozen=True)
class ARModel:
    order: int
    delta: int
    beta0: np.ndarray
    beta: np.ndarray  # shape (T, order)
    residual_index_offset: int = 0

    def __post_init__(self):
        beta0 = np.asarray(self.beta0, dtype=float)
        beta = np.asarray(self.beta, dtype=float).reshape(beta0.size, -1)
        if beta.shape != (beta0.size, self.order):
            raise DataError(f"beta must have shape (T, {self.order}), got {beta.shape}")
        if not (np.all(np.isfinite(beta0)) and np.all(np.isfinite(beta))):
            raise NumericalError("AR coefficients are not finite")
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "beta", beta)

    @property
    def T(self) -> int:
        return self.beta0.size

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "delta": self.delta,
            "beta0": self.beta0.tolist(),
            "beta": self.beta.tolist(),
            "residual_index_offset": self.residual_index_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ARModel":
        return cls(
            order=int(d["order"]),
            delta=int(d["delta"]),
            beta0=np.array(d["beta0"], dtype=float),
            beta=np.array(d["beta"], dtype=float),
            residual_index_offset=int(d.get("residual_index_offset", 0)),
        )


@dataclass(frozen=True)
class ResidualSet:
    """Residuals ``eps_M`` for the cycles that have ``p`` predecessors.

    ``lagged[k, i]`` is the detrended series ``i + 1`` steps before residual
    ``k``, i.e. the regressors that produced it.
    """

    residuals: FunctionalDataset
    lagged: np.ndarray
    lagged_index: np.ndarray


def fit_ar(ds: FunctionalDataset, p: int) -> tuple[ARModel, ResidualSet]:
    """Least-squares AR(``p``) fit at every time step."""
    if p < 1:
        raise DataError("AR order must be >= 1")
    n, T = ds.values.shape
    if n <= p + 1:
        raise DataError(f"need more than p + 1 = {p + 1} series, got {n}")
    x = ds.values
    y = x[p:]
    lags = np.stack([x[p - i : n - i] for i in range(1, p + 1)], axis=1)  # (n-p, p, T)

    beta0 = np.empty(T)
    beta = np.empty((T, p))
    resid = np.empty_like(y)
    ones = np.ones(n - p)
    for t in range(T):
        design = np.column_stack([ones, lags[:, :, t]])
        coef, _, rank, _ = np.linalg.lstsq(design, y[:, t], rcond=None)
        if rank < p + 1:
            raise NumericalError(f"singular AR design at time step {t + 1} (constant series?)")
        beta0[t] = coef[0]
        beta[t] = coef[1:]
        resid[:, t] = y[:, t] - design @ coef

    model = ARModel(p, ds.delta, beta0, beta, residual_index_offset=int(ds.index[p]))
    lagged_index = np.stack([ds.index[p - i : n - i] for i in range(1, p + 1)], axis=1)
    residuals = ds.take(np.arange(p, n)).with_values(resid)
    return model, ResidualSet(residuals, lags, lagged_index)


def invert_ar(model: ARModel, eps_sim, init) -> np.ndarray:
    """Rebuild a detrended series from a residual and its ``p`` predecessors.

    ``init[i]`` is the series ``i + 1`` spaced steps back.  Batched inputs
    are accepted: ``eps_sim`` of shape ``(n, T)`` with ``init`` of shape
    ``(n, p, T)``.
    """
    eps = np.asarray(eps_sim, dtype=float)
    init = np.asarray(init, dtype=float)
    T, p = model.T, model.order
    if eps.shape[-1] != T:
        raise DataError(f"eps_sim has length {eps.shape[-1]}, model has T={T}")
    if init.shape[-2:] != (p, T):
        raise DataError(f"init must hold {p} series of length {T}, got shape {init.shape}")
    # beta.T has shape (p, T); sum over the lag axis
    return model.beta0 + np.sum(model.beta.T * init, axis=-2) + eps


def acf_pacf(series, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample ACF (lags 0..max_lag) and PACF by Durbin-Levinson."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n <= max_lag + 1:
        raise DataError(f"series length {n} must exceed max_lag + 1 = {max_lag + 1}")
    xc = x - x.mean()
    denom = xc @ xc
    if denom <= 0.0:
        raise NumericalError("zero-variance series")
    acf = np.array([xc[: n - h] @ xc[h:] for h in range(max_lag + 1)]) / denom

    pacf = np.zeros(max_lag + 1)
    pacf[0] = 1.0
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, max_lag + 1):
        a = (acf[k] - phi @ acf[k - 1 : 0 : -1]) / v if k > 1 else acf[1]
        phi = np.append(phi - a * phi[::-1], a)
        v *= 1.0 - a * a
        pacf[k] = a
    return acf, pacf
