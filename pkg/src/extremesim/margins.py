"""Univariate extreme-value tools.

Generalized Pareto distribution (GPD) evaluation and fitting, the Hill
estimator, threshold diagnostics, and the semi-parametric marginal model:
an interpolated empirical CDF below a threshold ``u`` spliced with a GPD
tail above it.  The marginal model drives the unit Fréchet transform
``T(x) = -1 / log F(x)`` and its inverse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DataError, NumericalError

GAMMA_ZERO_TOL = 1e-9
GAMMA_BOUNDS = (-0.9, 2.0)
GAMMA_GRID_STEP = 0.05
# floor on the tail probability fed to the log; only reached beyond a
# finite upper endpoint (gamma < 0)
TAIL_PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class GPDParams:
    u: float
    sigma: float
    gamma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DataError(f"GPD scale must be > 0, got {self.sigma}")

    @property
    def upper_endpoint(self) -> float:
        if self.gamma < -GAMMA_ZERO_TOL:
            return self.u - self.sigma / self.gamma
        return np.inf


def _gpd_log_sf(params: GPDParams, x):
    """log P(U > x | U > u) without support checks (clipped at the endpoint)."""
    z = (np.asarray(x, dtype=float) - params.u) / params.sigma
    z = np.maximum(z, 0.0)
    g = params.gamma
    if abs(g) < GAMMA_ZERO_TOL:
        return -z
    with np.errstate(divide="ignore", invalid="ignore"):
        gz = np.maximum(g * z, -1.0)
        return np.where(gz > -1.0, -np.log1p(gz) / g, -np.inf)


def gpd_cdf(params: GPDParams, x):
    """Conditional CDF ``P(U <= x | U > u)`` of the GPD."""
    x = np.asarray(x, dtype=float)
    if np.any(x < params.u):
        raise DataError("gpd_cdf: x below the threshold u")
    z = (x - params.u) / params.sigma
    if np.any(1.0 + params.gamma * z < 0.0):
        raise DataError("gpd_cdf: x outside the GPD support")
    out = -np.expm1(_gpd_log_sf(params, x))
    return out if out.ndim else float(out)


def _gpd_quantile_from_sf(params: GPDParams, s):
    """x with GPD survival ``s`` (0 < s <= 1)."""
    s = np.asarray(s, dtype=float)
    g = params.gamma
    log_s = np.log(s)
    if abs(g) < GAMMA_ZERO_TOL:
        return params.u - params.sigma * log_s
    return params.u + params.sigma * np.expm1(-g * log_s) / g


def gpd_quantile(params: GPDParams, q):
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q >= 1)):
        raise DataError("gpd_quantile: q must lie in [0, 1)")
    out = _gpd_quantile_from_sf(params, 1.0 - q)
    return out if out.ndim else float(out)


def gpd_nll(y, sigma: float, gamma: float) -> float:
    """Negative log-likelihood of exceedances ``y`` (already shifted by u)."""
    if sigma <= 0:
        return np.inf
    z = y / sigma
    if abs(gamma) < GAMMA_ZERO_TOL:
        return y.size * np.log(sigma) + z.sum()
    arg = 1.0 + gamma * z
    if np.any(arg <= 0):
        return np.inf
    return y.size * np.log(sigma) + (1.0 + 1.0 / gamma) * np.log(arg).sum()


def _profile_sigma(y, gamma: float) -> tuple[float, float]:
    ymax = y.max()
    ymean = y.mean()
    lo = np.log(ymean) - 12.0
    if gamma < 0:
        lo = max(lo, np.log(-gamma * ymax) + 1e-12)
    hi = np.log(ymean) + 6.0 + max(gamma, 0.0) * 4.0
    res = minimize_scalar(
        lambda ls: gpd_nll(y, np.exp(ls), gamma),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return float(np.exp(res.x)), float(res.fun)


def _fit_gpd_mle(y) -> tuple[float, float]:
    grid = np.arange(GAMMA_BOUNDS[0], GAMMA_BOUNDS[1] + 1e-12, GAMMA_GRID_STEP)
    prof = np.array([_profile_sigma(y, g)[1] for g in grid])
    if not np.any(np.isfinite(prof)):
        raise NumericalError("GPD likelihood is not finite anywhere on the shape grid")
    i = int(np.nanargmin(np.where(np.isfinite(prof), prof, np.nan)))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(
        lambda g: _profile_sigma(y, g)[1],
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-8},
    )
    gamma = float(res.x) if res.fun <= prof[i] else float(grid[i])
    sigma, nll = _profile_sigma(y, gamma)
    if not (np.isfinite(nll) and np.isfinite(sigma) and sigma > 0):
        raise NumericalError("GPD maximum-likelihood optimisation failed")
    return sigma, gamma


def _fit_gpd_moments(y) -> tuple[float, float]:
    m = y.mean()
    v = y.var(ddof=1)
    if v <= 0:
        raise NumericalError("zero-variance exceedances")
    r = m * m / v
    return 0.5 * m * (r + 1.0), 0.5 * (1.0 - r)


def fit_gpd(sample, u: float, method: str = "mle", min_exceedances: int = 30) -> GPDParams:
    """Fit a GPD to the exceedances of ``sample`` above ``u``.

    ``method="mle"`` profiles the likelihood over the shape on
    ``[-0.9, 2]`` (grid, then bounded Brent refinement), with the scale
    maximised numerically for each shape.  ``method="moments"`` matches the
    mean and variance of the exceedances.
    """
    x = np.asarray(sample, dtype=float)
    y = x[x > u] - u
    if y.size < min_exceedances:
        raise DataError(f"only {y.size} exceedances above u={u:.6g}; need {min_exceedances}")
    if method == "mle":
        sigma, gamma = _fit_gpd_mle(y)
    elif method == "moments":
        sigma, gamma = _fit_gpd_moments(y)
    else:
        raise ValueError(f"unknown GPD fitting method {method!r}")
    return GPDParams(float(u), float(sigma), float(gamma))


# -- Hill estimator and gamma-vs-k curves -----------------------------------

def hill_estimator(sample, k: int) -> float:
    """Mean of ``log(X_(i) / X_(k+1))`` over the ``k`` largest values."""
    x = np.sort(np.asarray(sample, dtype=float))[::-1]
    n = x.size
    if not 2 <= k < n:
        raise DataError(f"Hill estimator needs 2 <= k < n, got k={k}, n={n}")
    window = x[: k + 1]
    if window[-1] <= 0:
        raise DataError("Hill estimator: nonpositive order statistics in the window")
    return float(np.mean(np.log(window[:k]) - np.log(window[k])))


def hill_curve(sample, ks) -> np.ndarray:
    """Hill estimates for every k in ``ks`` (vectorised)."""
    x = np.sort(np.asarray(sample, dtype=float))[::-1]
    ks = np.asarray(ks, dtype=int)
    if ks.min() < 2 or ks.max() >= x.size:
        raise DataError("k values must satisfy 2 <= k < n")
    if x[ks.max()] <= 0:
        raise DataError("Hill estimator: nonpositive order statistics in the window")
    logs = np.log(x[: ks.max() + 1])
    csum = np.cumsum(logs)
    return csum[ks - 1] / ks - logs[ks]


def gamma_curves(sample, ks, min_exceedances: int = 30) -> dict:
    """Shape estimates against the number of exceedances ``k``.

    Returns Hill, GPD-MLE and GPD-moments estimates; for the GPD ones the
    threshold is the ``(k+1)``-th largest value.  Entries that cannot be
    computed are NaN.
    """
    x = np.sort(np.asarray(sample, dtype=float))[::-1]
    ks = np.asarray(ks, dtype=int)
    out = {"k": ks, "hill": np.full(ks.size, np.nan),
           "mle": np.full(ks.size, np.nan), "moments": np.full(ks.size, np.nan)}
    pos = x > 0
    for j, k in enumerate(ks):
        if 2 <= k < x.size and pos[k]:
            out["hill"][j] = np.mean(np.log(x[:k]) - np.log(x[k]))
        if k >= min_exceedances and k < x.size:
            y = x[:k] - x[k]
            try:
                out["mle"][j] = _fit_gpd_mle(y)[1]
                out["moments"][j] = _fit_gpd_moments(y)[1]
            except NumericalError:
                pass
    return out


def stability_window(values, ks, min_length: int = 100, max_rel_spread: float = 0.10):
    """Find a run of ``min_length`` consecutive k with small relative spread.

    The relative spread of a window is ``(max - min) / |mean|``.  Among the
    qualifying windows the one with the smallest spread is returned as
    ``(k_start, k_end, mean)``; ``None`` when there is none.
    """
    v = np.asarray(values, dtype=float)
    ks = np.asarray(ks, dtype=int)
    if v.size < min_length:
        return None
    best = None
    for s in range(v.size - min_length + 1):
        w = v[s : s + min_length]
        if not np.all(np.isfinite(w)) or np.any(np.diff(ks[s : s + min_length]) != 1):
            continue
        mean = w.mean()
        if mean == 0:
            continue
        spread = (w.max() - w.min()) / abs(mean)
        if spread < max_rel_spread and (best is None or spread < best[0]):
            best = (spread, int(ks[s]), int(ks[s + min_length - 1]), float(mean))
    return None if best is None else best[1:]


# -- threshold diagnostics ----------------------------------------------------

@dataclass(frozen=True)
class ThresholdDiagnostics:
    thresholds: np.ndarray
    n_exceed: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    sigma_prime: np.ndarray
    gamma_prime: np.ndarray
    mrl: np.ndarray
    dispersion: np.ndarray

    def rows(self):
        for i in range(self.thresholds.size):
            yield {
                "threshold": self.thresholds[i],
                "n_exceed": int(self.n_exceed[i]),
                "sigma_prime": self.sigma_prime[i],
                "gamma_prime": self.gamma_prime[i],
                "mrl": self.mrl[i],
                "dispersion": self.dispersion[i],
            }


def threshold_diagnostics(sample, thresholds=None, lower_q: float = 0.5,
                          upper_q: float = 0.98, n_grid: int = 20, blocks=None,
                          n_blocks: int = 10, min_exceedances: int = 30) -> ThresholdDiagnostics:
    """Parameter stability, mean residual life and dispersion index.

    For each candidate threshold ``w`` the GPD is refitted and reported as
    ``sigma' = sigma_w - gamma_w * w`` and ``gamma' = gamma_w``, which are
    constant in ``w`` above a valid threshold.  ``blocks`` labels each
    observation with its block (e.g. its year); without labels the sample is
    cut into ``n_blocks`` contiguous blocks of equal size.  The dispersion
    index is the variance-to-mean ratio of per-block exceedance counts.
    """
    x = np.asarray(sample, dtype=float)
    if thresholds is None:
        thresholds = np.linspace(np.quantile(x, lower_q), np.quantile(x, upper_q), n_grid)
    w = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(w) <= 0):
        raise DataError("threshold grid must be strictly increasing")
    if blocks is None:
        blocks = np.repeat(np.arange(n_blocks), int(np.ceil(x.size / n_blocks)))[: x.size]
    blocks = np.asarray(blocks)
    if blocks.shape != x.shape:
        raise DataError("blocks must label every observation")
    labels = np.unique(blocks)

    m = w.size
    out = {k: np.full(m, np.nan) for k in ("sigma", "gamma", "mrl", "dispersion")}
    n_exc = np.zeros(m, dtype=int)
    for i, wi in enumerate(w):
        exc = x > wi
        n_exc[i] = exc.sum()
        if n_exc[i] == 0:
            raise DataError(f"no exceedances above threshold {wi:.6g}")
        out["mrl"][i] = np.mean(x[exc] - wi)
        counts = np.array([np.sum(exc[blocks == b]) for b in labels], dtype=float)
        if labels.size > 1 and counts.mean() > 0:
            out["dispersion"][i] = counts.var(ddof=1) / counts.mean()
        if n_exc[i] >= min_exceedances:
            try:
                p = fit_gpd(x, wi, "mle", min_exceedances)
                out["sigma"][i], out["gamma"][i] = p.sigma, p.gamma
            except NumericalError:
                pass
    return ThresholdDiagnostics(
        thresholds=w,
        n_exceed=n_exc,
        sigma=out["sigma"],
        gamma=out["gamma"],
        sigma_prime=out["sigma"] - out["gamma"] * w,
        gamma_prime=out["gamma"],
        mrl=out["mrl"],
        dispersion=out["dispersion"],
    )


# -- empirical CDF and the semi-parametric mixture ----------------------------

class EmpiricalCDF:
    """Piecewise-linear CDF through ``(x_(i), (i - 0.5) / n)``.

    Outside the sample range the CDF is clamped to ``[1/(2n), 1 - 1/(2n)]``
    and the quantile function to ``[x_(1), x_(n)]``.
    """

    def __init__(self, sample):
        x = np.sort(np.asarray(sample, dtype=float))
        if x.size < 2:
            raise DataError("empirical CDF needs at least two points")
        self.x = x
        self.n = x.size
        self.p = (np.arange(1, self.n + 1) - 0.5) / self.n

    def cdf(self, v):
        return np.interp(v, self.x, self.p)

    def quantile(self, q):
        return np.interp(q, self.p, self.x)


@dataclass(frozen=True, eq=False)
class MarginalMixtureModel:
    """Empirical CDF below ``gpd.u``, ``1 - p_u * S_GPD`` above it."""

    sample: np.ndarray
    p_u: float
    gpd: GPDParams

    def __post_init__(self):
        object.__setattr__(self, "sample", np.sort(np.asarray(self.sample, dtype=float)))
        object.__setattr__(self, "_ecdf", EmpiricalCDF(self.sample))

    @property
    def u(self) -> float:
        return self.gpd.u

    @property
    def n(self) -> int:
        return self.sample.size

    def to_dict(self) -> dict:
        return {"sample": self.sample.tolist(), "p_u": self.p_u, "u": self.gpd.u,
                "sigma": self.gpd.sigma, "gamma": self.gpd.gamma}

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalMixtureModel":
        return cls(np.array(d["sample"], dtype=float), float(d["p_u"]),
                   GPDParams(float(d["u"]), float(d["sigma"]), float(d["gamma"])))


def fit_marginal_mixture(sample, p_u: float = 0.1, min_exceedances: int = 30) -> MarginalMixtureModel:
    if not 0 < p_u < 0.5:
        raise DataError(f"p_u must lie in (0, 0.5), got {p_u}")
    ecdf = EmpiricalCDF(sample)
    u = float(ecdf.quantile(1.0 - p_u))
    gpd = fit_gpd(ecdf.x, u, "mle", min_exceedances)
    return MarginalMixtureModel(ecdf.x, p_u, gpd)


def _tail_prob(model: MarginalMixtureModel, x):
    """``1 - F(x)`` evaluated without cancellation in the GPD branch."""
    x = np.asarray(x, dtype=float)
    n = model.n
    lo = np.clip(model._ecdf.cdf(x), 1.0 / (2 * n), 1.0 - 1.0 / (2 * n))
    with np.errstate(divide="ignore", invalid="ignore"):
        hi = model.p_u * np.exp(_gpd_log_sf(model.gpd, np.maximum(x, model.u)))
    return np.where(x < model.u, 1.0 - lo, np.maximum(hi, TAIL_PROB_FLOOR))


def mixture_cdf(model: MarginalMixtureModel, x):
    out = 1.0 - _tail_prob(model, x)
    return out if np.ndim(out) else float(out)


def mixture_quantile(model: MarginalMixtureModel, q):
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise DataError("mixture_quantile: q must lie in (0, 1)")
    out = _quantile_from_tail(model, 1.0 - q, q)
    return out if out.ndim else float(out)


def _quantile_from_tail(model, s, q):
    in_tail = s <= model.p_u
    with np.errstate(divide="ignore", invalid="ignore"):
        hi = _gpd_quantile_from_sf(model.gpd, np.where(in_tail, s / model.p_u, 1.0))
    return np.where(in_tail, np.maximum(hi, model.u), model._ecdf.quantile(q))


def to_frechet(model: MarginalMixtureModel, x):
    """Unit Fréchet transform ``-1 / log F(x)``."""
    s = _tail_prob(model, x)
    out = -1.0 / np.log1p(-s)
    return out if np.ndim(out) else float(out)


def from_frechet(model: MarginalMixtureModel, z):
    """Inverse transform ``F^{-1}(exp(-1/z))`` for ``z > 0``."""
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise DataError("from_frechet requires z > 0")
    s = -np.expm1(-1.0 / z)
    out = _quantile_from_tail(model, s, 1.0 - s)
    return out if out.ndim else float(out)
