"""Checks comparing simulated extreme series with observed ones.

Each check returns a small result object with ``to_dict`` (for the JSON
report) and ``rows`` (tidy records for a CSV).  All resampling is driven by
an explicit seed.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp
from sklearn.ensemble import RandomForestClassifier

from .errors import DataError, NumericalError
from .polar import cost

DEFAULT_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)
DEFAULT_B = 500


def _as_matrix(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError(f"{name} must be a nonempty n x T matrix")
    return x


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _clean(v):
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (np.floating, float)):
        return None if not np.isfinite(v) else float(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


# -- percentile bands -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BandTable:
    levels: np.ndarray
    observed: np.ndarray  # (L, T)
    lower: np.ndarray
    upper: np.ndarray
    simulated: np.ndarray
    inside: np.ndarray

    @property
    def fraction_inside(self) -> float:
        return float(self.inside.mean())

    def to_dict(self) -> dict:
        return _clean({"levels": self.levels, "fraction_inside": self.fraction_inside,
                       "observed": self.observed, "lower": self.lower, "upper": self.upper,
                       "simulated": self.simulated, "inside": self.inside})

    def rows(self):
        L, T = self.observed.shape
        for a in range(L):
            for t in range(T):
                yield {"level": self.levels[a], "t": t + 1, "observed": self.observed[a, t],
                       "lower": self.lower[a, t], "upper": self.upper[a, t],
                       "simulated": self.simulated[a, t], "inside": bool(self.inside[a, t])}


def percentile_bands(observed, simulated, levels=DEFAULT_LEVELS, B: int = DEFAULT_B,
                     conf: float = 0.95, seed=0) -> BandTable:
    """Per time step percentiles with a row-bootstrap band on the observed side."""
    obs = _as_matrix(observed, "observed")
    sim = _as_matrix(simulated, "simulated")
    levels = np.asarray(levels, dtype=float)
    if np.any((levels <= 0) | (levels >= 1)):
        raise DataError("percentile levels must lie in (0, 1)")
    if B < 100:
        raise DataError("at least 100 bootstrap resamples are required")
    if obs.shape[1] != sim.shape[1]:
        raise DataError("observed and simulated series differ in length")
    rng = _rng(seed)
    idx = rng.integers(obs.shape[0], size=(B, obs.shape[0]))
    boot = np.quantile(obs[idx], levels, axis=1)  # (L, B, T)
    a = (1.0 - conf) / 2.0
    lower = np.quantile(boot, a, axis=1)
    upper = np.quantile(boot, 1.0 - a, axis=1)
    obs_q = np.quantile(obs, levels, axis=0)
    sim_q = np.quantile(sim, levels, axis=0)
    inside = (sim_q >= lower) & (sim_q <= upper)
    return BandTable(levels, obs_q, lower, upper, sim_q, inside)


# -- PCA coordinates two-sample KS ------------------------------------------------

@dataclass(frozen=True)
class PCATwoSample:
    statistics: np.ndarray
    pvalues: np.ndarray
    explained: np.ndarray

    def to_dict(self) -> dict:
        return _clean({"statistics": self.statistics, "pvalues": self.pvalues,
                       "explained_ratio": self.explained})

    def rows(self):
        for j, (s, p) in enumerate(zip(self.statistics, self.pvalues), start=1):
            yield {"dimension": j, "ks_statistic": s, "p_value": p}


def pca_two_sample(observed, simulated, n_dims: int = 3) -> PCATwoSample:
    """KS tests on the observations' principal coordinates of the angles.

    Angles ``x / cost(x)`` of both groups are standardised with the mean and
    standard deviation of the observed angles, then projected on the
    observed principal axes.
    """
    obs = _as_matrix(observed, "observed")
    sim = _as_matrix(simulated, "simulated")
    a_obs = obs / np.asarray(cost(obs))[:, None]
    a_sim = sim / np.asarray(cost(sim))[:, None]
    mu, sd = a_obs.mean(axis=0), a_obs.std(axis=0)
    if np.any(sd == 0):
        raise DataError("observed angles have a zero-variance time step")
    z_obs, z_sim = (a_obs - mu) / sd, (a_sim - mu) / sd
    zc = z_obs - z_obs.mean(axis=0)
    vals, vecs = np.linalg.eigh(zc.T @ zc / zc.shape[0])
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0, None), vecs[:, order]
    n_dims = min(n_dims, obs.shape[1])
    if np.any(vals[:n_dims] <= 1e-12 * max(vals.sum(), 1e-300)):
        raise DataError("degenerate principal dimension (zero variance)")
    p_obs = (z_obs - z_obs.mean(axis=0)) @ vecs[:, :n_dims]
    p_sim = (z_sim - z_obs.mean(axis=0)) @ vecs[:, :n_dims]
    stats, pvals = [], []
    for j in range(n_dims):
        r = ks_2samp(p_obs[:, j], p_sim[:, j], method="asymp")
        stats.append(r.statistic)
        pvals.append(r.pvalue)
    return PCATwoSample(np.array(stats), np.array(pvals), np.cumsum(vals)[:n_dims] / vals.sum())


# -- extremogram ------------------------------------------------------------------

def _extremogram_point(x, q, lags):
    u = np.quantile(x, q, axis=0)
    exc = x > u
    counts = exc.sum(axis=0)
    if np.any(counts == 0):
        raise DataError(f"no exceedances of the {q} quantile at time step "
                        f"{int(np.argmax(counts == 0)) + 1}")
    out = np.empty(len(lags))
    for i, h in enumerate(lags):
        joint = (exc[:, : x.shape[1] - h] & exc[:, h:]).sum(axis=0)
        out[i] = np.mean(joint / counts[: x.shape[1] - h])
    return out


@dataclass(frozen=True)
class Extremogram:
    lags: np.ndarray
    values: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def to_dict(self) -> dict:
        return _clean({"lags": self.lags, "values": self.values,
                       "lower": self.lower, "upper": self.upper})

    def rows(self):
        for i, h in enumerate(self.lags):
            yield {"lag": int(h), "value": self.values[i],
                   "lower": None if self.lower is None else self.lower[i],
                   "upper": None if self.upper is None else self.upper[i]}


def extremogram(series, q: float = 0.9, lags=None, B: int = DEFAULT_B, conf: float = 0.95,
                seed=0) -> Extremogram:
    """Average over start times ``s`` of ``P(X^{s+h} > u(s+h) | X^s > u(s))``.

    ``u(s)`` is the empirical ``q``-quantile at time step ``s``.  The band
    comes from resampling whole series; ``B = 0`` skips it.
    """
    x = _as_matrix(series, "series")
    if not 0 < q < 1:
        raise DataError("q must lie in (0, 1)")
    T = x.shape[1]
    lags = np.arange(T) if lags is None else np.asarray(lags, dtype=int)
    if lags.min() < 0 or lags.max() >= T:
        raise DataError(f"lags must lie in [0, {T - 1}]")
    est = _extremogram_point(x, q, lags)
    if B == 0:
        return Extremogram(lags, est)
    rng = _rng(seed)
    boot = np.empty((B, lags.size))
    for b in range(B):
        boot[b] = _extremogram_point(x[rng.integers(x.shape[0], size=x.shape[0])], q, lags)
    a = (1.0 - conf) / 2.0
    return Extremogram(lags, est, np.quantile(boot, a, axis=0), np.quantile(boot, 1 - a, axis=0))


def extremogram_inside(obs: Extremogram, sim: Extremogram, tol: float = 1e-12) -> np.ndarray:
    return (sim.values >= obs.lower - tol) & (sim.values <= obs.upper + tol)


# -- chi measures -----------------------------------------------------------------

@dataclass(frozen=True)
class ChiCurve:
    u: np.ndarray
    chi: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    chibar: np.ndarray
    chibar_lower: np.ndarray
    chibar_upper: np.ndarray

    @property
    def chibar_top(self) -> float:
        return float(self.chibar[-1])

    def to_dict(self) -> dict:
        return _clean({"u": self.u, "chi": self.chi, "lower": self.lower, "upper": self.upper,
                       "chibar": self.chibar, "chibar_lower": self.chibar_lower,
                       "chibar_upper": self.chibar_upper, "chibar_top": self.chibar_top})

    def rows(self):
        for i, u in enumerate(self.u):
            yield {"u": u, "chi": self.chi[i], "lower": self.lower[i], "upper": self.upper[i],
                   "chibar": self.chibar[i], "chibar_lower": self.chibar_lower[i],
                   "chibar_upper": self.chibar_upper[i]}


def _ranks_uniform(x):
    x = np.asarray(x, dtype=float)
    return (np.argsort(np.argsort(x, kind="stable"), kind="stable") + 1.0) / (x.size + 1.0)


def _chi_point(U, V, grid):
    with np.errstate(divide="ignore", invalid="ignore"):
        below = (U[:, None] < grid) & (V[:, None] < grid)
        p_both = below.mean(axis=0)
        p_u = (U[:, None] < grid).mean(axis=0)
        chi = np.where((p_both > 0) & (p_u > 0) & (p_u < 1), 2.0 - np.log(p_both) / np.log(p_u), np.nan)
        above = (U[:, None] > grid) & (V[:, None] > grid)
        pa_both = above.mean(axis=0)
        pa_u = (U[:, None] > grid).mean(axis=0)
        chibar = np.where((pa_both > 0) & (pa_both < 1) & (pa_u > 0),
                          2.0 * np.log(pa_u) / np.log(pa_both) - 1.0, np.nan)
    return chi, chibar


def chi_measures(x, y, u_grid=None, B: int = DEFAULT_B, conf: float = 0.95, seed=0) -> ChiCurve:
    """``chi(u) = 2 - log P(U<u, V<u) / log P(U<u)`` and ``chibar(u)``.

    Inputs are rank-transformed to uniforms first.  Grid points with no
    joint exceedance are returned as NaN (undefined, not zero).
    """
    U, V = _ranks_uniform(x), _ranks_uniform(y)
    if U.size != V.size or U.size < 2:
        raise DataError("chi measures need two samples of equal length >= 2")
    grid = np.linspace(0.5, 0.99, 50) if u_grid is None else np.asarray(u_grid, dtype=float)
    if np.any((grid <= 0) | (grid >= 1)) or np.any(np.diff(grid) <= 0):
        raise DataError("u grid must be increasing inside (0, 1)")
    chi, chibar = _chi_point(U, V, grid)
    rng = _rng(seed)
    bc = np.empty((B, grid.size))
    bb = np.empty((B, grid.size))
    n = U.size
    for b in range(B):
        i = rng.integers(n, size=n)
        bc[b], bb[b] = _chi_point(U[i], V[i], grid)
    a = (1.0 - conf) / 2.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lo, hi = np.nanquantile(bc, a, axis=0), np.nanquantile(bc, 1 - a, axis=0)
        blo, bhi = np.nanquantile(bb, a, axis=0), np.nanquantile(bb, 1 - a, axis=0)
    return ChiCurve(grid, chi, lo, hi, chibar, blo, bhi)


# -- return levels ----------------------------------------------------------------

def return_period(p, npy: float):
    """``1 / (npy * (1 - p))``."""
    if not npy > 0:
        raise DataError("npy must be > 0")
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        out = 1.0 / (npy * (1.0 - p))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ReturnLevels:
    t: int
    threshold: float
    p_c_given_b: float
    levels: np.ndarray
    period: np.ndarray  # model (simulation-based) return period at each level
    period_empirical: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    decomposition: str = "P(C|B)_obs * P(A|B,C)_sim + P(A,notC|B)_obs"

    @property
    def inside(self) -> np.ndarray:
        ok = np.isfinite(self.lower) & np.isfinite(self.upper)
        return ~ok | ((self.period >= self.lower) & (self.period <= self.upper))

    def to_dict(self) -> dict:
        return _clean({"t": self.t, "threshold": self.threshold, "p_c_given_b": self.p_c_given_b,
                       "levels": self.levels, "period": self.period,
                       "period_empirical": self.period_empirical, "lower": self.lower,
                       "upper": self.upper, "fraction_inside": float(self.inside.mean()),
                       "decomposition": self.decomposition})

    def rows(self):
        for i, x in enumerate(self.levels):
            yield {"t": self.t, "level": x, "return_period": self.period[i],
                   "empirical_period": self.period_empirical[i],
                   "lower": self.lower[i], "upper": self.upper[i]}


def _ecdf_at(sample, x):
    sample = np.sort(sample)
    return np.searchsorted(sample, x, side="right") / max(sample.size, 1)


def return_levels(x_obs, c_obs, x_sim, npy: float, threshold: float, t: int = 0,
                  n_levels: int = 50, B: int = DEFAULT_B, conf: float = 0.95,
                  seed=0) -> ReturnLevels:
    """Return periods of levels of one time step, split on the extreme event C.

    ``x_obs`` are the observed values at the time step, ``c_obs`` flags the
    cycles whose transformed residual is extreme, ``x_sim`` the simulated
    values.  ``B`` is ``x > threshold``.  The C part combines the observed
    ``P(C|B)`` with the simulated ``P(A|B,C)``; the non-C part stays
    empirical.  The band is a bootstrap of the purely empirical ``P(A|B)``.
    """
    x_obs = np.asarray(x_obs, dtype=float)
    c_obs = np.asarray(c_obs, dtype=bool)
    x_sim = np.asarray(x_sim, dtype=float)
    if x_obs.shape != c_obs.shape:
        raise DataError("x_obs and c_obs differ in length")
    in_b = x_obs > threshold
    if not in_b.any():
        raise DataError("no observation exceeds the return-level threshold")
    sim_b = x_sim[x_sim > threshold]
    if sim_b.size == 0:
        raise DataError("no simulated value exceeds the return-level threshold")
    xb, cb = x_obs[in_b], c_obs[in_b]
    p_c = float(cb.mean())
    levels = np.unique(np.quantile(np.concatenate([xb, sim_b]), np.linspace(0.0, 0.999, n_levels)))

    def model_p(xb_, cb_):
        return cb_.mean() * _ecdf_at(sim_b, levels) + np.mean(
            (xb_[:, None] <= levels) & ~cb_[:, None], axis=0)

    p_model = model_p(xb, cb)
    p_emp = _ecdf_at(xb, levels)
    rng = _rng(seed)
    boot = np.empty((B, levels.size))
    n = x_obs.size
    for b in range(B):
        i = rng.integers(n, size=n)
        sel = x_obs[i] > threshold
        boot[b] = _ecdf_at(x_obs[i][sel], levels) if sel.any() else np.nan
    a = (1.0 - conf) / 2.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        p_lo, p_hi = np.nanquantile(boot, a, axis=0), np.nanquantile(boot, 1 - a, axis=0)
    return ReturnLevels(t, float(threshold), p_c, levels, return_period(p_model, npy),
                        return_period(p_emp, npy), return_period(p_lo, npy),
                        return_period(p_hi, npy))


# -- classification two-sample test -----------------------------------------------

FEATURES = ("raw", "cost", "angle")
CLASSIFIERS = ("logistic", "random_forest")


def features_of(x, kind: str) -> np.ndarray:
    x = _as_matrix(x, "series")
    if kind == "raw":
        return x
    r = np.asarray(cost(x), dtype=float)
    if kind == "cost":
        return r[:, None]
    if kind == "angle":
        if np.any(r <= 0):
            raise DataError("angle features need series of positive cost")
        return x / r[:, None]
    raise DataError(f"unknown feature set {kind!r}; choose from {FEATURES}")


def fit_logistic(X, y, ridge: float = 1e-6, max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
    """IRLS for logistic regression with intercept; ridge on all weights."""
    A = np.column_stack([np.ones(X.shape[0]), X])
    w = np.zeros(A.shape[1])
    eye = ridge * np.eye(A.shape[1])
    for _ in range(max_iter):
        eta = np.clip(A @ w, -30, 30)
        mu = 1.0 / (1.0 + np.exp(-eta))
        s = mu * (1 - mu)
        grad = A.T @ (y - mu) - ridge * w
        H = (A * s[:, None]).T @ A + eye
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"logistic IRLS: singular Hessian ({exc})") from exc
        w = w + step
        if np.max(np.abs(step)) < tol:
            break
    return w


def predict_logistic(w, X) -> np.ndarray:
    return (w[0] + X @ w[1:] > 0).astype(int)


def _stratified_split(y, test_frac, rng):
    test = np.zeros(y.size, dtype=bool)
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        k = int(round(test_frac * idx.size))
        test[rng.permutation(idx)[:k]] = True
    return ~test, test


@dataclass(frozen=True)
class ClassificationResult:
    features: str
    classifier: str
    accuracies: np.ndarray
    ci: tuple[float, float]

    @property
    def contains_half(self) -> bool:
        return self.ci[0] <= 0.5 <= self.ci[1]

    @property
    def above_half(self) -> bool:
        return self.ci[0] > 0.5

    def to_dict(self) -> dict:
        return _clean({"features": self.features, "classifier": self.classifier,
                       "mean_accuracy": float(self.accuracies.mean()), "ci_low": self.ci[0],
                       "ci_high": self.ci[1], "contains_half": self.contains_half,
                       "reps": int(self.accuracies.size)})

    def rows(self):
        for i, a in enumerate(self.accuracies):
            yield {"features": self.features, "classifier": self.classifier, "rep": i, "accuracy": a}


def classification_test(observed, simulated_pool, features: str = "raw",
                        classifier: str = "logistic", reps: int = 100, test_frac: float = 0.3,
                        ci: float = 0.90, seed=0, n_trees: int = 500) -> ClassificationResult:
    """Accuracy of a classifier separating observations from simulations.

    Each repetition draws as many simulations as observations without
    replacement, splits both classes 70/30 and scores on the held-out part.
    Accuracies near 0.5 mean the groups cannot be told apart.
    """
    if classifier not in CLASSIFIERS:
        raise DataError(f"unknown classifier {classifier!r}; choose from {CLASSIFIERS}")
    f_obs = features_of(observed, features)
    f_sim = features_of(simulated_pool, features)
    n = f_obs.shape[0]
    if f_sim.shape[0] < n:
        raise DataError(f"simulated pool ({f_sim.shape[0]}) smaller than the observations ({n})")
    if n < 4:
        raise DataError("too few observations for a train/test split")
    ss = np.random.SeedSequence(seed if isinstance(seed, int) else 0)
    acc = np.empty(reps)
    for r, child in enumerate(ss.spawn(reps)):
        rng = np.random.default_rng(child)
        X = np.vstack([f_obs, f_sim[rng.choice(f_sim.shape[0], size=n, replace=False)]])
        y = np.r_[np.zeros(n, dtype=int), np.ones(n, dtype=int)]
        train, test = _stratified_split(y, test_frac, rng)
        if len(np.unique(y[train])) < 2 or len(np.unique(y[test])) < 2:
            raise DataError("class imbalance after split")
        if classifier == "logistic":
            mu, sd = X[train].mean(axis=0), X[train].std(axis=0)
            sd = np.where(sd > 0, sd, 1.0)
            Z = (X - mu) / sd
            pred = predict_logistic(fit_logistic(Z[train], y[train]), Z[test])
        else:
            rf = RandomForestClassifier(n_estimators=n_trees, max_features="sqrt",
                                        random_state=int(rng.integers(2**31 - 1)), n_jobs=1)
            pred = rf.fit(X[train], y[train]).predict(X[test])
        acc[r] = np.mean(pred == y[test])
    a = (1.0 - ci) / 2.0
    return ClassificationResult(features, classifier, acc,
                                (float(np.quantile(acc, a)), float(np.quantile(acc, 1 - a))))


# -- cost distribution ------------------------------------------------------------

@dataclass(frozen=True)
class CostComparison:
    edges: np.ndarray
    density_observed: np.ndarray
    density_simulated: np.ndarray
    max_observed: float
    max_simulated: float

    @property
    def extrapolates(self) -> bool:
        return self.max_simulated > self.max_observed

    def to_dict(self) -> dict:
        return _clean({"max_observed": self.max_observed, "max_simulated": self.max_simulated,
                       "simulated_exceeds_observed_max": self.extrapolates,
                       "edges": self.edges, "density_observed": self.density_observed,
                       "density_simulated": self.density_simulated})

    def rows(self):
        for i in range(self.density_observed.size):
            yield {"bin_low": self.edges[i], "bin_high": self.edges[i + 1],
                   "density_observed": self.density_observed[i],
                   "density_simulated": self.density_simulated[i]}


def cost_distribution_compare(observed, simulated, bins: int = 30) -> CostComparison:
    r_obs = np.asarray(cost(_as_matrix(observed, "observed")), dtype=float)
    r_sim = np.asarray(cost(_as_matrix(simulated, "simulated")), dtype=float)
    lo, hi = min(r_obs.min(), r_sim.min()), max(r_obs.max(), r_sim.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    d_obs = np.histogram(r_obs, edges, density=True)[0]
    d_sim = np.histogram(r_sim, edges, density=True)[0]
    return CostComparison(edges, d_obs, d_sim, float(r_obs.max()), float(r_sim.max()))


# -- report -----------------------------------------------------------------------

@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)

    def add(self, name: str, result, passed: bool | None = None, hard: bool = False):
        if name in self.checks:
            raise DataError(f"check {name!r} already present")
        self.checks[name] = {"result": result, "passed": passed, "hard": hard}

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values() if c["hard"])

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": {k: {"passed": c["passed"], "hard": c["hard"], **c["result"].to_dict()}
                       for k, c in self.checks.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def csv_tables(self) -> dict:
        """Check name -> CSV text of its tidy rows."""
        out = {}
        for name, c in self.checks.items():
            rows = [_clean(r) for r in c["result"].rows()]
            if not rows:
                continue
            buf = io.StringIO()
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
            out[name] = buf.getvalue()
        return out
