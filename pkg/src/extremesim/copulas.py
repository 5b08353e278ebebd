"""Bivariate copula families with h-functions, inverses and MLE.

Conventions: ``hfunc2(u, v) = P(U <= u | V = v)`` and
``hfunc1(u, v) = P(V <= v | U = u)``.  Clayton and Gumbel come in four
rotations; a rotation of 90 means ``(1 - U, V)`` follows the base copula,
270 means ``(U, 1 - V)`` does, 180 is the survival copula.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, ndtr, ndtri, stdtr, stdtrit
from scipy.stats import kendalltau

from .errors import DataError, NumericalError

EPS = 1e-10
FAMILIES = ("independence", "gaussian", "student_t", "clayton", "gumbel", "frank")
ROTATABLE = ("clayton", "gumbel")
T_DF_GRID = np.arange(2.0, 30.0 + 1e-9, 0.5)
T_DF_BOUNDS = (2.0, 30.0)


def _clip(u):
    return np.clip(np.asarray(u, dtype=float), EPS, 1.0 - EPS)


def _bisect_inverse(h, w, lo=-40.0, hi=40.0, iters=80):
    """Solve ``h(u) = w`` for u, with h increasing, by bisection on logit(u)."""
    w = np.asarray(w, dtype=float)
    a = np.full(w.shape, lo)
    b = np.full(w.shape, hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        up = h(1.0 / (1.0 + np.exp(-mid))) < w
        a = np.where(up, mid, a)
        b = np.where(up, b, mid)
    return 1.0 / (1.0 + np.exp(-0.5 * (a + b)))


# -- base families (rotation 0, exchangeable) ---------------------------------
# each provides logpdf(u, v, p1, p2), h(u, v, p1, p2) = dC/dv and
# hinv(w, v, p1, p2) solving h(., v) = w.

class _Independence:
    n_par = 0

    def logpdf(self, u, v, p1, p2):
        return np.zeros(np.broadcast(u, v).shape)

    def h(self, u, v, p1, p2):
        return np.broadcast_to(u, np.broadcast(u, v).shape).astype(float)

    def hinv(self, w, v, p1, p2):
        return np.broadcast_to(w, np.broadcast(w, v).shape).astype(float)

    def tau(self, p1, p2):
        return 0.0

    def tails(self, p1, p2):
        return 0.0, 0.0


class _Gaussian:
    n_par = 1
    bounds = (-0.999, 0.999)

    def logpdf(self, u, v, rho, p2):
        x, y = ndtri(u), ndtri(v)
        r2 = 1.0 - rho * rho
        return -0.5 * np.log(r2) - (rho * rho * (x * x + y * y) - 2 * rho * x * y) / (2 * r2)

    def h(self, u, v, rho, p2):
        return ndtr((ndtri(u) - rho * ndtri(v)) / np.sqrt(1.0 - rho * rho))

    def hinv(self, w, v, rho, p2):
        return ndtr(ndtri(w) * np.sqrt(1.0 - rho * rho) + rho * ndtri(v))

    def tau(self, rho, p2):
        return 2.0 / np.pi * np.arcsin(rho)

    def tails(self, rho, p2):
        return 0.0, 0.0


class _StudentT:
    n_par = 2
    bounds = (-0.999, 0.999)

    def logpdf(self, u, v, rho, nu):
        x, y = stdtrit(nu, u), stdtrit(nu, v)
        r2 = 1.0 - rho * rho
        const = gammaln((nu + 2) / 2) + gammaln(nu / 2) - 2 * gammaln((nu + 1) / 2) - 0.5 * np.log(r2)
        q = (x * x + y * y - 2 * rho * x * y) / (nu * r2)
        return const - (nu + 2) / 2 * np.log1p(q) + (nu + 1) / 2 * (np.log1p(x * x / nu) + np.log1p(y * y / nu))

    def _scale(self, y, rho, nu):
        return np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1))

    def h(self, u, v, rho, nu):
        x, y = stdtrit(nu, u), stdtrit(nu, v)
        return stdtr(nu + 1, (x - rho * y) / self._scale(y, rho, nu))

    def hinv(self, w, v, rho, nu):
        y = stdtrit(nu, v)
        return stdtr(nu, stdtrit(nu + 1, w) * self._scale(y, rho, nu) + rho * y)

    def tau(self, rho, nu):
        return 2.0 / np.pi * np.arcsin(rho)

    def tails(self, rho, nu):
        lam = 2.0 * stdtr(nu + 1, -np.sqrt((nu + 1) * (1 - rho) / (1 + rho)))
        return float(lam), float(lam)


class _Clayton:
    n_par = 1
    bounds = (1e-4, 28.0)

    def _s(self, u, v, th):
        return np.power(u, -th) + np.power(v, -th) - 1.0

    def logpdf(self, u, v, th, p2):
        return (np.log1p(th) - (1 + th) * (np.log(u) + np.log(v))
                - (1.0 / th + 2.0) * np.log(self._s(u, v, th)))

    def h(self, u, v, th, p2):
        return np.exp((-th - 1) * np.log(v) + (-1.0 / th - 1.0) * np.log(self._s(u, v, th)))

    def hinv(self, w, v, th, p2):
        inner = np.power(w * np.power(v, th + 1), -th / (th + 1)) + 1.0 - np.power(v, -th)
        return np.power(inner, -1.0 / th)

    def tau(self, th, p2):
        return th / (th + 2.0)

    def tails(self, th, p2):
        return 0.0, float(2.0 ** (-1.0 / th))


class _Gumbel:
    n_par = 1
    bounds = (1.0, 17.0)

    def logpdf(self, u, v, th, p2):
        x, y = -np.log(u), -np.log(v)
        A = np.power(x, th) + np.power(y, th)
        m = np.power(A, 1.0 / th)
        return (-m + (th - 1) * (np.log(x) + np.log(y)) + x + y
                + (2.0 / th - 2.0) * np.log(A) + np.log1p((th - 1) / m))

    def h(self, u, v, th, p2):
        x, y = -np.log(u), -np.log(v)
        A = np.power(x, th) + np.power(y, th)
        return np.exp(-np.power(A, 1.0 / th) + (1.0 / th - 1.0) * np.log(A) + (th - 1) * np.log(y) + y)

    def hinv(self, w, v, th, p2):
        return _bisect_inverse(lambda u: self.h(u, v, th, p2), w)

    def tau(self, th, p2):
        return 1.0 - 1.0 / th

    def tails(self, th, p2):
        return float(2.0 - 2.0 ** (1.0 / th)), 0.0


class _Frank:
    n_par = 1
    bounds = (-35.0, 35.0)

    def logpdf(self, u, v, th, p2):
        d = -np.expm1(-th) - np.expm1(-th * u) * np.expm1(-th * v)
        return np.log(th * -np.expm1(-th)) - th * (u + v) - 2.0 * np.log(np.abs(d))

    def h(self, u, v, th, p2):
        a, b = np.expm1(-th * u), np.expm1(-th * v)
        return (b + 1.0) * a / (np.expm1(-th) + a * b)

    def hinv(self, w, v, th, p2):
        b = np.expm1(-th * v)
        a = w * np.expm1(-th) / (1.0 + b * (1.0 - w))
        return -np.log1p(a) / th

    def tau(self, th, p2):
        debye = integrate.quad(lambda t: t / np.expm1(t) if t != 0 else 1.0, 0.0, th)[0] / th
        return 1.0 - 4.0 / th * (1.0 - debye)

    def tails(self, th, p2):
        return 0.0, 0.0


_BASE = {
    "independence": _Independence(),
    "gaussian": _Gaussian(),
    "student_t": _StudentT(),
    "clayton": _Clayton(),
    "gumbel": _Gumbel(),
    "frank": _Frank(),
}


def n_params(family: str) -> int:
    return _BASE[family].n_par


# -- rotated copula -------------------------------------------------------------

@dataclass(frozen=True)
class BivariateCopula:
    family: str = "independence"
    par: float = 0.0
    par2: float = 0.0
    rotation: int = 0

    def __post_init__(self):
        if self.family not in _BASE:
            raise DataError(f"unknown copula family {self.family!r}")
        if self.rotation not in (0, 90, 180, 270):
            raise DataError(f"rotation must be 0, 90, 180 or 270, got {self.rotation}")
        if self.rotation and self.family not in ROTATABLE:
            raise DataError(f"{self.family} copula does not take a rotation")
        base = _BASE[self.family]
        if base.n_par >= 1:
            lo, hi = base.bounds
            if not lo <= self.par <= hi or (self.family == "frank" and self.par == 0):
                raise DataError(f"{self.family} parameter {self.par} outside [{lo}, {hi}]")
        if self.family == "student_t" and not T_DF_BOUNDS[0] <= self.par2 <= T_DF_BOUNDS[1]:
            raise DataError(f"student_t degrees of freedom {self.par2} outside {T_DF_BOUNDS}")

    @property
    def _base(self):
        return _BASE[self.family]

    @property
    def n_par(self) -> int:
        return self._base.n_par

    def _args(self):
        return self.par, self.par2

    def logpdf(self, u, v):
        u, v = _clip(u), _clip(v)
        r = self.rotation
        if r == 90:
            u = 1.0 - u
        elif r == 180:
            u, v = 1.0 - u, 1.0 - v
        elif r == 270:
            v = 1.0 - v
        return self._base.logpdf(u, v, *self._args())

    def pdf(self, u, v):
        return np.exp(self.logpdf(u, v))

    def hfunc2(self, u, v):
        """P(U <= u | V = v)."""
        u, v = _clip(u), _clip(v)
        h, a = self._base.h, self._args()
        r = self.rotation
        if r == 0:
            out = h(u, v, *a)
        elif r == 180:
            out = 1.0 - h(1.0 - u, 1.0 - v, *a)
        elif r == 90:
            out = 1.0 - h(1.0 - u, v, *a)
        else:
            out = h(u, 1.0 - v, *a)
        return _clip(out)

    def hfunc1(self, u, v):
        """P(V <= v | U = u)."""
        u, v = _clip(u), _clip(v)
        h, a = self._base.h, self._args()
        r = self.rotation
        if r == 0:
            out = h(v, u, *a)
        elif r == 180:
            out = 1.0 - h(1.0 - v, 1.0 - u, *a)
        elif r == 90:
            out = h(v, 1.0 - u, *a)
        else:
            out = 1.0 - h(1.0 - v, u, *a)
        return _clip(out)

    def hinv2(self, w, v):
        """u such that hfunc2(u, v) = w."""
        w, v = _clip(w), _clip(v)
        hi, a = self._base.hinv, self._args()
        r = self.rotation
        if r == 0:
            out = hi(w, v, *a)
        elif r == 180:
            out = 1.0 - hi(1.0 - w, 1.0 - v, *a)
        elif r == 90:
            out = 1.0 - hi(1.0 - w, v, *a)
        else:
            out = hi(w, 1.0 - v, *a)
        return _clip(out)

    def hinv1(self, w, u):
        """v such that hfunc1(u, v) = w."""
        w, u = _clip(w), _clip(u)
        hi, a = self._base.hinv, self._args()
        r = self.rotation
        if r == 0:
            out = hi(w, u, *a)
        elif r == 180:
            out = 1.0 - hi(1.0 - w, 1.0 - u, *a)
        elif r == 90:
            out = hi(w, 1.0 - u, *a)
        else:
            out = 1.0 - hi(1.0 - w, u, *a)
        return _clip(out)

    @property
    def tau(self) -> float:
        t = float(self._base.tau(*self._args()))
        return -t if self.rotation in (90, 270) else t

    @property
    def tail_dependence(self) -> tuple[float, float]:
        """(lambda_upper, lambda_lower)."""
        up, low = self._base.tails(*self._args())
        if self.rotation == 180:
            return low, up
        if self.rotation in (90, 270):
            return 0.0, 0.0
        return up, low

    def loglik(self, u, v) -> float:
        return float(np.sum(self.logpdf(u, v)))

    def simulate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.uniform(size=n)
        v = self.hinv1(rng.uniform(size=n), u)
        return np.column_stack([u, v])

    def label(self) -> str:
        return f"{self.family}{'' if not self.rotation else f'_r{self.rotation}'}"


# -- estimation -----------------------------------------------------------------

@dataclass(frozen=True)
class CopulaFit:
    copula: BivariateCopula
    loglik: float
    aic: float


def _aic(ll: float, k: int) -> float:
    return 2.0 * k - 2.0 * ll


def _fit_one_param(family, rotation, u, v, lo, hi) -> CopulaFit:
    def nll(p):
        val = -BivariateCopula(family, p, 0.0, rotation).loglik(u, v)
        return val if np.isfinite(val) else 1e300

    res = minimize_scalar(nll, bounds=(lo, hi), method="bounded", options={"xatol": 1e-7})
    cop = BivariateCopula(family, float(res.x), 0.0, rotation)
    ll = cop.loglik(u, v)
    if not np.isfinite(ll):
        raise NumericalError(f"{family} likelihood not finite at the optimum")
    return CopulaFit(cop, ll, _aic(ll, 1))


def _t_profile(u, v, nu: float) -> tuple[float, float]:
    """Maximise over rho for fixed nu; returns (rho, loglik)."""
    base = _BASE["student_t"]
    x, y = stdtrit(nu, u), stdtrit(nu, v)
    const = gammaln((nu + 2) / 2) + gammaln(nu / 2) - 2 * gammaln((nu + 1) / 2)
    marg = (nu + 1) / 2 * np.sum(np.log1p(x * x / nu) + np.log1p(y * y / nu))
    sxx = x * x + y * y
    sxy = x * y
    n = u.size

    def nll(rho):
        r2 = 1.0 - rho * rho
        q = (sxx - 2 * rho * sxy) / (nu * r2)
        return -(n * (const - 0.5 * np.log(r2)) - (nu + 2) / 2 * np.sum(np.log1p(q)) + marg)

    lo, hi = base.bounds
    res = minimize_scalar(nll, bounds=(lo, hi), method="bounded", options={"xatol": 1e-7})
    return float(res.x), float(-res.fun)


def _fit_student_t(u, v) -> CopulaFit:
    prof = [(_t_profile(u, v, nu), nu) for nu in T_DF_GRID]
    (rho, ll), nu = max(prof, key=lambda p: p[0][1])
    fine = np.round(np.arange(max(nu - 0.5, T_DF_BOUNDS[0]), min(nu + 0.5, T_DF_BOUNDS[1]) + 1e-9, 0.1), 10)
    for f in fine:
        (r_f, ll_f) = _t_profile(u, v, float(f))
        if ll_f > ll:
            rho, ll, nu = r_f, ll_f, float(f)
    cop = BivariateCopula("student_t", rho, float(nu))
    if not np.isfinite(ll):
        raise NumericalError("student_t likelihood not finite at the optimum")
    return CopulaFit(cop, cop.loglik(u, v), _aic(cop.loglik(u, v), 2))


def fit_family(family: str, u, v, rotation: int = 0) -> CopulaFit:
    """Maximum-likelihood fit of one family/rotation to pseudo-observations."""
    u, v = _clip(u), _clip(v)
    if family == "independence":
        return CopulaFit(BivariateCopula(), 0.0, 0.0)
    if family == "student_t":
        return _fit_student_t(u, v)
    if family == "frank":
        tau = kendalltau(u, v)[0]
        lo, hi = (1e-4, 35.0) if tau >= 0 else (-35.0, -1e-4)
        return _fit_one_param("frank", 0, u, v, lo, hi)
    lo, hi = _BASE[family].bounds
    return _fit_one_param(family, rotation, u, v, lo, hi)


def candidates(families=FAMILIES, tau: float = 0.0) -> list[tuple[str, int]]:
    """(family, rotation) pairs worth fitting given the sign of Kendall's tau."""
    rots = (0, 180) if tau >= 0 else (90, 270)
    out = []
    for fam in families:
        if fam not in _BASE:
            raise DataError(f"unknown copula family {fam!r}")
        if fam in ROTATABLE:
            out += [(fam, r) for r in rots]
        else:
            out.append((fam, 0))
    return out


def select_copula(u, v, families=FAMILIES) -> tuple[CopulaFit, list[str]]:
    """Fit every candidate and keep the smallest AIC.

    Returns the winning fit and the list of candidates whose optimisation
    failed.  Independence is always a candidate so a choice always exists.
    """
    u, v = _clip(u), _clip(v)
    tau = kendalltau(u, v)[0]
    tau = 0.0 if not np.isfinite(tau) else tau
    fams = tuple(families) if "independence" in families else ("independence", *families)
    best = None
    failed = []
    for fam, rot in candidates(fams, tau):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = fit_family(fam, u, v, rot)
        except (NumericalError, DataError, FloatingPointError, ValueError) as exc:
            failed.append(f"{fam}_r{rot}: {exc}")
            continue
        if not np.isfinite(fit.aic):
            failed.append(f"{fam}_r{rot}: non-finite AIC")
            continue
        if best is None or fit.aic < best.aic:
            best = fit
    return best, failed


def density_grid(cop: BivariateCopula, m: int = 50):
    """Copula density on an ``m x m`` midpoint grid of the unit square."""
    g = (np.arange(m) + 0.5) / m
    uu, vv = np.meshgrid(g, g, indexing="ij")
    return uu.ravel(), vv.ravel(), cop.pdf(uu.ravel(), vv.ravel())
