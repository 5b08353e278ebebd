"""Generative model for the angle: PCA scores, their margins and a D-vine.

Angles are centred and projected on the leading ``J`` eigenvectors.  Each
score gets an interpolated empirical CDF; the dependence between the
uniformised scores is a D-vine in score order ``1..J``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .copulas import FAMILIES, BivariateCopula, density_grid, select_copula
from .errors import DataError, NumericalError
from .margins import EmpiricalCDF
from .polar import cost

DEFAULT_DROP_THRESHOLD = 0.2
DEFAULT_MAX_J = 5
MIN_VINE_OBS = 50


@dataclass(frozen=True, eq=False)
class AngularPCA:
    mean: np.ndarray
    eigenvectors: np.ndarray  # columns, ordered by eigenvalue
    eigenvalues: np.ndarray
    J: int
    scores: np.ndarray  # (n, J)

    @property
    def T(self) -> int:
        return self.mean.size

    def explained_ratio(self, J: int | None = None):
        """``R_J``, or the whole curve ``R_1..R_T`` when ``J`` is None."""
        total = self.eigenvalues.sum()
        curve = np.cumsum(self.eigenvalues) / total if total > 0 else np.ones(self.T)
        return curve if J is None else float(curve[J - 1])

    def project(self, x, J: int | None = None) -> np.ndarray:
        J = self.J if J is None else J
        return (np.asarray(x, dtype=float) - self.mean) @ self.eigenvectors[:, :J]

    def reconstruct(self, scores) -> np.ndarray:
        scores = np.asarray(scores, dtype=float)
        return self.mean + scores @ self.eigenvectors[:, : scores.shape[-1]].T

    def with_J(self, J: int, angles) -> "AngularPCA":
        if not 1 <= J <= self.T:
            raise DataError(f"J must lie in [1, {self.T}], got {J}")
        return AngularPCA(self.mean, self.eigenvectors, self.eigenvalues, J,
                          self.project(angles, J))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "eigenvectors": self.eigenvectors.tolist(),
                "eigenvalues": self.eigenvalues.tolist(), "J": self.J}

    @classmethod
    def from_dict(cls, d: dict, angles) -> "AngularPCA":
        pca = cls(np.array(d["mean"], dtype=float), np.array(d["eigenvectors"], dtype=float),
                  np.array(d["eigenvalues"], dtype=float), int(d["J"]), np.zeros((0, int(d["J"]))))
        return pca.with_J(pca.J, angles)


def fit_pca(angles, J: int | None = None) -> AngularPCA:
    """Eigendecomposition of the (1/n) covariance of the angles.

    Small negative eigenvalues from round-off are clipped to zero.  ``J``
    defaults to :func:`select_J`.
    """
    x = np.asarray(angles, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("PCA needs at least two angles")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    # fix the sign so that the largest loading of each vector is positive
    flip = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(vecs.shape[1])])
    vecs = vecs * np.where(flip == 0, 1.0, flip)
    pca = AngularPCA(mean, vecs, vals, 1, xc @ vecs[:, :1])
    return pca.with_J(select_J(pca) if J is None else J, x)


def select_J(pca: AngularPCA, threshold: float = DEFAULT_DROP_THRESHOLD,
             max_J: int = DEFAULT_MAX_J) -> int:
    """Smallest J after which one more component barely reduces ``1 - R_J``.

    Adding component ``J + 1`` lowers the unexplained variance by the
    relative amount ``lambda_{J+1} / sum_{k > J} lambda_k``; the first J for
    which this falls below ``threshold`` is returned, capped at ``max_J``.
    """
    lam = pca.eigenvalues
    cap = min(max_J, lam.size)
    for J in range(1, cap):
        rest = lam[J:].sum()
        if rest <= 0 or lam[J] / rest < threshold:
            return J
    return cap


@dataclass(frozen=True, eq=False)
class ScoreMarginals:
    cdfs: tuple

    @classmethod
    def fit(cls, scores) -> "ScoreMarginals":
        scores = np.asarray(scores, dtype=float)
        return cls(tuple(EmpiricalCDF(scores[:, i]) for i in range(scores.shape[1])))

    @property
    def J(self) -> int:
        return len(self.cdfs)

    def to_uniform(self, scores) -> np.ndarray:
        scores = np.atleast_2d(np.asarray(scores, dtype=float))
        return np.column_stack([f.cdf(scores[:, i]) for i, f in enumerate(self.cdfs)])

    def from_uniform(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.column_stack([f.quantile(u[:, i]) for i, f in enumerate(self.cdfs)])


def pseudo_observations(scores) -> np.ndarray:
    """Ranks scaled to ``rank / (n + 1)``, column by column."""
    scores = np.asarray(scores, dtype=float)
    ranks = np.argsort(np.argsort(scores, axis=0, kind="stable"), axis=0, kind="stable") + 1
    return ranks / (scores.shape[0] + 1.0)


# -- D-vine -----------------------------------------------------------------------

@dataclass(frozen=True)
class VineEdge:
    tree: int
    pair: tuple[int, int]  # 1-based variables
    conditioning: tuple[int, ...]
    copula: BivariateCopula
    loglik: float = 0.0
    aic: float = 0.0
    warning: str | None = None

    def to_dict(self) -> dict:
        up, low = self.copula.tail_dependence
        return {
            "tree": self.tree, "pair": list(self.pair), "conditioning": list(self.conditioning),
            "family": self.copula.family, "rotation": self.copula.rotation,
            "par": self.copula.par, "par2": self.copula.par2, "tau": self.copula.tau,
            "lambda_upper": up, "lambda_lower": low,
            "loglik": self.loglik, "aic": self.aic, "warning": self.warning,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VineEdge":
        cop = BivariateCopula(d["family"], float(d["par"]), float(d["par2"]), int(d.get("rotation", 0)))
        up, low = cop.tail_dependence
        for key, val in (("tau", cop.tau), ("lambda_upper", up), ("lambda_lower", low)):
            if key in d and abs(float(d[key]) - val) > 1e-6:
                raise DataError(f"stored {key}={d[key]} disagrees with {cop.label()} value {val}")
        return cls(int(d["tree"]), tuple(d["pair"]), tuple(d["conditioning"]), cop,
                   float(d.get("loglik", 0.0)), float(d.get("aic", 0.0)), d.get("warning"))


@dataclass(frozen=True)
class VineModel:
    """D-vine on variables ``1..dim``; ``trees[k-1][i]`` links ``i+1`` and ``i+k+1``."""

    dim: int
    trees: tuple = field(default_factory=tuple)

    @property
    def edges(self) -> list[VineEdge]:
        return [e for tree in self.trees for e in tree]

    def to_dict(self) -> dict:
        return {"structure": "D-vine", "order": list(range(1, self.dim + 1)),
                "dim": self.dim, "edges": [e.to_dict() for e in self.edges]}

    @classmethod
    def from_dict(cls, d: dict) -> "VineModel":
        dim = int(d["dim"])
        edges = [VineEdge.from_dict(e) for e in d["edges"]]
        trees = tuple(tuple(e for e in edges if e.tree == k) for k in range(1, dim))
        for k, tree in enumerate(trees, start=1):
            if len(tree) != dim - k:
                raise DataError(f"vine tree {k} has {len(tree)} edges, expected {dim - k}")
        return cls(dim, trees)

    def logpdf(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        fwd = bwd = [u[:, i] for i in range(self.dim)]
        out = np.zeros(u.shape[0])
        for tree in self.trees:
            nf, nb = [], []
            for i, e in enumerate(tree):
                a, b = fwd[i], bwd[i + 1]
                out += e.copula.logpdf(a, b)
                nf.append(e.copula.hfunc2(a, b))
                nb.append(e.copula.hfunc1(a, b))
            fwd, bwd = nf, nb
        return out


def fit_vine(u, families=FAMILIES) -> VineModel:
    """Sequential D-vine fit, tree by tree, with AIC family selection."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 2:
        raise DataError("uniform scores must be an n x J matrix")
    n, J = u.shape
    if np.any((u <= 0) | (u >= 1)) or not np.all(np.isfinite(u)):
        raise DataError("uniform scores must lie strictly inside (0, 1)")
    if J >= 2 and n < MIN_VINE_OBS:
        raise DataError(f"vine fitting needs at least {MIN_VINE_OBS} observations, got {n}")
    fwd = bwd = [u[:, i] for i in range(J)]
    trees = []
    for k in range(1, J):
        tree, nf, nb = [], [], []
        for i in range(J - k):
            a, b = fwd[i], bwd[i + 1]
            fit, failed = select_copula(a, b, families)
            warning = "; ".join(failed) if failed else None
            if fit is None:
                cop, ll, aic = BivariateCopula(), 0.0, 0.0
            else:
                cop, ll, aic = fit.copula, fit.loglik, fit.aic
            tree.append(VineEdge(k, (i + 1, i + k + 1), tuple(range(i + 2, i + k + 1)),
                                 cop, ll, aic, warning))
            nf.append(cop.hfunc2(a, b))
            nb.append(cop.hfunc1(a, b))
        trees.append(tuple(tree))
        fwd, bwd = nf, nb
    return VineModel(J, tuple(trees))


def sample_vine(model: VineModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse Rosenblatt transform of independent uniforms through the vine."""
    J = model.dim
    w = rng.uniform(size=(n, J))
    # fwd[k][i] = F(u_i | u_{i+1..i+k})
    fwd = [dict() for _ in range(J)]
    out = np.empty((n, J))
    for m in range(J):
        x = w[:, m]
        bwd = [None] * (m + 1)
        for k in range(m, 0, -1):
            x = model.trees[k - 1][m - k].copula.hinv1(x, fwd[k - 1][m - k])
            bwd[k - 1] = x
        out[:, m] = x
        fwd[0][m] = x
        for k in range(1, m + 1):
            cop = model.trees[k - 1][m - k].copula
            fwd[k][m - k] = cop.hfunc2(fwd[k - 1][m - k], bwd[k - 1])
    return out


# -- full angular model -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AngularModel:
    pca: AngularPCA
    marginals: ScoreMarginals
    vine: VineModel

    @property
    def J(self) -> int:
        return self.pca.J

    def to_dict(self) -> dict:
        return {"pca": self.pca.to_dict(), "vine": self.vine.to_dict()}

    @classmethod
    def from_dict(cls, d: dict, angles) -> "AngularModel":
        pca = AngularPCA.from_dict(d["pca"], angles)
        return cls(pca, ScoreMarginals.fit(pca.scores), VineModel.from_dict(d["vine"]))


def fit_angular_model(angles, J: int | None = None, threshold: float = DEFAULT_DROP_THRESHOLD,
                      max_J: int = DEFAULT_MAX_J, families=FAMILIES) -> AngularModel:
    pca = fit_pca(angles, J=1)
    if J is None:
        J = select_J(pca, threshold, max_J)
    pca = pca.with_J(J, angles)
    marginals = ScoreMarginals.fit(pca.scores)
    vine = fit_vine(pseudo_observations(pca.scores), families) if J >= 2 else VineModel(1)
    return AngularModel(pca, marginals, vine)


def reconstruct_theta(pca: AngularPCA, marginals: ScoreMarginals, uniform_row,
                      cost_fn=cost) -> np.ndarray:
    """Angle from uniforms: inverse score CDFs, truncated expansion, unit cost.

    Accepts one row of length J or a matrix of rows.
    """
    u = np.asarray(uniform_row, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if u.shape[1] != marginals.J:
        raise DataError(f"expected {marginals.J} uniforms per row, got {u.shape[1]}")
    theta = pca.reconstruct(marginals.from_uniform(u))
    norm = np.asarray(cost_fn(theta), dtype=float)
    if np.any(norm <= 0):
        raise NumericalError("reconstructed angle is identically zero")
    theta = theta / norm[:, None]
    return theta[0] if single else theta


def sample_angles(model: AngularModel, n: int, rng: np.random.Generator, cost_fn=cost) -> np.ndarray:
    if model.J == 1:
        u = rng.uniform(size=(n, 1))
    else:
        u = sample_vine(model.vine, n, rng)
    return reconstruct_theta(model.pca, model.marginals, u, cost_fn)


def density_grid_rows(vine: VineModel, m: int = 50):
    """Tidy rows of first-tree copula densities on an ``m x m`` grid."""
    for e in vine.trees[0] if vine.trees else ():
        uu, vv, dens = density_grid(e.copula, m)
        for a, b, c in zip(uu, vv, dens):
            yield {"pair": f"{e.pair[0]}-{e.pair[1]}", "u": a, "v": b, "density": c}
