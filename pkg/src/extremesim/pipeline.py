"""Forward fit of the full model chain and its JSON bundle.

Stages run in order: season filter, trend, spacing, AR whitening, per time
step margins, Fréchet transform, polar split, angular model.  Errors are
re-raised as :class:`StageError` carrying the stage name.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .angular_model import (DEFAULT_DROP_THRESHOLD, DEFAULT_MAX_J, AngularModel,
                            fit_angular_model)
from .copulas import FAMILIES
from .dataset import (WINTER_MONTHS, FunctionalDataset, TrendModel, detrend, filter_season,
                      fit_trend, subsample)
from .errors import DataError, NumericalError, StageError
from .margins import MarginalMixtureModel, fit_marginal_mixture, hill_estimator, to_frechet
from .polar import PolarRepresentation, cost, cost_quantile_threshold, extract_extremes
from .whitening import ARModel, ResidualSet, fit_ar, invert_ar

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    months: tuple | None = tuple(sorted(WINTER_MONTHS))
    delta: int = 3
    p: int = 1
    p_u: float = 0.1
    u_ell_quantile: float = 0.95
    u_ell_absolute: float | None = None
    J: int | None = 3
    j_threshold: float = DEFAULT_DROP_THRESHOLD
    max_J: int = DEFAULT_MAX_J
    families: tuple = FAMILIES
    detrend: bool = True

    def __post_init__(self):
        if self.months is not None:
            object.__setattr__(self, "months", tuple(sorted(int(m) for m in self.months)))
        object.__setattr__(self, "families", tuple(self.families))
        if int(self.delta) != self.delta or self.delta < 1:
            raise DataError(f"delta must be an integer >= 1, got {self.delta}")
        if int(self.p) != self.p or self.p < 1:
            raise DataError(f"AR order p must be an integer >= 1, got {self.p}")
        if not 0 < self.p_u < 0.5:
            raise DataError(f"p_u must lie in (0, 0.5), got {self.p_u}")
        if not 0 < self.u_ell_quantile < 1:
            raise DataError(f"u_ell quantile must lie in (0, 1), got {self.u_ell_quantile}")
        if self.J is not None and self.J < 1:
            raise DataError(f"J must be >= 1, got {self.J}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["months"] = None if self.months is None else list(self.months)
        d["families"] = list(self.families)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True, eq=False)
class InitialHistory:
    """Predecessors of the extreme observations, for initial-series sampling.

    ``series[k, i]`` is the detrended series ``i + 1`` spaced steps before
    extreme ``k``; ``ell_pred`` is the cost of the lag-1 predecessor.
    """

    ell_eps: np.ndarray
    ell_pred: np.ndarray
    series: np.ndarray  # (n, p, T)
    pred_index: np.ndarray  # cycle index of the lag-1 predecessor

    @property
    def n(self) -> int:
        return self.ell_eps.size

    def to_dict(self) -> dict:
        return {"ell_eps": self.ell_eps.tolist(), "ell_pred": self.ell_pred.tolist(),
                "series": self.series.tolist(), "pred_index": self.pred_index.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialHistory":
        return cls(np.array(d["ell_eps"], dtype=float), np.array(d["ell_pred"], dtype=float),
                   np.array(d["series"], dtype=float), np.array(d["pred_index"], dtype=np.int64))


@dataclass(frozen=True, eq=False)
class FittedModels:
    config: FitConfig
    trend: TrendModel | None
    ar: ARModel
    margins: tuple  # MarginalMixtureModel per time step
    polar: PolarRepresentation
    angular: AngularModel
    history: InitialHistory
    radius_alpha_hill: float = float("nan")

    @property
    def T(self) -> int:
        return self.ar.T

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "artifact_version": __version__,
            "config": self.config.to_dict(),
            "trend": None if self.trend is None else self.trend.to_dict(),
            "ar": self.ar.to_dict(),
            "margins": [m.to_dict() for m in self.margins],
            "polar": self.polar.to_dict(),
            "angular": self.angular.to_dict(),
            "history": self.history.to_dict(),
            "radius_alpha_hill": self.radius_alpha_hill,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModels":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"bundle schema_version {d.get('schema_version')!r} "
                            f"is not supported (expected {SCHEMA_VERSION})")
        polar = PolarRepresentation.from_dict(d["polar"])
        return cls(
            config=FitConfig.from_dict(d["config"]),
            trend=None if d["trend"] is None else TrendModel.from_dict(d["trend"]),
            ar=ARModel.from_dict(d["ar"]),
            margins=tuple(MarginalMixtureModel.from_dict(m) for m in d["margins"]),
            polar=polar,
            angular=AngularModel.from_dict(d["angular"], polar.angles),
            history=InitialHistory.from_dict(d["history"]),
            radius_alpha_hill=float(d.get("radius_alpha_hill", float("nan"))),
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedModels":
        try:
            return cls.from_dict(json.loads(text))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed model bundle: {exc}") from exc


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if exc is not None and isinstance(exc, (DataError, NumericalError)):
            raise StageError(self.name, exc) from exc
        return False


def frechet_transform(margins, eps) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    return np.column_stack([to_frechet(m, eps[:, t]) for t, m in enumerate(margins)])


@dataclass(frozen=True, eq=False)
class PreparedData:
    """Intermediate series of the forward chain."""

    filtered: FunctionalDataset
    trend: TrendModel | None
    detrended: FunctionalDataset  # spaced
    residuals: ResidualSet


def prepare(ds: FunctionalDataset, config: FitConfig, trend: TrendModel | None = None,
            ar: ARModel | None = None) -> tuple[PreparedData, ARModel]:
    """Filter, detrend, space and whiten; reuses ``trend``/``ar`` when given."""
    with _stage("dataset"):
        filtered = filter_season(ds, config.months) if config.months is not None else ds
        if config.detrend and trend is None:
            trend = fit_trend(filtered)
        detr = detrend(filtered, trend) if config.detrend else filtered
        spaced = subsample(detr, config.delta)
    with _stage("whitening"):
        if ar is None:
            ar, res = fit_ar(spaced, config.p)
        else:
            res = residuals_for(ar, spaced)
    return PreparedData(filtered, trend, spaced, res), ar


def residuals_for(ar: ARModel, spaced: FunctionalDataset) -> ResidualSet:
    """Residuals of an already fitted AR model on new spaced data."""
    p = ar.order
    n = spaced.n
    if n <= p:
        raise DataError(f"need more than p = {p} series")
    x = spaced.values
    lags = np.stack([x[p - i : n - i] for i in range(1, p + 1)], axis=1)
    resid = x[p:] - invert_ar(ar, np.zeros_like(x[p:]), lags)
    lagged_index = np.stack([spaced.index[p - i : n - i] for i in range(1, p + 1)], axis=1)
    return ResidualSet(spaced.take(np.arange(p, n)).with_values(resid), lags, lagged_index)


def fit_pipeline(ds: FunctionalDataset, config: FitConfig | None = None) -> FittedModels:
    config = config or FitConfig()
    prep, ar = prepare(ds, config)
    eps = prep.residuals.residuals
    with _stage("margins"):
        margins = tuple(fit_marginal_mixture(eps.values[:, t], config.p_u) for t in range(eps.T))
        Z = frechet_transform(margins, eps.values)
    with _stage("polar"):
        u_ell = (config.u_ell_absolute if config.u_ell_absolute is not None
                 else cost_quantile_threshold(Z, config.u_ell_quantile))
        polar = extract_extremes(eps.with_values(Z), u_ell)
        sel = np.isin(eps.index, polar.source_ids)
        k = polar.n
        alpha_hill = 1.0 / hill_estimator(cost(Z), k) if k < Z.shape[0] else float("nan")
    with _stage("angular_model"):
        angular = fit_angular_model(polar.angles, J=config.J, threshold=config.j_threshold,
                                    max_J=config.max_J, families=config.families)
    lagged = prep.residuals.lagged[sel]
    history = InitialHistory(
        ell_eps=np.asarray(cost(eps.values[sel]), dtype=float),
        ell_pred=np.asarray(cost(lagged[:, 0]), dtype=float),
        series=lagged,
        pred_index=prep.residuals.lagged_index[sel, 0],
    )
    return FittedModels(config, prep.trend, ar, margins, polar, angular, history, alpha_hill)


@dataclass(frozen=True, eq=False)
class ObservedExtremes:
    """Detrended spaced cycles of a dataset, flagged by the fitted extreme set."""

    index: np.ndarray
    series: np.ndarray  # all cycles with a residual
    eps: np.ndarray
    is_extreme: np.ndarray
    timestamps: tuple | None = None

    @property
    def extremes(self) -> np.ndarray:
        return self.series[self.is_extreme]

    @property
    def extreme_eps(self) -> np.ndarray:
        return self.eps[self.is_extreme]


def observed_extremes(ds: FunctionalDataset, models: FittedModels) -> ObservedExtremes:
    """Re-run the forward preparation with the fitted trend and AR model."""
    prep, _ = prepare(ds, models.config, models.trend, models.ar)
    res = prep.residuals.residuals
    pos = np.flatnonzero(np.isin(prep.detrended.index, res.index))
    if not np.isin(models.polar.source_ids, res.index).all():
        raise DataError("dataset does not contain all extreme cycles of the model")
    stamps = None
    if prep.detrended.timestamps is not None:
        stamps = tuple(prep.detrended.timestamps[i] for i in pos)
    return ObservedExtremes(res.index, prep.detrended.values[pos], res.values,
                            np.isin(res.index, models.polar.source_ids), stamps)
