"""Backward chain: Pareto radius and model angle, Fréchet-scale rejection,
inverse margins, AR inversion from a sampled initial series, optional trend.

Every draw owns a random stream seeded by ``(seed, draw_index)``, so the
batch does not depend on the number of worker threads.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .angular_model import AngularModel, sample_angles
from .dataset import retrend
from .errors import DataError, NumericalError, StageError
from .margins import from_frechet
from .pipeline import FittedModels, InitialHistory
from .polar import cost
from .whitening import invert_ar

MODES = ("conditional", "unconditional")
FIRST_CHUNK = 4
MAX_CHUNK = 1024


@dataclass(frozen=True)
class SimulationConfig:
    n_sim: int = 2000
    alpha: float | str = 1.0  # or "hill" for the bundle's Hill estimate
    sampling_mode: str = "conditional"
    k_nn: int = 20
    seed: int = 0
    max_rejections_per_draw: int = 10000
    retrend: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.n_sim < 1:
            raise DataError("n_sim must be >= 1")
        if self.k_nn < 1:
            raise DataError("k_nn must be >= 1")
        if self.sampling_mode not in MODES:
            raise DataError(f"sampling_mode must be one of {MODES}, got {self.sampling_mode!r}")
        if self.alpha != "hill" and not float(self.alpha) > 0:
            raise DataError(f"alpha must be > 0 or 'hill', got {self.alpha!r}")
        if self.max_rejections_per_draw < 0:
            raise DataError("max_rejections_per_draw must be >= 0")
        if self.threads < 1:
            raise DataError("threads must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SimulationBatch:
    series: np.ndarray  # detrended simulated series (n_sim, T)
    frechet: np.ndarray  # accepted Fréchet-scale draws
    eps: np.ndarray
    radius: np.ndarray
    rejections: np.ndarray
    init_index: np.ndarray  # cycle index of the sampled lag-1 predecessor
    history_row: np.ndarray
    retrended: np.ndarray | None = None
    cycle_index: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.series.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return self.n / float(self.n + self.rejections.sum())

    def to_csv(self) -> str:
        T = self.series.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["draw", "radius", "rejections", "init_index"]
        if self.retrended is not None:
            head.append("M")
        w.writerow(head + [f"t{t + 1}" for t in range(T)])
        values = self.series if self.retrended is None else self.retrended
        for i in range(self.n):
            row = [i, repr(float(self.radius[i])), int(self.rejections[i]), int(self.init_index[i])]
            if self.retrended is not None:
                row.append(int(self.cycle_index[i]))
            w.writerow(row + [repr(float(v)) for v in values[i]])
        return buf.getvalue()

    def to_npz_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("series", "frechet", "eps", "radius",
                                             "rejections", "init_index", "history_row")}
        if self.retrended is not None:
            out["retrended"] = self.retrended
            out["cycle_index"] = self.cycle_index
        return out


def sample_radius(n: int, u_ell: float, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Pareto radii ``u_ell * U ** (-1 / alpha)``."""
    if not alpha > 0:
        raise DataError(f"alpha must be > 0, got {alpha}")
    u = 1.0 - rng.uniform(size=n)  # in (0, 1]
    return u_ell * u ** (-1.0 / alpha)


def _draw_one(angular: AngularModel, u_ell: float, alpha: float, max_rej: int,
              rng: np.random.Generator):
    """First candidate ``radius * angle`` that is positive everywhere.

    Candidates are generated in growing chunks; a rejected candidate is
    replaced by a fresh angle and a fresh radius.
    """
    rejected = 0
    chunk = FIRST_CHUNK
    while True:
        theta = sample_angles(angular, chunk, rng)
        radius = sample_radius(chunk, u_ell, alpha, rng)
        ok = np.flatnonzero(np.all(theta > 0, axis=1))
        if ok.size:
            j = ok[0]
            rejected += j
            if rejected > max_rej:
                break
            return radius[j] * theta[j], radius[j], rejected
        rejected += chunk
        if rejected > max_rej:
            break
        chunk = min(2 * chunk, MAX_CHUNK)
    raise NumericalError(
        f"no positive draw after {max_rej} rejections: the angle model puts little "
        "mass on the positive orthant"
    )


def simulate_frechet_series(polar, angular: AngularModel, config: SimulationConfig,
                            alpha: float | None = None, draws=None):
    """Accepted Fréchet-scale draws; returns ``(Z, radius, rejections, rngs)``.

    ``rngs`` are the per-draw generators after rejection sampling, so later
    stages can continue on the same streams.
    """
    alpha = float(config.alpha) if alpha is None else alpha
    draws = range(config.n_sim) if draws is None else draws
    rngs = [np.random.default_rng(np.random.SeedSequence([config.seed, i])) for i in draws]

    def work(rng):
        return _draw_one(angular, polar.u_ell, alpha, config.max_rejections_per_draw, rng)

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            res = list(ex.map(work, rngs))
    else:
        res = [work(r) for r in rngs]
    Z = np.array([r[0] for r in res])
    return Z, np.array([r[1] for r in res]), np.array([r[2] for r in res], dtype=np.int64), rngs


def inverse_margins(Z, margins) -> np.ndarray:
    """Coordinate-wise ``from_frechet`` with the model of each time step."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != len(margins):
        raise DataError(f"Z has {Z.shape[1]} time steps, margins cover {len(margins)}")
    return np.column_stack([from_frechet(m, Z[:, t]) for t, m in enumerate(margins)])


def initial_window(ell_eps_sim: float, ell_eps, k_nn: int) -> np.ndarray:
    """Indices of the ``k_nn`` entries nearest in rank to ``ell_eps_sim``.

    The window is centred on the rank position of the target and shifted
    inward when it would cross either end of the sorted history.
    """
    ell_eps = np.asarray(ell_eps, dtype=float)
    n = ell_eps.size
    order = np.argsort(ell_eps, kind="stable")
    k = min(k_nn, n)
    pos = int(np.searchsorted(ell_eps[order], ell_eps_sim))
    lo = min(max(pos - k // 2, 0), n - k)
    return order[lo : lo + k]


def sample_initial(mode: str, ell_eps_sim: float, history: InitialHistory, k_nn: int,
                   rng: np.random.Generator) -> int:
    """Row of ``history`` to use as initial series."""
    if history.n == 0:
        raise DataError("initial-series history is empty")
    if mode == "unconditional":
        return int(rng.integers(history.n))
    if mode != "conditional":
        raise DataError(f"unknown sampling mode {mode!r}")
    window = initial_window(ell_eps_sim, history.ell_eps, k_nn)
    return int(window[rng.integers(window.size)])


def simulate_batch(models: FittedModels, config: SimulationConfig) -> SimulationBatch:
    """Run the whole backward chain; errors name the failing stage."""
    alpha = models.radius_alpha_hill if config.alpha == "hill" else float(config.alpha)
    if not (np.isfinite(alpha) and alpha > 0):
        raise StageError("simulator", DataError(f"invalid radius tail index {alpha}"))
    try:
        Z, radius, rej, rngs = simulate_frechet_series(models.polar, models.angular, config, alpha)
    except (DataError, NumericalError) as exc:
        raise StageError("rejection", exc) from exc
    try:
        eps = inverse_margins(Z, models.margins)
    except (DataError, NumericalError) as exc:
        raise StageError("margins", exc) from exc
    try:
        ell = np.asarray(cost(eps), dtype=float)
        rows = np.array([sample_initial(config.sampling_mode, ell[i], models.history,
                                        config.k_nn, rngs[i]) for i in range(config.n_sim)])
        init = models.history.series[rows]
        series = invert_ar(models.ar, eps, init)
    except (DataError, NumericalError) as exc:
        raise StageError("whitening", exc) from exc
    init_index = models.history.pred_index[rows]
    retrended = cycle_index = None
    if config.retrend:
        if models.trend is None:
            raise StageError("dataset", DataError("bundle has no trend to re-add"))
        cycle_index = init_index + models.ar.delta
        retrended = retrend(series, models.trend, cycle_index)
    return SimulationBatch(series, Z, eps, radius, rej, init_index, rows, retrended, cycle_index)


def batch_manifest(batch: SimulationBatch, config: SimulationConfig) -> dict:
    return {
        "config": config.to_dict(),
        "n_sim": batch.n,
        "acceptance_rate": batch.acceptance_rate,
        "total_rejections": int(batch.rejections.sum()),
    }


def manifest_json(d: dict) -> str:
    return json.dumps(d, sort_keys=True, indent=2)
