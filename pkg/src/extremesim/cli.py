"""Command-line entry point: ``extremesim {synth,fit,simulate,validate,diagnose}``.

Settings come from built-in defaults, then an optional JSON config file,
then command-line flags.  The config file has one section per command::

    {"seed": 1, "fit": {"delta": 3, "J": 3}, "simulate": {"n_sim": 2000},
     "validate": {"B": 500, "reps": 100}, "diagnose": {"j_max": 8}}

Every command writes its outputs atomically and a ``*_manifest.json`` with
the resolved configuration, seed, input hashes and package version.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure,
4 validation ran but a hard check failed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from dataclasses import fields
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import dataset_csv, load_dataset
from .errors import DataError, NumericalError, StageError
from .margins import fit_marginal_mixture, gamma_curves, threshold_diagnostics
from .pipeline import FitConfig, FittedModels, fit_pipeline, frechet_transform, observed_extremes, prepare
from .polar import angular_convergence_scan, cost
from .simulator import SimulationBatch, SimulationConfig, batch_manifest, simulate_batch
from .synthetic import SyntheticConfig, generate
from .validation import (ValidationReport, chi_measures, classification_test,
                         cost_distribution_compare, extremogram, extremogram_inside,
                         pca_two_sample, percentile_bands, return_levels)
from .whitening import acf_pacf

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 1, 2, 3, 4

VALIDATE_DEFAULTS = {
    "levels": [0.05, 0.25, 0.5, 0.75, 0.95],
    "B": 500,
    "conf": 0.95,
    "min_fraction_inside": 0.9,
    "extremogram_q": 0.9,
    "pca_dims": 3,
    "return_level_steps": [13, 19, 25, 31],
    "years": None,
    "classifiers": ["logistic", "random_forest"],
    "features": ["raw"],
    "reps": 100,
    "n_trees": 500,
    "checks": ["bands", "pca_ks", "extremogram", "chi", "return_levels", "classification",
               "cost"],
}
DIAGNOSE_DEFAULTS = {"max_lag": 20, "j_max": 8, "k_min": 50, "k_max": 1000, "n_grid": 20}
SYNTH_FIELDS = {f.name for f in fields(SyntheticConfig)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- file helpers ---------------------------------------------------------------

def atomic_write(path, data) -> None:
    """Write text or bytes to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_of(path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def rows_to_csv(rows) -> str:
    rows = list(rows)
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def read_config(path) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise DataError("config file must hold a JSON object")
    return d


def merge(defaults: dict, section: dict, flags: dict, name: str) -> dict:
    unknown = set(section) - set(defaults)
    if unknown:
        raise DataError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    out = dict(defaults)
    out.update(section)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def write_manifest(out: Path, command: str, config: dict, seed, inputs: dict, outputs) -> None:
    manifest = {
        "command": command,
        "artifact_version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {k: {"path": str(v), "sha256": sha256_of(v)} for k, v in inputs.items()},
        "outputs": {name: hashlib.sha256(data if isinstance(data, bytes) else data.encode())
                    .hexdigest() for name, data in outputs.items()},
    }
    atomic_write(out / f"{command}_manifest.json",
                 json.dumps(manifest, sort_keys=True, indent=2, default=_jsonable))


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.ndarray, tuple)):
        return list(v)
    raise TypeError(f"not serializable: {type(v).__name__}")


def emit(out: Path, files: dict) -> None:
    for name, data in files.items():
        atomic_write(out / name, data)


def load_batch(path) -> SimulationBatch:
    """Read a batch CSV written by ``simulate``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"batch file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{path}: batch is empty")
    head = rows[0]
    try:
        tcols = [j for j, h in enumerate(head) if h.startswith("t") and h[1:].isdigit()]
        data = np.array([[float(r[j]) for j in tcols] for r in rows[1:]])
        col = {h: j for j, h in enumerate(head)}
        radius = np.array([float(r[col["radius"]]) for r in rows[1:]])
        rej = np.array([int(r[col["rejections"]]) for r in rows[1:]])
        init = np.array([int(r[col["init_index"]]) for r in rows[1:]])
        M = np.array([int(r[col["M"]]) for r in rows[1:]]) if "M" in col else None
    except (KeyError, ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed batch CSV ({exc})") from exc
    empty = np.empty((data.shape[0], 0))
    if M is None:
        return SimulationBatch(data, empty, empty, radius, rej, init, init)
    return SimulationBatch(data, empty, empty, radius, rej, init, init, data, M)


# -- commands ---------------------------------------------------------------------

def cmd_synth(args, cfg) -> int:
    section = cfg.get("synth", {})
    unknown = set(section) - SYNTH_FIELDS
    if unknown:
        raise DataError(f"unknown keys in config section 'synth': {sorted(unknown)}")
    params = dict(section)
    for key in ("n", "T", "coupling", "ar_coef"):
        if getattr(args, key) is not None:
            params[key] = getattr(args, key)
    for key in ("profile_sd", "coupling_bounds"):
        if key in params:
            params[key] = tuple(params[key])
    sc = SyntheticConfig(**params)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    ds = generate(sc, seed=seed)
    out = Path(args.out)
    text = dataset_csv(ds)
    emit(out, {"data.csv": text})
    write_manifest(out, "synth", sc.to_dict(), seed, {}, {"data.csv": text})
    return EXIT_OK


def fit_config_from(args, cfg) -> FitConfig:
    defaults = FitConfig().to_dict()
    flags = {"months": args.months, "delta": args.delta, "p": args.p, "p_u": args.p_u,
             "u_ell_quantile": args.u_ell_quantile, "u_ell_absolute": args.u_ell_absolute,
             "J": args.J, "families": args.families,
             "detrend": False if args.no_detrend else None}
    if args.all_months:
        flags["months"] = None
    d = merge(defaults, cfg.get("fit", {}), flags, "fit")
    if args.all_months:
        d["months"] = None
    if d.get("J") == "auto":
        d["J"] = None
    return FitConfig.from_dict(d)


def fit_tables(models: FittedModels) -> dict:
    margins = [{"t": t + 1, "u": m.u, "sigma": m.gpd.sigma, "gamma": m.gpd.gamma, "n": m.n}
               for t, m in enumerate(models.margins)]
    ratio = models.angular.pca.explained_ratio()
    pca = [{"component": j + 1, "eigenvalue": lam, "cumulative_ratio": ratio[j]}
           for j, lam in enumerate(models.angular.pca.eigenvalues)]
    vine = []
    for e in models.angular.vine.edges:
        d = e.to_dict()
        d["pair"] = "-".join(map(str, d["pair"]))
        d["conditioning"] = "-".join(map(str, d["conditioning"]))
        vine.append(d)
    return {"fit_margins.csv": rows_to_csv(margins), "fit_pca.csv": rows_to_csv(pca),
            "fit_vine.csv": rows_to_csv(vine)}


def cmd_fit(args, cfg) -> int:
    config = fit_config_from(args, cfg)
    ds = load_input(args.input)
    models = fit_pipeline(ds, config)
    out = Path(args.out)
    files = {"model.json": models.to_json(), **fit_tables(models)}
    emit(out, files)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    summary = {"fit": config.to_dict(), "n_extremes": models.polar.n,
               "u_ell": models.polar.u_ell, "J": models.angular.J}
    write_manifest(out, "fit", summary, seed, {"input": args.input}, files)
    return EXIT_OK


def load_input(path):
    try:
        return load_dataset(path)
    except DataError as exc:
        raise StageError("dataset", exc) from exc


def load_model(path) -> FittedModels:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"model bundle not found: {p}")
    return FittedModels.from_json(p.read_text())


def sim_config_from(args, cfg) -> SimulationConfig:
    defaults = SimulationConfig().to_dict()
    flags = {"n_sim": args.n_sim, "sampling_mode": args.mode, "k_nn": args.k_nn,
             "alpha": args.alpha, "max_rejections_per_draw": args.max_rejections,
             "retrend": True if args.retrend else None, "threads": args.threads,
             "seed": args.seed}
    section = dict(cfg.get("simulate", {}))
    if "seed" not in section and "seed" in cfg:
        section["seed"] = cfg["seed"]
    d = merge(defaults, section, flags, "simulate")
    if d["alpha"] != "hill":
        d["alpha"] = float(d["alpha"])
    return SimulationConfig(**d)


def cmd_simulate(args, cfg) -> int:
    models = load_model(args.model)
    config = sim_config_from(args, cfg)
    batch = simulate_batch(models, config)
    out = Path(args.out)
    files = {"batch.csv": batch.to_csv()}
    emit(out, files)
    echo = batch_manifest(batch, config)
    # the thread count does not change the output, keep it out of the echo
    echo["config"].pop("threads")
    write_manifest(out, "simulate", echo, config.seed, {"model": args.model}, files)
    return EXIT_OK


def _years(stamps, fallback):
    if fallback is not None:
        return float(fallback)
    if not stamps:
        return None
    times = [datetime.fromisoformat(s) for s in stamps if s]
    if len(times) < 2:
        return None
    return (max(times) - min(times)).total_seconds() / (365.25 * 86400)


def run_validation(models: FittedModels, obs, batch: SimulationBatch, opts: dict,
                   seed: int) -> ValidationReport:
    x_obs = obs.extremes
    sim = batch.series
    if batch.retrended is not None:
        if models.trend is None:
            raise DataError("batch is re-trended but the model has no trend")
        sim = sim - np.outer(batch.cycle_index, models.trend.slope)
    if sim.shape[0] == 0:
        raise DataError("simulated batch is empty")
    if sim.shape[1] != x_obs.shape[1]:
        raise DataError(f"batch has T={sim.shape[1]}, observations have T={x_obs.shape[1]}")
    checks = set(opts["checks"])
    rep = ValidationReport()
    B = int(opts["B"])
    if "bands" in checks:
        bands = percentile_bands(x_obs, sim, opts["levels"], B, opts["conf"], seed)
        rep.add("bands", bands, bands.fraction_inside >= opts["min_fraction_inside"], hard=True)
    if "pca_ks" in checks:
        rep.add("pca_ks", pca_two_sample(x_obs, sim, int(opts["pca_dims"])))
    if "extremogram" in checks:
        eo = extremogram(x_obs, opts["extremogram_q"], B=B, conf=opts["conf"], seed=seed)
        es = extremogram(sim, opts["extremogram_q"], B=0)
        rep.add("extremogram", eo, bool(extremogram_inside(eo, es).all()), hard=True)
        rep.add("extremogram_simulated", es)
    if "chi" in checks:
        # lagged residual pairs at the middle time step
        t = obs.eps.shape[1] // 2
        rep.add("chi", chi_measures(obs.eps[:-1, t], obs.eps[1:, t], B=min(B, 200), seed=seed))
    if "return_levels" in checks:
        years = _years(obs.timestamps, opts["years"])
        steps = [t for t in opts["return_level_steps"] if 1 <= t <= x_obs.shape[1]]
        steps = steps or [x_obs.shape[1] // 2 + 1]
        for t in steps if years else []:
            m = models.margins[t - 1]
            xs = obs.series[:, t - 1]
            thr = float(np.quantile(xs, 1.0 - m.p_u))
            npy = np.sum(xs > thr) / years
            rl = return_levels(xs, obs.is_extreme, sim[:, t - 1], npy, thr, t, B=B,
                               conf=opts["conf"], seed=seed)
            rep.add(f"return_levels_t{t}", rl)
    if "classification" in checks:
        for clf in opts["classifiers"]:
            for feat in opts["features"]:
                r = classification_test(x_obs, sim, feat, clf, int(opts["reps"]), seed=seed,
                                        n_trees=int(opts["n_trees"]))
                rep.add(f"classification_{clf}_{feat}", r, r.contains_half, hard=True)
    if "cost" in checks:
        rep.add("cost", cost_distribution_compare(x_obs, sim))
    return rep


def cmd_validate(args, cfg) -> int:
    models = load_model(args.model)
    ds = load_input(args.input)
    batch = load_batch(args.batch)
    flags = {"B": args.B, "reps": args.reps, "n_trees": args.n_trees, "years": args.years}
    if args.checks:
        flags["checks"] = args.checks.split(",")
    opts = merge(VALIDATE_DEFAULTS, cfg.get("validate", {}), flags, "validate")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    obs = observed_extremes(ds, models)
    rep = run_validation(models, obs, batch, opts, seed)
    out = Path(args.out)
    files = {"report.json": rep.to_json()}
    files.update({f"validate_{k}.csv": v for k, v in rep.csv_tables().items()})
    emit(out, files)
    write_manifest(out, "validate", opts, seed,
                   {"model": args.model, "input": args.input, "batch": args.batch}, files)
    return EXIT_OK if rep.passed else EXIT_VALIDATION


def cmd_diagnose(args, cfg) -> int:
    flags = {"j_max": args.j_max, "max_lag": args.max_lag}
    opts = merge(DIAGNOSE_DEFAULTS, cfg.get("diagnose", {}), flags, "diagnose")
    config = fit_config_from(args, cfg)
    ds = load_input(args.input)
    prep, _ = prepare(ds, config)
    eps = prep.residuals.residuals.values
    n, T = eps.shape
    files = {}

    acf_rows = []
    for t in range(T):
        series = prep.detrended.values[:, t]
        max_lag = min(int(opts["max_lag"]), series.size // 2 - 1)
        for label, x in (("detrended", series), ("residual", eps[:, t])):
            a, p = acf_pacf(x, max_lag)
            acf_rows += [{"t": t + 1, "series": label, "lag": h, "acf": a[h], "pacf": p[h]}
                         for h in range(max_lag + 1)]
    files["diagnose_acf.csv"] = rows_to_csv(acf_rows)

    thr_rows = []
    for t in range(T):
        d = threshold_diagnostics(eps[:, t], n_grid=int(opts["n_grid"]))
        thr_rows += [{"t": t + 1, **r} for r in d.rows()]
    files["diagnose_thresholds.csv"] = rows_to_csv(thr_rows)

    margins = [fit_marginal_mixture(eps[:, t], config.p_u) for t in range(T)]
    Z = frechet_transform(margins, eps)
    k_max = min(int(opts["k_max"]), n - 1)
    # about 100 k values: every GPD refit costs a full likelihood profile
    ks = np.unique(np.linspace(10, max(11, n // 5), 100).astype(int))
    g_rows = []
    for label, sample in (("raw", cost(eps)), ("transformed", cost(Z))):
        g = gamma_curves(sample, ks)
        g_rows += [{"series": label, "k": int(k), "hill": g["hill"][i], "mle": g["mle"][i],
                    "moments": g["moments"][i]} for i, k in enumerate(ks)]
    files["diagnose_gamma.csv"] = rows_to_csv(g_rows)

    k_min = min(int(opts["k_min"]), k_max)
    scan = angular_convergence_scan(Z, int(opts["j_max"]),
                                    np.unique(np.linspace(k_min, k_max, 20).astype(int)))
    files["diagnose_scan.csv"] = rows_to_csv(scan.rows())
    out = Path(args.out)
    emit(out, files)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    write_manifest(out, "diagnose", {"fit": config.to_dict(), **opts}, seed,
                   {"input": args.input}, files)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")


def _add_fit_flags(p):
    p.add_argument("--input", required=True, help="cycle CSV (columns M, timestamp, t1..tT)")
    p.add_argument("--months", type=lambda s: [int(m) for m in s.split(",")],
                   help="comma-separated months to keep")
    p.add_argument("--all-months", action="store_true", help="disable the season filter")
    p.add_argument("--delta", type=int)
    p.add_argument("--p", type=int, help="AR order")
    p.add_argument("--p-u", type=float, dest="p_u")
    p.add_argument("--u-ell-quantile", type=float)
    p.add_argument("--u-ell-absolute", type=float)
    p.add_argument("--J", type=lambda s: s if s == "auto" else int(s),
                   help="number of principal components, or 'auto'")
    p.add_argument("--families", type=lambda s: s.split(","))
    p.add_argument("--no-detrend", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="extremesim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic cycle dataset")
    _add_common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--coupling", type=float)
    p.add_argument("--ar-coef", type=float, dest="ar_coef")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit the model chain and write a JSON bundle")
    _add_common(p)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate a batch from a bundle")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--n-sim", type=int)
    p.add_argument("--mode", choices=["conditional", "unconditional"])
    p.add_argument("--k-nn", type=int)
    p.add_argument("--alpha", help="radius tail index, or 'hill'")
    p.add_argument("--max-rejections", type=int)
    p.add_argument("--retrend", action="store_true")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="compare a batch with the observed extremes")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--batch", required=True)
    p.add_argument("--B", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--n-trees", type=int)
    p.add_argument("--years", type=float, help="observation span, when not in timestamps")
    p.add_argument("--checks", help="comma-separated subset of checks")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("diagnose", help="write threshold, tail and PCA diagnostics")
    _add_common(p)
    _add_fit_flags(p)
    p.add_argument("--max-lag", type=int)
    p.add_argument("--j-max", type=int)
    p.set_defaults(func=cmd_diagnose)
    return parser


def _exit_code(exc) -> int:
    inner = exc.error if isinstance(exc, StageError) else exc
    return EXIT_NUMERICAL if isinstance(inner, NumericalError) else EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = read_config(args.config)
        return args.func(args, cfg)
    except (DataError, NumericalError, StageError) as exc:
        stage = exc.stage if isinstance(exc, StageError) else None
        msg = exc.error if isinstance(exc, StageError) else exc
        print(f"extremesim: error{f' [{stage}]' if stage else ''}: {msg}", file=sys.stderr)
        return _exit_code(exc)
    except TypeError as exc:
        print(f"extremesim: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
