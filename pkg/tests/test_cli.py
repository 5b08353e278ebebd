import csv
import json

import numpy as np
import pytest

from extremesim import cli
from extremesim.errors import NumericalError
from extremesim.pipeline import FittedModels, observed_extremes
from extremesim.dataset import load_dataset

FIT_FLAGS = ["--all-months", "--delta", "1", "--J", "2", "--families", "independence,gaussian"]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--out", str(root / "d"), "--n", "2000", "--T", "10",
                     "--seed", "3"]) == 0
    assert cli.main(["fit", "--input", str(root / "d/data.csv"), "--out", str(root / "f")]
                    + FIT_FLAGS) == 0
    return root


def test_fit_outputs_and_manifest(work):
    files = {p.name for p in (work / "f").iterdir()}
    assert {"model.json", "fit_manifest.json", "fit_margins.csv", "fit_vine.csv"} <= files
    m = json.loads((work / "f/fit_manifest.json").read_text())
    assert m["config"]["fit"]["delta"] == 1 and m["config"]["fit"]["months"] is None
    assert len(m["inputs"]["input"]["sha256"]) == 64
    assert not list((work / "f").glob(".*"))
    FittedModels.from_json((work / "f/model.json").read_text())


def test_fit_rerun_is_byte_identical(work, tmp_path):
    assert cli.main(["fit", "--input", str(work / "d/data.csv"), "--out", str(tmp_path)]
                    + FIT_FLAGS) == 0
    for name in ("model.json", "fit_manifest.json"):
        assert (tmp_path / name).read_bytes() == (work / "f" / name).read_bytes()


def test_config_precedence(work, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"fit": {"delta": 2, "p_u": 0.15}}))
    assert cli.main(["fit", "--input", str(work / "d/data.csv"), "--out", str(tmp_path / "o"),
                     "--config", str(conf)] + FIT_FLAGS) == 0
    fit = json.loads((tmp_path / "o/fit_manifest.json").read_text())["config"]["fit"]
    assert fit["delta"] == 1  # flag wins over file
    assert fit["p_u"] == 0.15  # file wins over default
    assert fit["u_ell_quantile"] == 0.95


def test_bad_config_is_a_data_error(work, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"fit": {"deltaa": 2}}))
    assert cli.main(["fit", "--input", str(work / "d/data.csv"), "--out", str(tmp_path),
                     "--config", str(conf)]) == 2
    conf.write_text("{not json")
    assert cli.main(["fit", "--input", str(work / "d/data.csv"), "--out", str(tmp_path),
                     "--config", str(conf)]) == 2


def test_missing_input_names_the_stage(tmp_path, capsys):
    assert cli.main(["fit", "--input", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2
    assert "[dataset]" in capsys.readouterr().err


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as e:
        cli.main(["fit", "--out", "x"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 1


def _read_batch(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_smoke_and_determinism(work, tmp_path):
    model = str(work / "f/model.json")
    assert cli.main(["simulate", "--model", model, "--out", str(tmp_path / "one"),
                     "--n-sim", "1"]) == 0
    assert len(_read_batch(tmp_path / "one/batch.csv")) == 2
    args = ["simulate", "--model", model, "--n-sim", "50", "--seed", "9"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    for name in ("batch.csv", "simulate_manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    m = json.loads((tmp_path / "a/simulate_manifest.json").read_text())
    assert m["seed"] == 9 and m["config"]["n_sim"] == 50


def test_simulate_unconditional_and_retrend(work, tmp_path):
    assert cli.main(["simulate", "--model", str(work / "f/model.json"), "--out", str(tmp_path),
                     "--n-sim", "5", "--mode", "unconditional", "--retrend"]) == 0
    head = _read_batch(tmp_path / "batch.csv")[0]
    assert head[:5] == ["draw", "radius", "rejections", "init_index", "M"]
    m = json.loads((tmp_path / "simulate_manifest.json").read_text())
    assert m["config"]["config"]["sampling_mode"] == "unconditional"


def test_numerical_failure_exit_3(work, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("singular")
    monkeypatch.setattr(cli, "simulate_batch", boom)
    assert cli.main(["simulate", "--model", str(work / "f/model.json"),
                     "--out", str(tmp_path)]) == 3


def test_bundle_version_mismatch(work, tmp_path):
    d = json.loads((work / "f/model.json").read_text())
    d["schema_version"] = 99
    bad = tmp_path / "m.json"
    bad.write_text(json.dumps(d))
    assert cli.main(["simulate", "--model", str(bad), "--out", str(tmp_path)]) == 2


def _write_batch(path, series, M=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["draw", "radius", "rejections", "init_index"] + (["M"] if M is not None else [])
        w.writerow(head + [f"t{t + 1}" for t in range(series.shape[1])])
        for i, row in enumerate(series):
            extra = [int(M[i])] if M is not None else []
            w.writerow([i, 1.0, 0, 0] + extra + list(row))


VAL_FLAGS = ["--B", "100", "--reps", "10", "--n-trees", "30"]


def test_validate_self_resampled_observations_pass(work, tmp_path):
    models = FittedModels.from_json((work / "f/model.json").read_text())
    obs = observed_extremes(load_dataset(work / "d/data.csv"), models)
    rng = np.random.default_rng(0)
    _write_batch(tmp_path / "b.csv", obs.extremes[rng.integers(obs.extremes.shape[0], size=1000)])
    code = cli.main(["validate", "--model", str(work / "f/model.json"),
                     "--input", str(work / "d/data.csv"), "--batch", str(tmp_path / "b.csv"),
                     "--out", str(tmp_path / "v")] + VAL_FLAGS)
    report = json.loads((tmp_path / "v/report.json").read_text())
    assert code == 0 and report["passed"]
    assert {"bands", "extremogram", "pca_ks", "chi", "cost",
            "classification_logistic_raw"} <= set(report["checks"])
    assert any(k.startswith("return_levels_t") for k in report["checks"])
    assert (tmp_path / "v/validate_bands.csv").exists()


def test_validate_shifted_batch_fails_with_exit_4(work, tmp_path):
    models = FittedModels.from_json((work / "f/model.json").read_text())
    obs = observed_extremes(load_dataset(work / "d/data.csv"), models)
    _write_batch(tmp_path / "b.csv", obs.extremes + 5 * obs.extremes.std(axis=0))
    code = cli.main(["validate", "--model", str(work / "f/model.json"),
                     "--input", str(work / "d/data.csv"), "--batch", str(tmp_path / "b.csv"),
                     "--out", str(tmp_path / "v"), "--checks", "bands"] + VAL_FLAGS)
    assert code == 4


def test_validate_retrended_batch_is_detrended(work, tmp_path):
    models = FittedModels.from_json((work / "f/model.json").read_text())
    obs = observed_extremes(load_dataset(work / "d/data.csv"), models)
    M = np.full(obs.extremes.shape[0], 1000)
    _write_batch(tmp_path / "b.csv", obs.extremes + np.outer(M, models.trend.slope), M)
    code = cli.main(["validate", "--model", str(work / "f/model.json"),
                     "--input", str(work / "d/data.csv"), "--batch", str(tmp_path / "b.csv"),
                     "--out", str(tmp_path / "v"), "--checks", "bands"] + VAL_FLAGS)
    assert code == 0


def test_validate_empty_batch(work, tmp_path):
    _write_batch(tmp_path / "b.csv", np.empty((0, 10)))
    assert cli.main(["validate", "--model", str(work / "f/model.json"),
                     "--input", str(work / "d/data.csv"), "--batch", str(tmp_path / "b.csv"),
                     "--out", str(tmp_path / "v")]) == 2


def test_diagnose_tables(work, tmp_path):
    assert cli.main(["diagnose", "--input", str(work / "d/data.csv"), "--out", str(tmp_path),
                     "--all-months", "--delta", "1", "--max-lag", "5"]) == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"diagnose_acf.csv", "diagnose_thresholds.csv", "diagnose_gamma.csv",
            "diagnose_scan.csv", "diagnose_manifest.json"} <= names
    gamma = _read_batch(tmp_path / "diagnose_gamma.csv")
    assert gamma[0] == ["series", "k", "hill", "mle", "moments"]
    assert {r[0] for r in gamma[1:]} == {"raw", "transformed"}
    scan = _read_batch(tmp_path / "diagnose_scan.csv")
    assert {int(r[1]) for r in scan[1:]} == set(range(1, 9))


def test_atomic_write_replaces_file(tmp_path):
    target = tmp_path / "x.txt"
    cli.atomic_write(target, "old")
    cli.atomic_write(target, "new")
    assert target.read_text() == "new"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]
