import csv
import json
import pathlib
import unittest.mock
from typing import Any, Dict

import numpy as np
import pytest

import quantrbp
import quantrbp.config
import quantrbp.designer
import quantrbp.errors
import quantrbp.harness
import quantrbp.quantizer
from tests.conftest import decode_report

_DATA = pathlib.Path(__file__).parent / "data"

_FAST_OPTIMIZER = quantrbp.designer.OptimizerSettings(
    max_evals=10, polish=False, se_t_max=20, se_fp_tol=1e-6
)


def _tiny_config(**kwargs: Any) -> quantrbp.config.ExperimentConfig:
    fields: Dict[str, Any] = {
        "n": 40,
        "beta": 2.0,
        "num_levels": 4,
        "trials": 2,
        "t_max": 3,
        "seed": 11,
    }
    fields.update(kwargs)
    return quantrbp.config.ExperimentConfig(**fields)


def test_trial_seeds_should_be_independent_of_other_trials() -> None:
    first = quantrbp.harness.trial_seeds(5, 0)
    again = quantrbp.harness.trial_seeds(5, 0)
    second = quantrbp.harness.trial_seeds(5, 1)

    assert [s.generate_state(2).tolist() for s in first] == [
        s.generate_state(2).tolist() for s in again
    ]
    assert first[0].generate_state(2).tolist() != second[0].generate_state(2).tolist()
    assert len({tuple(s.generate_state(2)) for s in first}) == 3


def test_run_experiment_should_be_reproducible() -> None:
    config = _tiny_config()

    first = quantrbp.harness.run_experiment(config)
    second = quantrbp.harness.run_experiment(config)

    assert first.to_json() == second.to_json()
    assert len(first.trials) == 2
    assert first.trials[0].mse != first.trials[1].mse


def test_run_experiment_should_not_depend_on_the_number_of_trials() -> None:
    one = quantrbp.harness.run_experiment(_tiny_config(trials=1))
    two = quantrbp.harness.run_experiment(_tiny_config(trials=2))

    assert one.trials[0] == two.trials[0]


def test_report_should_follow_the_golden_schema() -> None:
    golden = json.loads((_DATA / "golden_report.json").read_text())

    report = quantrbp.harness.run_experiment(_tiny_config(trials=1))

    decoded = decode_report(report.to_json())
    keys = golden["keys"]
    assert sorted(decoded) == keys["report"]
    assert sorted(decoded["resolved"]) == keys["resolved"]
    assert sorted(decoded["summary"]) == keys["summary"]
    assert sorted(decoded["se_trace"]) == keys["se_trace"]
    assert [sorted(trial) for trial in decoded["trials"]] == [keys["trial"]]
    assert decoded["schema_version"] == golden["schema_version"]
    assert decoded["code_version"] == quantrbp.__version__
    assert decoded["config"] == golden["config"]
    for key, value in golden["resolved"].items():
        assert decoded["resolved"][key] == value
    assert decoded["trials"][0]["seed"] == {"entropy": 11, "spawn_key": [0]}


def test_report_should_summarize_relaxed_bp_trials() -> None:
    report = quantrbp.harness.run_experiment(_tiny_config(trials=3))

    mses = [trial.mse for trial in report.trials if trial.mse is not None]
    assert len(mses) == 3
    assert report.se_trace is not None
    assert report.predicted_mse == report.se_trace.fixed_point
    assert report.median_mse == sorted(mses)[1]
    assert report.mean_mse == pytest.approx(sum(mses) / 3)
    median_db, predicted_db = report.median_mse_db, report.predicted_mse_db
    assert median_db is not None and predicted_db is not None
    assert report.gap_db == pytest.approx(median_db - predicted_db)
    assert not report.partial
    for trial in report.trials:
        assert trial.iterations == 3
        assert trial.mse_trace is not None and len(trial.mse_trace) == 4


def test_report_should_mark_failed_trials_as_partial() -> None:
    original = quantrbp.harness._reconstruct_rbp

    def fail_second(*args: Any) -> quantrbp.harness.TrialRecord:
        if args[-1] == 1:
            raise quantrbp.errors.ReconstructionError("diverged")
        return original(*args)

    with unittest.mock.patch(
        "quantrbp.harness._reconstruct_rbp", side_effect=fail_second
    ):
        report = quantrbp.harness.run_experiment(_tiny_config(trials=3))

    first, failed, third = report.trials
    assert report.partial
    assert len(report.completed) == 2
    assert failed.mse is None
    assert failed.error == {"error": "ReconstructionError", "message": "diverged"}
    assert first.mse is not None and third.mse is not None
    assert report.median_mse == pytest.approx((first.mse + third.mse) / 2)
    summary = decode_report(report.to_json())["summary"]
    assert summary["partial"] is True
    assert summary["completed"] == 2


def test_lmmse_report_should_predict_from_the_drawn_matrices() -> None:
    report = quantrbp.harness.run_experiment(_tiny_config(method="lmmse", trials=2))

    predictions = [
        trial.predicted_mse
        for trial in report.trials
        if trial.predicted_mse is not None
    ]
    assert report.se_trace is None
    assert len(predictions) == 2
    assert report.predicted_mse == pytest.approx(sum(predictions) / 2)
    assert decode_report(report.to_json())["se_trace"] is None


def test_run_experiment_should_load_a_quantizer_file(tmp_path: pathlib.Path) -> None:
    path = tmp_path / "quantizer.json"
    quantrbp.quantizer.design_uniform(8, 1.5).save(path)

    report = quantrbp.harness.run_experiment(
        _tiny_config(quantizer=str(path), trials=1)
    )

    assert report.quantizer == quantrbp.quantizer.RegularScalarQuantizer.load(path)
    assert decode_report(report.to_json())["resolved"]["num_levels"] == 8


def test_run_experiment_should_design_an_optimal_quantizer() -> None:
    config = _tiny_config(quantizer="optimal", trials=1, optimizer=_FAST_OPTIMIZER)

    report = quantrbp.harness.run_experiment(config)

    assert report.quantizer.num_levels == 4
    assert report.quantizer.levels is not None
    assert report.se_trace is not None
    assert report.trials[0].mse is not None


def _sweep_config(**kwargs: Any) -> quantrbp.config.SweepConfig:
    fields: Dict[str, Any] = {
        "rates": (1.0,),
        "combos": ("rbp:uniform", "lmmse:uniform"),
        "max_bits": 2,
        "n": 40,
        "trials": 1,
        "t_max": 3,
        "se": quantrbp.config.SeSettings(t_max=30),
        "optimizer": _FAST_OPTIMIZER,
    }
    fields.update(kwargs)
    return quantrbp.config.SweepConfig(**fields)


def test_emit_rate_sweep_should_write_a_row_per_combination(
    tmp_path: pathlib.Path,
) -> None:
    result = quantrbp.harness.emit_rate_sweep(_sweep_config(), tmp_path)

    with open(result.csv_path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert tuple(rows[0]) == quantrbp.harness.SWEEP_COLUMNS
    assert [(row["method"], row["quantizer_kind"]) for row in rows] == [
        ("rbp", "uniform"),
        ("lmmse", "uniform"),
    ]
    assert all(row["mse_db_empirical"] for row in rows)
    assert {float(row["beta"]) for row in rows} <= {1.0, 2.0}
    script = pathlib.Path(result.plot_script_path).read_text()
    assert "matplotlib" in script
    assert "rate_sweep.csv" in script
    compile(script, result.plot_script_path, "exec")


def test_emit_rate_sweep_should_put_optimal_below_uniform(
    tmp_path: pathlib.Path,
) -> None:
    config = _sweep_config(
        combos=("rbp:optimal", "rbp:uniform"), empirical=False, rates=(1.0, 1.5)
    )

    result = quantrbp.harness.emit_rate_sweep(config, tmp_path)

    assert len(result.rows) == 4
    assert all(row.mse_db_empirical is None for row in result.rows)
    by_cell = {(row.rate_x, row.quantizer_kind): row for row in result.rows}
    for rate in (1.0, 1.5):
        optimal = by_cell[rate, "optimal"].mse_db_predicted
        assert optimal <= by_cell[rate, "uniform"].mse_db_predicted
    lines = pathlib.Path(result.csv_path).read_text().splitlines()
    assert all(line.endswith(",") for line in lines[1:])


def test_emit_rate_sweep_should_keep_cells_whose_simulation_failed(
    tmp_path: pathlib.Path,
) -> None:
    failure = quantrbp.errors.ReconstructionError("no")

    with unittest.mock.patch(
        "quantrbp.harness.run_experiment", side_effect=failure
    ):
        result = quantrbp.harness.emit_rate_sweep(_sweep_config(), tmp_path)

    assert len(result.rows) == 2
    assert all(row.mse_db_empirical is None for row in result.rows)


@pytest.mark.slow
def test_relaxed_bp_should_track_state_evolution() -> None:
    config = quantrbp.config.ExperimentConfig(
        n=2000, beta=2.0, rho=0.1, sigma2=1e-5, rate_x=1.0, trials=20, t_max=20
    )

    report = quantrbp.harness.run_experiment(config)

    assert not report.partial
    assert report.gap_db is not None
    assert abs(report.gap_db) <= 1.0


@pytest.mark.slow
def test_relaxed_bp_should_beat_lmmse_by_six_decibels() -> None:
    rbp = quantrbp.config.ExperimentConfig(
        n=2000,
        beta=2.0,
        rho=0.1,
        sigma2=1e-5,
        rate_x=1.0,
        quantizer="optimal",
        trials=5,
        t_max=20,
    )
    lmmse = quantrbp.config.ExperimentConfig(
        n=2000, beta=2.0, rho=0.1, sigma2=1e-5, rate_x=1.0, trials=5, method="lmmse"
    )

    rbp_db = quantrbp.harness.run_experiment(rbp).median_mse_db
    lmmse_db = quantrbp.harness.run_experiment(lmmse).median_mse_db

    assert rbp_db is not None and lmmse_db is not None
    assert lmmse_db - rbp_db >= 6.0
    assert np.isfinite(rbp_db)
