import csv
import io
import os
from unittest.mock import patch

import numpy as np
import pytest
from typer.testing import CliRunner

from vlp_calib.config import get_settings
from vlp_calib.main import EXIT_NUMERICAL, EXIT_VALIDATION, app
from vlp_calib.services.channel_model import NoiseSpec, gaussian_draws
from vlp_calib.services.dataset_service import MeasurementRecord, write_measurements
from vlp_calib.services.scenario_service import ScenarioDocument, TrajectoryDocument, dump_document

from conftest import OFFICE_POSITIONS, clean_rss

runner = CliRunner()


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def measurements(tmp_path, office_leds, ground_grid):
    rss = np.column_stack([clean_rss(led, ground_grid) for led in office_leds])
    rss = rss + gaussian_draws(NoiseSpec(1e-5, 3), (0,), rss.shape)
    records = [
        MeasurementRecord(point_id=i, x=p[0], y=p[1], z=0.0, rss=tuple(rss[i]))
        for i, p in enumerate(ground_grid)
    ]
    path = tmp_path / "measurements.csv"
    write_measurements(records, path)
    return path


@pytest.mark.parametrize("seed", [1, 7, 2024])
def test_settings_cache(seed: int) -> None:
    with patch.dict(os.environ, {"VLP_SEED": str(seed)}):
        lhs = get_settings()
        rhs = get_settings()
        assert lhs is rhs
        assert lhs.seed == seed


def test_invalid_settings() -> None:
    with patch.dict(os.environ, {"VLP_WORKERS": "0"}):
        with pytest.raises(ValueError):
            get_settings()


def test_plan() -> None:
    result = runner.invoke(app, ["plan", "--height", "1", "--count", "4"])
    assert result.exit_code == 0
    rows = _rows(result.stdout)
    assert len(rows) == 4
    radii = [np.hypot(float(r["x"]), float(r["y"])) for r in rows]
    assert radii == pytest.approx([0.550251] * 4, abs=1e-6)


def test_plan_under_led() -> None:
    result = runner.invoke(app, ["plan", "--height", "4", "--count", "5", "--led-x", "2", "--led-y", "6"])
    assert result.exit_code == 0
    first = _rows(result.stdout)[0]
    assert float(first["x"]) == pytest.approx(2 + 4 * 0.550251, abs=1e-5)
    assert float(first["y"]) == pytest.approx(6.0)


def test_plan_rejects_too_few_points() -> None:
    result = runner.invoke(app, ["plan", "--height", "1", "--count", "2"])
    assert result.exit_code == EXIT_VALIDATION


def test_sweep_radius() -> None:
    result = runner.invoke(app, ["sweep-radius", "--height", "4", "--count", "5", "--sigma2", "1e-6"])
    assert result.exit_code == 0
    rows = _rows(result.stdout)
    best = min(rows, key=lambda r: float(r["sum_mse"]))
    assert float(best["radius"]) == pytest.approx(2.201, rel=0.02)


def test_sweep_radius_grid(tmp_path) -> None:
    out = tmp_path / "sweep.csv"
    result = runner.invoke(
        app, ["sweep-radius", "--height", "2", "--count", "6", "--sigma2", "1e-8", "--grid", "0.5:1.5:0.25", "--out", str(out)]
    )
    assert result.exit_code == 0
    assert [float(r["radius"]) for r in _rows(out.read_text())] == [0.5, 0.75, 1.0, 1.25, 1.5]


def test_calibrate_localize_and_crlb(tmp_path, measurements, office_leds) -> None:
    records = []
    for index, (x, y, z) in enumerate(OFFICE_POSITIONS):
        path = tmp_path / f"led{index}.json"
        result = runner.invoke(app, [
            "calibrate", "--data", str(measurements), "--led-index", str(index),
            "--led-x", str(x), "--led-y", str(y), "--led-z", str(z), "--out", str(path),
        ])
        assert result.exit_code == 0, result.output
        records += ["--calib", str(path)]

    probe = np.array([[0.5, 4.5, 0.0]])
    rss = ",".join(repr(float(clean_rss(led, probe)[0])) for led in office_leds)
    result = runner.invoke(app, ["localize", *records, "--rss", rss])
    assert result.exit_code == 0, result.output
    row = _rows(result.stdout)[0]
    assert row["method"] == "weighted_ls"
    assert np.hypot(float(row["x"]) - 0.5, float(row["y"]) - 4.5) < 0.01

    result = runner.invoke(app, ["crlb", *records, "--at", "0.5,4.5"])
    assert result.exit_code == 0, result.output
    assert float(_rows(result.stdout)[0]["crlb_xy"]) > 0

    result = runner.invoke(app, ["localize", *records, "--rss", "0,0,0,0"])
    assert result.exit_code == EXIT_NUMERICAL


def test_localize_rss_count_mismatch(tmp_path, measurements) -> None:
    path = tmp_path / "led0.json"
    runner.invoke(app, [
        "calibrate", "--data", str(measurements), "--led-index", "0",
        "--led-x", "-2", "--led-y", "6", "--led-z", "4", "--out", str(path),
    ])
    result = runner.invoke(app, ["localize", "--calib", str(path), "--rss", "0.1,0.2"])
    assert result.exit_code == EXIT_VALIDATION


def test_calibrate_collinear_points_is_numerical_failure(tmp_path) -> None:
    path = tmp_path / "line.csv"
    write_measurements(
        [MeasurementRecord(point_id=i, x=float(i), y=0.0, z=0.0, rss=(0.01,)) for i in range(1, 6)], path
    )
    result = runner.invoke(app, [
        "calibrate", "--data", str(path), "--led-index", "0", "--led-x", "0", "--led-y", "0", "--led-z", "3",
    ])
    assert result.exit_code == EXIT_NUMERICAL


def test_calibrate_bad_file(tmp_path) -> None:
    path = tmp_path / "bad.csv"
    path.write_text("point_id,x,y,z,rss_0\n0,1,oops,0,0.1\n", encoding="utf-8")
    result = runner.invoke(app, [
        "calibrate", "--data", str(path), "--led-index", "0", "--led-x", "0", "--led-y", "0", "--led-z", "3",
    ])
    assert result.exit_code == EXIT_VALIDATION
    assert "row 1" in result.output


def test_simulate_is_deterministic(tmp_path) -> None:
    scenario = tmp_path / "small.yaml"
    document = ScenarioDocument(trajectory=TrajectoryDocument(points=[(0.0, 1.0), (1.0, 4.0), (-2.0, 6.5)]))
    scenario.write_text(dump_document(document), encoding="utf-8")
    args = ["simulate", "--scenario", str(scenario), "--methods", "wls,multilateration", "--trials", "2", "--seed", "5"]
    first = runner.invoke(app, args)
    second = runner.invoke(app, args)
    assert first.exit_code == 0, first.output
    assert first.stdout == second.stdout
    stats, cdf = first.stdout.split("\n\n")
    assert [r["method"] for r in _rows(stats)] == ["weighted_ls", "multilateration"]
    fractions = [float(r["fraction"]) for r in _rows(cdf) if r["method"] == "weighted_ls"]
    assert fractions == sorted(fractions)
    assert fractions[-1] == pytest.approx(1.0)

    out = tmp_path / "results"
    result = runner.invoke(app, [*args, "--out", str(out)])
    assert result.exit_code == 0
    assert {p.name for p in out.iterdir()} == {"stats.csv", "cdf.csv", "crlb.csv"}
    assert len(_rows((out / "crlb.csv").read_text())) == 3


def test_simulate_unknown_scenario() -> None:
    result = runner.invoke(app, ["simulate", "--scenario", "nowhere", "--trials", "1"])
    assert result.exit_code == EXIT_VALIDATION


def test_verify_unknown_suite() -> None:
    result = runner.invoke(app, ["verify", "--suite", "prop9"])
    assert result.exit_code == EXIT_VALIDATION


def test_simulate_dataset_sweep(tmp_path, measurements) -> None:
    out = tmp_path / "replay"
    result = runner.invoke(app, [
        "simulate", "--scenario", "office", "--dataset", str(measurements), "--methods", "wls,multilateration",
        "--training-size", "9,16", "--draws", "2", "--seed", "3", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    rows = _rows((out / "dataset.csv").read_text())
    assert [(r["training_size"], r["method"]) for r in rows] == [
        ("9", "weighted_ls"), ("9", "multilateration"), ("16", "weighted_ls"), ("16", "multilateration"),
    ]
    assert all(r["draws"] == "2" for r in rows)
    assert all(float(r["p50"]) < 0.05 for r in rows if r["method"] == "weighted_ls")
