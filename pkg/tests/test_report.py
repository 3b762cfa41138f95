import numpy as np
import pytest

from vlp_calib.services.calibration_service import plan_optimal_points
from vlp_calib.services.errors import ModelDomainError
from vlp_calib.services.report_formatter import (
    TableFormatter,
    dump_calibration,
    format_cell,
    load_calibration,
    plan_rows,
    to_csv,
)


@pytest.mark.parametrize(
    "value,expected",
    [
        (None, ""),
        (True, "true"),
        (np.bool_(False), "false"),
        (np.int64(7), "7"),
        (float("nan"), "nan"),
        (0.1 + 0.2, "0.3"),
        ("gp", "gp"),
    ],
)
def test_format_cell(value, expected):
    assert format_cell(value) == expected


def test_to_csv_is_stable():
    header, rows = plan_rows(plan_optimal_points(1.0, 3))
    first = to_csv(header, rows)
    assert first == to_csv(header, rows)
    assert first.splitlines()[0] == "index,x,y,z"
    assert first.endswith("\n") and "\r" not in first


def test_calibration_record_round_trip(tmp_path, office_calibrations):
    path = tmp_path / "led.json"
    original = office_calibrations[1]
    path.write_text(dump_calibration(original), encoding="utf-8")
    loaded = load_calibration(path)
    assert np.array_equal(loaded.c_vec, original.c_vec)
    assert np.array_equal(loaded.ggt_inverse, original.ggt_inverse)
    assert loaded.gain_hat == original.gain_hat
    assert loaded.sample_count == 36


@pytest.mark.parametrize("text", ["{", '{"led_position": [0, 0, 3]}', "[]"])
def test_load_calibration_rejects_bad_records(tmp_path, text):
    path = tmp_path / "led.json"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ModelDomainError):
        load_calibration(path)


def test_format_table():
    table = TableFormatter.format_table([(0, 1.5, None)], ["index", "x", "y"])
    assert "| index" in table
    assert " - " in table
    assert table.endswith("Total rows: 1")
    assert TableFormatter.format_table([], ["x"]) == "No data found"
