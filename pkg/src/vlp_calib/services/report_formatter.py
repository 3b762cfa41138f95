"""
Report formatting service.

This service handles:
- Plot-ready CSV output (plans, sweeps, error statistics, CDFs, CRLB per point)
- JSON calibration records that round-trip ``LedCalibration``
- Fixed-width text tables for the tool server and ``verify``
"""

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .calibration_service import CalibrationPlan, LedCalibration
from .errors import ModelDomainError
from .localization_service import CrlbReport, PositionEstimate
from .simulation_service import DatasetExperimentReport, LocalizationExperimentReport
from .verification_service import VerificationCheck

Row = Sequence[Any]


def format_cell(value: Any, float_format: str = ".12g") -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        return format(float(value), float_format)
    return str(value)


def to_csv(header: Sequence[str], rows: Iterable[Row], float_format: str = ".12g") -> str:
    """CSV text with ``\\n`` line endings; identical inputs give identical bytes."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v, float_format) for v in row])
    return buffer.getvalue()


def plan_rows(plan: CalibrationPlan, led_xy: Optional[Sequence[float]] = None) -> Tuple[List[str], List[Row]]:
    points = plan.points if led_xy is None else plan.world_points(led_xy)
    return ["index", "x", "y", "z"], [(i, p[0], p[1], p[2]) for i, p in enumerate(points)]


def sweep_rows(curve: Sequence[Tuple[float, float]]) -> Tuple[List[str], List[Row]]:
    return ["radius", "sum_mse"], [tuple(point) for point in curve]


def estimate_rows(estimate: PositionEstimate) -> Tuple[List[str], List[Row]]:
    return (
        ["method", "x", "y", "objective_value", "weights", "iterations", "converged"],
        [(estimate.method_tag, estimate.xy[0], estimate.xy[1], estimate.objective_value, estimate.weights,
          estimate.iterations, estimate.converged)],
    )


def crlb_report_rows(report: CrlbReport, at: Sequence[float]) -> Tuple[List[str], List[Row]]:
    cov = report.covariance_bound
    return (
        ["x", "y", "crlb_xy", "var_x", "var_y", "var_z", "cov_xy"],
        [(at[0], at[1], report.crlb_xy, cov[0, 0], cov[1, 1], cov[2, 2], cov[0, 1])],
    )


def stats_rows(stats: dict, failures: Optional[dict] = None) -> Tuple[List[str], List[Row]]:
    rows = []
    for method, s in stats.items():
        failed = (failures or {}).get(method, 0)
        if s is None:
            rows.append((method, float("nan"), float("nan"), float("nan"), 0, None, failed))
            continue
        rows.append((method, s.p50, s.p99, s.rmse, s.count, s.improvement_rate_vs, failed))
    return ["method", "p50", "p99", "rmse", "count", "improvement_rate_vs_gp", "failures"], rows


def cdf_rows(stats: dict) -> Tuple[List[str], List[Row]]:
    rows = [(method, e, f) for method, s in stats.items() if s is not None for e, f in s.cdf]
    return ["method", "error", "fraction"], rows


def crlb_point_rows(report: LocalizationExperimentReport) -> Tuple[List[str], List[Row]]:
    return (
        ["point_id", "x", "y", "crlb_xy", "wls_rmse"],
        [(p.point_id, p.x, p.y, p.crlb_xy, p.wls_rmse) for p in report.crlb],
    )


def dataset_rows(reports: Sequence[DatasetExperimentReport]) -> Tuple[List[str], List[Row]]:
    """P50/P99 over the pooled test errors of every draw, per training size and method."""
    rows = []
    for report in reports:
        gp = report.pooled("gp") if "gp" in report.methods else None
        reference = gp.p50 if gp is not None else float("nan")
        for method in report.methods:
            pooled = report.pooled(method)
            p50, p99 = (pooled.p50, pooled.p99) if pooled is not None else (float("nan"), float("nan"))
            rate = (reference - p50) / reference if reference > 0 else None
            crlb = float(np.nanmedian([d.crlb_p50 for d in report.draws])) if report.draws else float("nan")
            rows.append((report.training_size, method, p50, p99, len(report.draws), rate, crlb))
    return ["training_size", "method", "p50", "p99", "draws", "improvement_rate_vs_gp", "crlb_p50"], rows


def verification_rows(suite: str, checks: Sequence[VerificationCheck]) -> Tuple[List[str], List[Row]]:
    return (
        ["suite", "check", "measured", "expected", "tolerance", "passed", "detail"],
        [(suite, c.name, c.measured, c.expected, c.tolerance, c.passed, c.detail) for c in checks],
    )


def write_output(text: str, out: Optional[Union[str, Path]] = None) -> None:
    """Write to ``out`` when given, otherwise to stdout."""
    if out is None:
        print(text, end="")
        return
    Path(out).write_text(text, encoding="utf-8")


class LedCalibrationRecord(BaseModel):
    """JSON form of a calibrated LED."""
    model_config = ConfigDict(extra="forbid")

    led_position: Tuple[float, float, float]
    c_vec: Tuple[float, float, float]
    normal_hat: Tuple[float, float, float]
    gain_hat: float = Field(gt=0)
    sigma2_hat: float = Field(ge=0)
    ggt_inverse: List[List[float]]
    sample_count: int = 0
    no_tilt_gain: Optional[float] = None
    tilt_polar_deg: Optional[float] = None
    tilt_azimuth_deg: Optional[float] = None

    @classmethod
    def from_calibration(cls, cal: LedCalibration) -> "LedCalibrationRecord":
        polar, azimuth = cal.tilt_deg
        return cls(
            led_position=tuple(float(v) for v in cal.led_position),
            c_vec=tuple(float(v) for v in cal.c_vec),
            normal_hat=tuple(float(v) for v in cal.normal_hat),
            gain_hat=float(cal.gain_hat),
            sigma2_hat=float(cal.sigma2_hat),
            ggt_inverse=np.asarray(cal.ggt_inverse, dtype=float).tolist(),
            sample_count=int(cal.sample_count),
            no_tilt_gain=None if cal.no_tilt_gain is None else float(cal.no_tilt_gain),
            tilt_polar_deg=polar,
            tilt_azimuth_deg=azimuth,
        )

    def to_calibration(self) -> LedCalibration:
        ggt_inverse = np.array(self.ggt_inverse, dtype=float)
        if ggt_inverse.shape != (3, 3):
            raise ModelDomainError(f"ggt_inverse must be 3 x 3, got shape {ggt_inverse.shape}")
        return LedCalibration(
            led_position=np.array(self.led_position),
            c_vec=np.array(self.c_vec),
            normal_hat=np.array(self.normal_hat),
            gain_hat=self.gain_hat,
            sigma2_hat=self.sigma2_hat,
            ggt_inverse=ggt_inverse,
            sample_count=self.sample_count,
            no_tilt_gain=self.no_tilt_gain,
        )


def dump_calibration(cal: LedCalibration) -> str:
    """Calibration as JSON; floats keep full precision."""
    return LedCalibrationRecord.from_calibration(cal).model_dump_json(indent=2) + "\n"


def load_calibration(path: Union[str, Path]) -> LedCalibration:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return LedCalibrationRecord.model_validate(raw).to_calibration()
    except (OSError, json.JSONDecodeError) as e:
        raise ModelDomainError(f"cannot read calibration record {path}: {e}")
    except ValidationError as e:
        raise ModelDomainError(f"invalid calibration record {path}: {e}")


class TableFormatter:
    """Fixed-width text tables for language models and terminals."""

    MAX_ROWS = 100

    @staticmethod
    def format_table(rows: Sequence[Row], column_names: Sequence[str], float_format: str = ".6g") -> str:
        if not rows:
            return "No data found"
        cells = [[format_cell(v, float_format) or "-" for v in row] for row in rows]
        col_widths = [max(8, len(name), *(len(row[i]) for row in cells)) for i, name in enumerate(column_names)]

        separator = "+" + "+".join("-" * (width + 2) for width in col_widths) + "+"
        output = [separator]
        output.append("|" + "|".join(f" {name:<{col_widths[i]}} " for i, name in enumerate(column_names)) + "|")
        output.append(separator)
        for row in cells[: TableFormatter.MAX_ROWS]:
            output.append("|" + "|".join(f" {val:<{col_widths[i]}} " for i, val in enumerate(row)) + "|")
        if len(cells) > TableFormatter.MAX_ROWS:
            output.append(f"... and {len(cells) - TableFormatter.MAX_ROWS} more rows")
        output.append(separator)
        output.append(f"Total rows: {len(rows)}")
        return "\n".join(output)
