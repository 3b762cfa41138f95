"""Command-line entry point (``vlp-calib``).

Results go to stdout (or ``--out``); logs and errors go to stderr. Exit codes:
0 success, 1 validation or parse error, 2 numerical failure.
"""

import logging
import sys
from pathlib import Path
from typing import Annotated, Callable, List, Optional

import numpy as np
import typer

from .config import get_settings
from .services.calibration_service import CalibrationSet, calibrate, plan_optimal_points, radius_sweep
from .services.dataset_service import as_arrays, parse_measurements, sample_subset
from .services.errors import NUMERICAL_ERRORS, VALIDATION_ERRORS, ModelDomainError
from .services.gp_service import gp_fit, gp_predict
from .services.localization_service import (
    LocalizationProblem,
    PositionEstimate,
    SolverOptions,
    crlb_xy,
    multilaterate,
    solve_weighted_ls,
)
from .services.report_formatter import (
    cdf_rows,
    crlb_point_rows,
    crlb_report_rows,
    dataset_rows,
    dump_calibration,
    estimate_rows,
    load_calibration,
    plan_rows,
    stats_rows,
    sweep_rows,
    to_csv,
    verification_rows,
    write_output,
)
from .services.scenario_service import resolve_scenario
from .services.simulation_service import normalise_methods, run_localization_experiment, training_size_sweep
from .services.verification_service import SUITES, run_suite

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="vlp-calib",
    help="LED tilt/gain calibration and weighted LS localization for RSS visible light positioning.",
    no_args_is_help=True,
    add_completion=False,
)

EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2

OutOption = Annotated[Optional[Path], typer.Option("--out", help="Write to this file instead of stdout")]


def _run(command: Callable[[], None]) -> None:
    """Run a command body, mapping service errors to exit codes with one line on stderr."""
    try:
        command()
    except VALIDATION_ERRORS as e:
        typer.echo(f"✗ Error: {e}", err=True)
        raise typer.Exit(EXIT_VALIDATION)
    except NUMERICAL_ERRORS as e:
        typer.echo(f"✗ Numerical failure ({type(e).__name__}): {e}", err=True)
        raise typer.Exit(EXIT_NUMERICAL)
    except (FileNotFoundError, IsADirectoryError) as e:
        typer.echo(f"✗ Error: {e}", err=True)
        raise typer.Exit(EXIT_VALIDATION)


def _parse_floats(text: str, label: str, count: Optional[int] = None) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ModelDomainError(f"{label} must be comma-separated numbers, got {text!r}")
    if count is not None and len(values) != count:
        raise ModelDomainError(f"{label} needs exactly {count} values, got {len(values)}")
    return values


def _parse_grid(text: str) -> np.ndarray:
    """LO:HI:STEP in meters, inclusive of HI."""
    lo, hi, step = _parse_floats(text.replace(":", ","), "--grid", 3)
    if not (0 < lo <= hi and step > 0):
        raise ModelDomainError(f"--grid needs 0 < LO <= HI and STEP > 0, got {text!r}")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def _emit(header, rows, out: Optional[Path]) -> None:
    write_output(to_csv(header, rows, get_settings().float_format), out)


@app.command()
def plan(
    height: Annotated[float, typer.Option("--height", help="LED height h above the ground (m)")],
    count: Annotated[int, typer.Option("--count", help="Number of calibration points N (>= 3)")],
    phase: Annotated[float, typer.Option("--phase", help="Angular offset of the first point (rad)")] = 0.0,
    led_x: Annotated[Optional[float], typer.Option("--led-x", help="Shift points under an LED at this x")] = None,
    led_y: Annotated[Optional[float], typer.Option("--led-y", help="Shift points under an LED at this y")] = None,
    out: OutOption = None,
):
    """Optimal calibration points: N points evenly spaced on a circle of radius ~0.55h."""
    def body():
        result = plan_optimal_points(height, count, phase)
        led_xy = None if led_x is None and led_y is None else (led_x or 0.0, led_y or 0.0)
        _emit(*plan_rows(result, led_xy), out)
    _run(body)


@app.command("calibrate")
def calibrate_command(
    data: Annotated[Path, typer.Option("--data", help="Measurement CSV (point_id,x,y,z,rss_0..)")],
    led_index: Annotated[int, typer.Option("--led-index", help="RSS column of the LED")],
    led_x: Annotated[float, typer.Option("--led-x")],
    led_y: Annotated[float, typer.Option("--led-y")],
    led_z: Annotated[float, typer.Option("--led-z")],
    subset_seed: Annotated[Optional[int], typer.Option("--subset-seed", help="Seed of the uniform subset draw")] = None,
    subset_size: Annotated[Optional[int], typer.Option("--subset-size", help="Calibrate on this many points")] = None,
    out: OutOption = None,
):
    """Estimate tilt, gain and noise variance of one LED; prints a JSON calibration record."""
    def body():
        records = parse_measurements(data)
        if subset_size is not None:
            seed = get_settings().seed if subset_seed is None else subset_seed
            records, _ = sample_subset(records, subset_size, seed)
        positions, rss = as_arrays(records)
        if not 0 <= led_index < rss.shape[1]:
            raise ModelDomainError(f"--led-index must be in 0..{rss.shape[1] - 1}, got {led_index}")
        result = calibrate(CalibrationSet(
            led_position=np.array([led_x, led_y, led_z]), pd_positions=positions, rss=rss[:, led_index],
        ))
        logger.info("✓ Calibrated LED %d: gain=%.6g tilt=%.3f deg", led_index, result.gain_hat, result.tilt_deg[0])
        write_output(dump_calibration(result), out)
    _run(body)


def _solver_options() -> SolverOptions:
    settings = get_settings()
    return SolverOptions(grad_tol=settings.grad_tol, max_iters=settings.max_iters)


@app.command()
def localize(
    calib: Annotated[List[Path], typer.Option("--calib", help="Calibration record per LED, in RSS order")],
    rss: Annotated[str, typer.Option("--rss", help="Comma-separated RSS values V0,V1,...")],
    method: Annotated[str, typer.Option("--method", help="wls, multilateration or gp")] = "wls",
    data: Annotated[Optional[Path], typer.Option("--data", help="Training measurements for gp")] = None,
    strict: Annotated[bool, typer.Option("--strict", help="Exit 2 when the solver does not converge")] = False,
    out: OutOption = None,
):
    """Estimate the ground position of one RSS reading."""
    def body():
        calibrations = [load_calibration(path) for path in calib]
        values = _parse_floats(rss, "--rss", len(calibrations))
        key = normalise_methods([method])[0]
        if key == "gp":
            if data is None:
                raise ModelDomainError("--method gp needs --data with training measurements")
            positions, training_rss = as_arrays(parse_measurements(data))
            x, y = gp_predict(gp_fit(training_rss, positions[:, :2]), values)
            estimate = PositionEstimate((x, y), float("nan"), 0, True, "gp")
        else:
            problem = LocalizationProblem(calibrations, np.array(values))
            if key == "multilateration":
                estimate = multilaterate(problem)
            else:
                estimate = solve_weighted_ls(problem, _solver_options())
                if strict and not estimate.converged:
                    typer.echo(
                        f"✗ Numerical failure: weighted LS did not converge in {estimate.iterations} iterations",
                        err=True,
                    )
                    raise typer.Exit(EXIT_NUMERICAL)
        _emit(*estimate_rows(estimate), out)
    _run(body)


@app.command()
def crlb(
    calib: Annotated[List[Path], typer.Option("--calib", help="Calibration record per LED")],
    at: Annotated[str, typer.Option("--at", help="Ground position X,Y")],
    exclude_variance_term: Annotated[
        bool, typer.Option("--exclude-variance-term", help="Drop the variance-gradient term of the FIM")
    ] = False,
    out: OutOption = None,
):
    """Cramer-Rao bound on the x-y position error at one ground point."""
    def body():
        calibrations = [load_calibration(path) for path in calib]
        point = _parse_floats(at, "--at", 2)
        problem = LocalizationProblem(calibrations, np.zeros(len(calibrations)))
        report = crlb_xy(problem, point, include_variance_term=not exclude_variance_term)
        _emit(*crlb_report_rows(report, point), out)
    _run(body)


@app.command("sweep-radius")
def sweep_radius(
    height: Annotated[float, typer.Option("--height")],
    count: Annotated[int, typer.Option("--count")],
    sigma2: Annotated[float, typer.Option("--sigma2", help="Noise variance")],
    grid: Annotated[Optional[str], typer.Option("--grid", help="LO:HI:STEP in meters (default 0.05h:1.5h:0.01h)")] = None,
    out: OutOption = None,
):
    """Sum MSE of N evenly spaced calibration points against the circle radius."""
    def body():
        if not height > 0:
            raise ModelDomainError(f"--height must be positive, got {height}")
        radii = None if grid is None else _parse_grid(grid)
        _emit(*sweep_rows(radius_sweep(height, count, sigma2, radii)), out)
    _run(body)


@app.command()
def simulate(
    scenario: Annotated[str, typer.Option("--scenario", help="Scenario file or bundled name")] = "office",
    methods: Annotated[str, typer.Option("--methods")] = "wls,gp,multilateration",
    training_size: Annotated[
        Optional[str], typer.Option("--training-size", help="Training points; comma list for a dataset sweep")
    ] = None,
    trials: Annotated[int, typer.Option("--trials", min=1)] = 10,
    seed: Annotated[Optional[int], typer.Option("--seed")] = None,
    workers: Annotated[Optional[int], typer.Option("--workers", min=1)] = None,
    dataset: Annotated[Optional[Path], typer.Option("--dataset", help="Replay a measurement file")] = None,
    draws: Annotated[int, typer.Option("--draws", min=1, help="Subset draws per training size")] = 50,
    out: Annotated[Optional[Path], typer.Option("--out", help="Directory for stats.csv, cdf.csv, crlb.csv")] = None,
):
    """Localization experiment on a scenario, or replay of a measurement dataset."""
    def body():
        settings = get_settings()
        run_seed = settings.seed if seed is None else seed
        run_workers = settings.workers if workers is None else workers
        method_list = normalise_methods(m for m in methods.split(",") if m.strip())
        sizes = None if training_size is None else [int(v) for v in _parse_floats(training_size, "--training-size")]
        resolved = resolve_scenario(scenario)

        if dataset is not None:
            reports = training_size_sweep(
                parse_measurements(dataset), resolved, sizes or [9], draws, run_seed, run_workers, method_list,
                _solver_options(),
            )
            _emit(*dataset_rows(reports), None if out is None else _in_dir(out, "dataset.csv"))
            return

        if sizes is not None and len(sizes) != 1:
            raise ModelDomainError("--training-size takes one value without --dataset")
        report = run_localization_experiment(
            resolved, method_list, None if sizes is None else sizes[0], trials, run_seed, run_workers,
            _solver_options(),
        )
        if out is None:
            # stats, a blank line, then the CDF
            fmt = settings.float_format
            write_output(
                to_csv(*stats_rows(report.stats, report.failures), fmt) + "\n" + to_csv(*cdf_rows(report.stats), fmt)
            )
            return
        _emit(*stats_rows(report.stats, report.failures), _in_dir(out, "stats.csv"))
        _emit(*cdf_rows(report.stats), _in_dir(out, "cdf.csv"))
        _emit(*crlb_point_rows(report), _in_dir(out, "crlb.csv"))
        logger.info("✓ Wrote stats.csv, cdf.csv and crlb.csv to %s", out)
    _run(body)


def _in_dir(directory: Path, name: str) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    return directory / name


@app.command()
def verify(
    suite: Annotated[str, typer.Option("--suite", help=f"One of: {', '.join(SUITES)}")],
    seed: Annotated[Optional[int], typer.Option("--seed")] = None,
    trials: Annotated[Optional[int], typer.Option("--trials", min=2, help="Monte Carlo trials")] = None,
    workers: Annotated[Optional[int], typer.Option("--workers", min=1)] = None,
    out: OutOption = None,
):
    """Monte Carlo and closed-form checks; exits 2 when any check fails."""
    def body():
        settings = get_settings()
        checks = run_suite(
            suite, settings.seed if seed is None else seed, trials, settings.workers if workers is None else workers
        )
        _emit(*verification_rows(suite, checks), out)
        if not all(c.passed for c in checks):
            raise typer.Exit(EXIT_NUMERICAL)
    _run(body)


def main():
    settings = get_settings()
    logging.basicConfig(stream=sys.stderr, level=settings.log_level.upper(), format="%(message)s")
    app()


if __name__ == "__main__":
    main()
