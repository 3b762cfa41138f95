"""
Measurement dataset service.

This service handles:
- Parsing measurement CSV files with the header ``point_id,x,y,z,rss_0..rss_{L-1}``
- Writing the same schema back out
- Seeded uniform subsets used for calibration / GP training
- The one-time column mapping from the published dataset's native layout
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from .channel_model import noise_generator
from .errors import DatasetParseError

logger = logging.getLogger(__name__)

BASE_COLUMNS = ("point_id", "x", "y", "z")
GROUND_TOLERANCE = 1e-9
SUBSET_STREAM = 4


@dataclass(frozen=True)
class MeasurementRecord:
    """One PD placement: exact ground coordinates and one RSS value per LED."""
    point_id: int
    x: float
    y: float
    z: float
    rss: Tuple[float, ...]

    @property
    def position(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y, self.z])


def rss_columns(led_count: int) -> List[str]:
    return [f"rss_{i}" for i in range(led_count)]


def _parse_number(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DatasetParseError(f"non-numeric cell {text!r}", row=row, column=column)
    if not math.isfinite(value):
        raise DatasetParseError(f"non-finite cell {text!r}", row=row, column=column)
    return value


def parse_measurements(path: Union[str, Path]) -> List[MeasurementRecord]:
    """Read and validate a measurement file; rows are numbered from 1 after the header."""
    path = Path(path)
    if not path.exists():
        raise DatasetParseError(f"measurement file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as file:
        reader = csv.reader(file)
        header = next(reader, None)
        if not header:
            raise DatasetParseError(f"measurement file is empty: {path}")
        header = [name.strip() for name in header]
        missing = [name for name in BASE_COLUMNS if name not in header]
        if missing:
            raise DatasetParseError(f"missing columns {missing}", row=0)
        led_count = sum(1 for name in header if name.startswith("rss_"))
        expected_rss = rss_columns(led_count)
        if led_count == 0 or [name for name in header if name.startswith("rss_")] != expected_rss:
            raise DatasetParseError("RSS columns must be rss_0..rss_{L-1} in order", row=0)
        index = {name: header.index(name) for name in (*BASE_COLUMNS, *expected_rss)}

        records = []
        for row_number, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DatasetParseError(
                    f"expected {len(header)} cells, found {len(row)} (inconsistent LED count)", row=row_number
                )
            point_id_text = row[index["point_id"]].strip()
            point_id = _parse_number(point_id_text, row_number, "point_id")
            if point_id != int(point_id):
                raise DatasetParseError(f"point_id must be an integer, got {point_id_text!r}", row=row_number, column="point_id")
            x, y, z = (_parse_number(row[index[c]], row_number, c) for c in ("x", "y", "z"))
            if abs(z) > GROUND_TOLERANCE:
                raise DatasetParseError(f"z must be 0 (ground plane), got {z}", row=row_number, column="z")
            rss = tuple(_parse_number(row[index[c]], row_number, c) for c in expected_rss)
            records.append(MeasurementRecord(point_id=int(point_id), x=x, y=y, z=z, rss=rss))

    if not records:
        raise DatasetParseError(f"measurement file has no data rows: {path}")
    logger.info("✓ Loaded %d measurement records with L=%d from %s", len(records), led_count, path)
    return records


def write_measurements(records: Sequence[MeasurementRecord], path: Union[str, Path], float_format: str = ".12g") -> None:
    led_count = len(records[0].rss) if records else 0
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow([*BASE_COLUMNS, *rss_columns(led_count)])
        for record in records:
            writer.writerow([
                record.point_id,
                *(format(v, float_format) for v in (record.x, record.y, record.z)),
                *(format(v, float_format) for v in record.rss),
            ])


def as_arrays(records: Sequence[MeasurementRecord]) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """(positions K x 3, rss K x L)."""
    positions = np.array([[r.x, r.y, r.z] for r in records], dtype=float)
    rss = np.array([r.rss for r in records], dtype=float)
    return positions, rss


def sample_subset(
    records: Sequence[MeasurementRecord], size: int, seed: int, draw: int = 0
) -> Tuple[List[MeasurementRecord], List[MeasurementRecord]]:
    """Seeded uniform draw without replacement: (subset, remainder), both in file order.

    Draw ``k`` of a given seed always selects the same points.
    """
    if not 0 < size <= len(records):
        raise DatasetParseError(f"subset size must be in 1..{len(records)}, got {size}")
    rng = noise_generator(seed, (SUBSET_STREAM, draw))
    chosen = set(rng.choice(len(records), size=size, replace=False).tolist())
    subset = [r for i, r in enumerate(records) if i in chosen]
    remainder = [r for i, r in enumerate(records) if i not in chosen]
    return subset, remainder


def map_dataset_columns(
    source: Union[str, Path],
    target: Union[str, Path],
    column_map: Mapping[str, str],
    rss_sources: Sequence[str],
    scale: float = 1.0,
    delimiter: str = ",",
) -> int:
    """Rewrite a native dataset file into the measurement schema.

    ``column_map`` maps x / y (optionally point_id / z) to native column
    names; ``rss_sources`` lists native RSS columns in LED order. ``scale``
    converts native length units to meters. Returns the number of rows written.
    """
    with open(source, "r", encoding="utf-8", newline="") as file:
        reader = csv.DictReader(file, delimiter=delimiter)
        rows: List[Dict[str, str]] = [row for row in reader]
    records = []
    for number, row in enumerate(rows, start=1):
        try:
            point_id = int(float(row[column_map["point_id"]])) if "point_id" in column_map else number - 1
            x = float(row[column_map["x"]]) * scale
            y = float(row[column_map["y"]]) * scale
            z = float(row[column_map["z"]]) * scale if "z" in column_map else 0.0
            rss = tuple(float(row[name]) for name in rss_sources)
        except KeyError as e:
            raise DatasetParseError(f"native column {e.args[0]!r} not found", row=number)
        except ValueError as e:
            raise DatasetParseError(f"non-numeric native cell: {e}", row=number)
        records.append(MeasurementRecord(point_id=point_id, x=x, y=y, z=z, rss=rss))
    write_measurements(records, target)
    logger.info("✓ Mapped %d rows from %s into %s", len(records), source, target)
    return len(records)
