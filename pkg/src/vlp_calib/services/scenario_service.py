"""Scenario documents (YAML) and the bundled scenario catalog.

Omitted fields default to the 8 m x 8 m, 4-LED simulation set-up. Tilt angles
are written in degrees. A LED without ``tilt_azimuth_deg`` gets an azimuth
drawn uniformly from [0, 360) on a stream keyed by the scenario seed.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import yaml
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .channel_model import LedGroundTruth, NoiseSpec, noise_generator
from .errors import ScenarioValidationError

logger = logging.getLogger(__name__)

AZIMUTH_STREAM = 0xA21
ROOM_TOLERANCE = 1e-9


class RoomDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: float = Field(8.0, gt=0)
    depth: float = Field(8.0, gt=0)
    origin: Tuple[float, float] = (-4.0, 0.0)


class LedDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    position: Tuple[float, float, float]
    tilt_polar_deg: float = 0.0
    tilt_azimuth_deg: Optional[float] = None
    gain: float = Field(1.0, gt=0)
    lambertian_order: float = Field(1.0, ge=1)
    sigma: float = Field(1e-4, ge=0)


class TrajectoryDocument(BaseModel):
    """Rectangular loop inset from the walls, or explicit points."""
    model_config = ConfigDict(extra="forbid")

    inset: float = Field(1.0, ge=0)
    spacing: float = Field(0.1, gt=0)
    points: Optional[List[Tuple[float, float]]] = None


class TrainingDocument(BaseModel):
    """Uniform grid, or explicit points."""
    model_config = ConfigDict(extra="forbid")

    x_count: int = Field(6, ge=1)
    y_count: int = Field(6, ge=1)
    x_range: Tuple[float, float] = (-3.0, 3.0)
    y_range: Tuple[float, float] = (2.0, 7.0)
    points: Optional[List[Tuple[float, float]]] = None


def _office_leds() -> List[LedDocument]:
    return [
        LedDocument(position=(x, y, 4.0), tilt_polar_deg=polar)
        for (x, y), polar in zip([(-2.0, 6.0), (2.0, 6.0), (-2.0, 2.0), (2.0, 2.0)], [1.6, 2.1, 3.7, 3.3])
    ]


class ScenarioDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "office"
    seed: int = 2024
    room: RoomDocument = Field(default_factory=RoomDocument)
    leds: List[LedDocument] = Field(default_factory=_office_leds, min_length=1)
    trajectory: TrajectoryDocument = Field(default_factory=TrajectoryDocument)
    training: TrainingDocument = Field(default_factory=TrainingDocument)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Resolved scenario: LED ground truth, per-LED noise, trajectory and training points."""
    name: str
    seed: int
    room_width: float
    room_depth: float
    room_origin: Tuple[float, float]
    leds: List[LedGroundTruth]
    noise: List[NoiseSpec]
    trajectory: NDArray[np.float64]
    training_points: NDArray[np.float64]

    @property
    def room_bounds(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        x0, y0 = self.room_origin
        return (x0, x0 + self.room_width), (y0, y0 + self.room_depth)


def rectangle_loop(x_lo: float, x_hi: float, y_lo: float, y_hi: float, spacing: float) -> NDArray[np.float64]:
    """Closed rectangular path sampled every ``spacing`` meters, counter-clockwise from (x_lo, y_lo)."""
    corners = np.array([[x_lo, y_lo], [x_hi, y_lo], [x_hi, y_hi], [x_lo, y_hi], [x_lo, y_lo]])
    edges = np.diff(corners, axis=0)
    lengths = np.linalg.norm(edges, axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    count = max(int(round(cumulative[-1] / spacing)), 1)
    arc = np.arange(count) * cumulative[-1] / count
    points = []
    for s in arc:
        edge = min(int(np.searchsorted(cumulative, s, side="right") - 1), len(edges) - 1)
        fraction = (s - cumulative[edge]) / lengths[edge] if lengths[edge] > 0 else 0.0
        points.append(corners[edge] + fraction * edges[edge])
    return np.round(np.array(points), 12)


def training_grid(x_range: Tuple[float, float], y_range: Tuple[float, float], x_count: int, y_count: int):
    xs = np.linspace(x_range[0], x_range[1], x_count)
    ys = np.linspace(y_range[0], y_range[1], y_count)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _check_inside(points: NDArray[np.float64], bounds, label: str) -> None:
    (x_lo, x_hi), (y_lo, y_hi) = bounds
    outside = (
        (points[:, 0] < x_lo - ROOM_TOLERANCE) | (points[:, 0] > x_hi + ROOM_TOLERANCE)
        | (points[:, 1] < y_lo - ROOM_TOLERANCE) | (points[:, 1] > y_hi + ROOM_TOLERANCE)
    )
    if np.any(outside):
        first = points[np.argmax(outside)]
        raise ScenarioValidationError(f"{label} point {first.tolist()} lies outside the room")


def build_scenario(document: ScenarioDocument) -> Scenario:
    """Resolve a document into LED ground truth and point sets, validating the geometry."""
    leds, noise = [], []
    for index, led in enumerate(document.leds):
        if led.position[2] <= 0:
            raise ScenarioValidationError(f"LED {index} must be above the ground, got height {led.position[2]}")
        azimuth = led.tilt_azimuth_deg
        if azimuth is None:
            azimuth = float(noise_generator(document.seed, (AZIMUTH_STREAM, index)).uniform(0.0, 360.0))
        leds.append(LedGroundTruth.from_tilt(
            led.position, led.tilt_polar_deg, azimuth, gain=led.gain, lambertian_order=led.lambertian_order,
        ))
        noise.append(NoiseSpec(sigma=led.sigma, seed=document.seed))

    room = document.room
    bounds = ((room.origin[0], room.origin[0] + room.width), (room.origin[1], room.origin[1] + room.depth))
    if document.trajectory.points is not None:
        trajectory = np.array(document.trajectory.points, dtype=float).reshape(-1, 2)
    else:
        inset = document.trajectory.inset
        trajectory = rectangle_loop(
            bounds[0][0] + inset, bounds[0][1] - inset, bounds[1][0] + inset, bounds[1][1] - inset,
            document.trajectory.spacing,
        )
    if document.training.points is not None:
        training = np.array(document.training.points, dtype=float).reshape(-1, 2)
    else:
        t = document.training
        training = training_grid(t.x_range, t.y_range, t.x_count, t.y_count)
    _check_inside(trajectory, bounds, "trajectory")
    _check_inside(training, bounds, "training")

    return Scenario(
        name=document.name,
        seed=document.seed,
        room_width=room.width,
        room_depth=room.depth,
        room_origin=tuple(room.origin),
        leds=leds,
        noise=noise,
        trajectory=trajectory,
        training_points=training,
    )


def scenario_to_document(scenario: Scenario) -> ScenarioDocument:
    """Document with every derived quantity written out explicitly (azimuths, points)."""
    return ScenarioDocument(
        name=scenario.name,
        seed=scenario.seed,
        room=RoomDocument(width=scenario.room_width, depth=scenario.room_depth, origin=scenario.room_origin),
        leds=[
            LedDocument(
                position=tuple(float(v) for v in led.position),
                tilt_polar_deg=led.tilt_polar_deg,
                tilt_azimuth_deg=led.tilt_azimuth_deg,
                gain=led.gain,
                lambertian_order=led.lambertian_order,
                sigma=noise.sigma,
            )
            for led, noise in zip(scenario.leds, scenario.noise)
        ],
        trajectory=TrajectoryDocument(points=[tuple(map(float, p)) for p in scenario.trajectory]),
        training=TrainingDocument(points=[tuple(map(float, p)) for p in scenario.training_points]),
    )


def load_document(path: Union[str, Path]) -> ScenarioDocument:
    try:
        with open(path, "r", encoding="utf-8") as file:
            raw = yaml.safe_load(file) or {}
        return ScenarioDocument.model_validate(raw)
    except (OSError, yaml.YAMLError) as e:
        raise ScenarioValidationError(f"cannot read scenario file {path}: {e}")
    except ValidationError as e:
        raise ScenarioValidationError(f"invalid scenario file {path}: {e}")


def parse_scenario(path: Union[str, Path]) -> Scenario:
    return build_scenario(load_document(path))


def dump_document(document: ScenarioDocument) -> str:
    return yaml.safe_dump(document.model_dump(mode="json"), sort_keys=False, allow_unicode=True)


def serialize_scenario(scenario: Union[Scenario, ScenarioDocument], path: Union[str, Path]) -> None:
    document = scenario if isinstance(scenario, ScenarioDocument) else scenario_to_document(scenario)
    Path(path).write_text(dump_document(document), encoding="utf-8")


class ScenarioCatalog:
    """Scenario files bundled under ``resources/``."""

    def __init__(self):
        self._documents: Dict[str, ScenarioDocument] = {}
        self._load_bundled()

    @staticmethod
    def _get_resource_path(filename: str) -> Path:
        """Resolve a bundled resource for both source checkouts and installed wheels."""
        candidates = [
            Path("resources") / filename,
            Path(__file__).parent.parent / "resources" / filename,
            Path(__file__).parent.parent.parent.parent / "resources" / filename,
        ]
        for candidate in candidates:
            if candidate.exists():
                return candidate
        raise FileNotFoundError(f"Bundled resource not found: {filename}")

    def _load_bundled(self):
        directory = self._get_resource_path("office.yaml").parent
        for path in sorted(directory.glob("*.yaml")):
            self._documents[path.stem] = load_document(path)

    def list_scenarios(self) -> List[str]:
        return sorted(self._documents)

    def get_document(self, name: str) -> ScenarioDocument:
        if name not in self._documents:
            raise ScenarioValidationError(
                f"unknown bundled scenario '{name}'. Available: {', '.join(self.list_scenarios())}"
            )
        return self._documents[name].model_copy(deep=True)

    def get_scenario(self, name: str) -> Scenario:
        return build_scenario(self.get_document(name))


# Global instance
_scenario_catalog = None


def get_scenario_catalog() -> ScenarioCatalog:
    """Get the global scenario catalog instance."""
    global _scenario_catalog
    if _scenario_catalog is None:
        _scenario_catalog = ScenarioCatalog()
    return _scenario_catalog


def resolve_scenario(source: Union[str, Path]) -> Scenario:
    """Scenario from a file path, or from a bundled scenario name."""
    path = Path(source)
    if path.exists():
        return parse_scenario(path)
    return get_scenario_catalog().get_scenario(str(source))


def list_scenarios() -> List[str]:
    return get_scenario_catalog().list_scenarios()


def load_bundled_scenario(name: str) -> Scenario:
    return get_scenario_catalog().get_scenario(name)
