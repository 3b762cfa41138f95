"""
Channel model service for LED-to-photodiode links.

This service handles:
- Geometry primitives (3-vectors, LED and PD poses, tilt angles)
- The full Lambertian RSS model and the simplified h/d^4 ranging form
- Deterministic Gaussian noise streams keyed by (seed, stream key)

Vectors are plain ``numpy`` arrays of shape (3,). LED normals point toward the
floor, so zero tilt is ``[0, 0, -1]``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ContractViolationError, ModelDomainError

Vec3 = NDArray[np.float64]
StreamKey = Union[int, Sequence[int]]

UNIT_TOLERANCE = 1e-12
GROUND_NORMAL = np.array([0.0, 0.0, 1.0])
_SEED_MASK = (1 << 64) - 1


def as_vec3(values: ArrayLike, name: str = "vector") -> Vec3:
    """Coerce to a finite float array of shape (3,)."""
    vec = np.asarray(values, dtype=float).reshape(-1)
    if vec.shape != (3,):
        raise ModelDomainError(f"{name} must have 3 components, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)):
        raise ModelDomainError(f"{name} has non-finite components: {vec.tolist()}")
    return vec


def as_unit(values: ArrayLike, name: str = "normal") -> Vec3:
    vec = as_vec3(values, name)
    if abs(np.linalg.norm(vec) - 1.0) > UNIT_TOLERANCE:
        raise ModelDomainError(f"{name} must be a unit vector, got norm {np.linalg.norm(vec)!r}")
    return vec


def tilt_to_normal(polar_deg: float, azimuth_deg: float) -> Vec3:
    """LED normal for polar tilt and azimuth given in degrees; zero tilt points straight down."""
    theta = math.radians(polar_deg)
    gamma = math.radians(azimuth_deg)
    return np.array(
        [math.sin(theta) * math.cos(gamma), math.sin(theta) * math.sin(gamma), -math.cos(theta)]
    )


def normal_to_tilt(normal: ArrayLike) -> Tuple[float, float]:
    """Inverse of :func:`tilt_to_normal`; azimuth is returned in [0, 360)."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    polar = math.degrees(math.atan2(math.hypot(n[0], n[1]), -n[2]))
    azimuth = math.degrees(math.atan2(n[1], n[0])) % 360.0
    return polar, azimuth


@dataclass(frozen=True, eq=False)
class LedGroundTruth:
    """True pose and emission parameters of one ceiling LED.

    ``gain`` aggregates responsivity, optical power, Lambertian factor and
    detector area into a single constant c.
    """
    position: Vec3
    normal: Vec3
    gain: float = 1.0
    lambertian_order: float = 1.0
    tilt_polar_deg: Optional[float] = None
    tilt_azimuth_deg: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "LED position"))
        object.__setattr__(self, "normal", as_unit(self.normal, "LED normal"))
        if self.normal[2] >= 0:
            raise ModelDomainError("LED normal must point toward the floor (negative z)")
        if not self.gain > 0:
            raise ModelDomainError(f"LED gain must be positive, got {self.gain}")
        if not self.lambertian_order >= 1:
            raise ModelDomainError(f"Lambertian order must be >= 1, got {self.lambertian_order}")
        if self.tilt_polar_deg is not None and self.tilt_azimuth_deg is not None:
            expected = tilt_to_normal(self.tilt_polar_deg, self.tilt_azimuth_deg)
            if np.linalg.norm(expected - self.normal) > 1e-9:
                raise ModelDomainError("LED normal is inconsistent with its tilt angles")

    @classmethod
    def from_tilt(
        cls,
        position: ArrayLike,
        polar_deg: float,
        azimuth_deg: float,
        gain: float = 1.0,
        lambertian_order: float = 1.0,
    ) -> "LedGroundTruth":
        return cls(
            position=np.asarray(position, dtype=float),
            normal=tilt_to_normal(polar_deg, azimuth_deg),
            gain=gain,
            lambertian_order=lambertian_order,
            tilt_polar_deg=polar_deg,
            tilt_azimuth_deg=azimuth_deg,
        )

    @property
    def height(self) -> float:
        return float(self.position[2])


@dataclass(frozen=True, eq=False)
class PdPose:
    """Photodiode position and orientation."""
    position: Vec3
    normal: Vec3 = field(default_factory=lambda: GROUND_NORMAL.copy())

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "PD position"))
        object.__setattr__(self, "normal", as_unit(self.normal, "PD normal"))

    @classmethod
    def on_ground(cls, x: float, y: float) -> "PdPose":
        return cls(position=np.array([x, y, 0.0]))


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise: standard deviation in RSS units and a 64-bit seed."""
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ModelDomainError(f"noise sigma must be >= 0, got {self.sigma}")


def _separation(led: LedGroundTruth, pd: PdPose) -> Tuple[Vec3, float]:
    d = pd.position - led.position
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        raise ModelDomainError("PD and LED positions coincide")
    return d, dist


def cos_angles(led: LedGroundTruth, pd: PdPose) -> Tuple[float, float]:
    """Cosines of the emission angle at the LED and the incidence angle at the PD."""
    d, dist = _separation(led, pd)
    cos_phi_s = float(np.clip(led.normal @ d / dist, -1.0, 1.0))
    cos_phi_r = float(np.clip(pd.normal @ (-d) / dist, -1.0, 1.0))
    return cos_phi_s, cos_phi_r


def rss_general(led: LedGroundTruth, pd: PdPose) -> float:
    """Noiseless Lambertian RSS; zero when either side faces away from the other."""
    _, dist = _separation(led, pd)
    cos_phi_s, cos_phi_r = cos_angles(led, pd)
    if cos_phi_s < 0 or cos_phi_r < 0:
        return 0.0
    return led.gain / dist**2 * cos_phi_s**led.lambertian_order * cos_phi_r


def _check_ground_pd(pd: PdPose) -> None:
    if abs(pd.position[2]) > UNIT_TOLERANCE:
        raise ContractViolationError(f"PD must lie on the ground plane, got z={pd.position[2]!r}")
    if np.linalg.norm(pd.normal - GROUND_NORMAL) > UNIT_TOLERANCE:
        raise ContractViolationError("PD normal must be vertical [0, 0, 1]")


def rss_simplified(led: LedGroundTruth, pd: PdPose) -> float:
    """Ranging form c*h/d^4 * n_S.d for m=1 and a horizontal PD on the ground.

    Not clamped: only meaningful where n_S.d > 0.
    """
    _check_ground_pd(pd)
    h = led.height - pd.position[2]
    if h <= 0:
        raise ModelDomainError(f"LED height must be positive, got {h}")
    d, dist = _separation(led, pd)
    return float(led.gain * h / dist**4 * (led.normal @ d))


def rss_no_tilt(gain: float, h: float, dist: ArrayLike) -> NDArray[np.float64]:
    """RSS under the no-tilt assumption c*h^2/d^4."""
    return gain * h**2 / np.asarray(dist, dtype=float) ** 4


def noise_generator(seed: int, stream_key: StreamKey) -> np.random.Generator:
    """Generator for one keyed stream; the same (seed, key) always yields the same draws."""
    key = (stream_key,) if isinstance(stream_key, (int, np.integer)) else tuple(stream_key)
    spawn_key = tuple(int(k) & _SEED_MASK for k in key)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed) & _SEED_MASK, spawn_key=spawn_key))


def gaussian_draws(noise: NoiseSpec, stream_key: StreamKey, size) -> NDArray[np.float64]:
    """``size`` draws of sigma * N(0, 1) from the keyed stream."""
    return noise.sigma * noise_generator(noise.seed, stream_key).standard_normal(size)


def add_noise(signal: float, noise: NoiseSpec, stream_index: StreamKey) -> float:
    if noise.sigma == 0:
        return signal
    return float(signal + gaussian_draws(noise, stream_index, 1)[0])
