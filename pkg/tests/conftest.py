import numpy as np
import pytest

from vlp_calib.config import Settings, get_settings
from vlp_calib.services.channel_model import LedGroundTruth, PdPose, rss_general
from vlp_calib.services.calibration_service import CalibrationSet, calibrate


@pytest.fixture(autouse=True)
def reset_settings_cache():
    Settings.model_config["env_file"] = ""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


OFFICE_POSITIONS = [(-2.0, 6.0, 4.0), (2.0, 6.0, 4.0), (-2.0, 2.0, 4.0), (2.0, 2.0, 4.0)]
OFFICE_TILTS = [(1.6, 30.0), (2.1, 120.0), (3.7, 210.0), (3.3, 300.0)]


@pytest.fixture
def office_leds():
    return [
        LedGroundTruth.from_tilt(position, polar, azimuth)
        for position, (polar, azimuth) in zip(OFFICE_POSITIONS, OFFICE_TILTS)
    ]


@pytest.fixture
def ground_grid():
    xs, ys = np.meshgrid(np.linspace(-3.0, 3.0, 6), np.linspace(2.0, 7.0, 6))
    return np.column_stack([xs.ravel(), ys.ravel(), np.zeros(36)])


def clean_rss(led, points):
    return np.array([rss_general(led, PdPose(position=p)) for p in points])


@pytest.fixture
def office_calibrations(office_leds, ground_grid):
    """Noiseless calibrations; sigma2_hat is ~0, so callers override the noise variances."""
    return [
        calibrate(CalibrationSet(led.position, ground_grid, clean_rss(led, ground_grid)))
        for led in office_leds
    ]
