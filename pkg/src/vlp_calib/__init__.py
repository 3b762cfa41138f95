"""LED tilt/gain calibration and weighted LS localization for RSS-based visible light positioning."""

__version__ = "0.3.0"
