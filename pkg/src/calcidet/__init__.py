"""Two-stage convolutional detection, labeling and scoring of arterial and
valvular calcifications in chest CT volumes."""

__version__ = "0.1.0"

from .imagegrid import ClassCode, CtVolume, LabelMap

__all__ = ["ClassCode", "CtVolume", "LabelMap", "__version__"]
