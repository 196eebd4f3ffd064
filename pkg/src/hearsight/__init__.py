"""Desk-scale assistive sound localization pipeline.

Four-microphone direction-of-arrival estimation from interchannel phase
differences, embedding-based sound class scoring with a priority filter,
and localization-map guided bounding box selection.
"""

from hearsight.errors import DomainError

__version__ = "0.1.0"

__all__ = ["DomainError", "__version__"]
