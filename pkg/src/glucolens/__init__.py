"""Noninvasive glucose estimation on synthetic SWIR images and photodiode voltages."""

__version__ = "0.1.0"
