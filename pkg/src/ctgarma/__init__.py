"""Cardiotocography analysis: artifact cleaning, event detection, windowed
ARX pole features and patient-level classifier evaluation."""

__version__ = "0.1.0"

FS_HZ = 4.0
