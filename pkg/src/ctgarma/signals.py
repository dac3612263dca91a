"""Shared signal container used by the cleaning, event and model stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import FS_HZ


@dataclass(frozen=True, eq=False)
class CleanSignal:
    """A trace with its usable-sample mask and the pre-interpolation quality.

    ``samples`` holds NaN wherever ``valid`` is False. ``interpolated`` marks
    samples that were filled across a short gap; they count as valid for use
    but not towards ``quality``.
    """

    samples: np.ndarray
    valid: np.ndarray
    quality: float
    interpolated: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        valid = np.asarray(self.valid, dtype=bool)
        if samples.shape != valid.shape or samples.ndim != 1:
            raise ValueError("samples and valid must be 1-D arrays of equal length")
        if self.interpolated is None:
            interp = np.zeros_like(valid)
        else:
            interp = np.asarray(self.interpolated, dtype=bool)
        if not np.all(np.isfinite(samples[valid])):
            raise ValueError("every valid sample must be finite")
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError(f"quality {self.quality} outside [0, 1]")
        for arr in (samples, valid, interp):
            arr.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "interpolated", interp)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / FS_HZ

    def valid_values(self) -> np.ndarray:
        return self.samples[self.valid]

    def __eq__(self, other):
        if not isinstance(other, CleanSignal):
            return NotImplemented
        return (
            np.array_equal(self.samples, other.samples, equal_nan=True)
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.interpolated, other.interpolated)
            and self.quality == other.quality
        )

    __hash__ = None  # type: ignore[assignment]
