from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dualsparse.errors import DimensionError


@dataclass
class Image:
    """Grayscale raster with its nominal peak intensity.

    ``values`` is always stored as a 2-D float64 array.
    """

    values: np.ndarray
    dynamic_range: float = 255.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionError(f"image must be a non-empty 2-D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DimensionError("image contains NaN or Inf values")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def as_array(img) -> np.ndarray:
    """Accept an :class:`Image` or array-like and return a float64 2-D array."""
    if isinstance(img, Image):
        return img.values
    return Image(img).values
