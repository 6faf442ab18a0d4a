"""Image <-> patch-matrix conversion and weighted overlap aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from dualsparse.errors import CoverageError, DimensionError
from dualsparse.image import as_array


@dataclass
class PatchMatrix:
    """Vectorized patches stored column-wise.

    Attributes:
        patch_edge: edge length ``n`` of the square patches, so ``N = n * n``.
        data: ``(N, M)`` array, one row-major vectorized patch per column.
        origins: ``(M, 2)`` integer array of top-left ``(row, col)`` positions.
        image_shape: ``(height, width)`` of the source image.
    """

    patch_edge: int
    data: np.ndarray
    origins: np.ndarray
    image_shape: tuple[int, int]

    def __post_init__(self):
        n = self.patch_edge
        if self.data.ndim != 2 or self.data.shape[0] != n * n:
            raise DimensionError(f"patch data must have {n * n} rows, got shape {self.data.shape}")
        if self.origins.shape != (self.data.shape[1], 2):
            raise DimensionError("one origin per patch column is required")
        h, w = self.image_shape
        if self.count and (
            self.origins.min() < 0
            or self.origins[:, 0].max() > h - n
            or self.origins[:, 1].max() > w - n
        ):
            raise DimensionError("patch origin places a patch outside the image")

    @property
    def count(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def subset(self, columns) -> "PatchMatrix":
        columns = np.asarray(columns, dtype=np.intp)
        return PatchMatrix(self.patch_edge, self.data[:, columns], self.origins[columns], self.image_shape)


def grid_positions(length: int, patch_edge: int, stride: int) -> np.ndarray:
    """Start offsets along one axis.

    The stride grid plus the clamped last position. When ``stride`` exceeds
    the patch edge, extra starts are inserted so every pixel stays covered.
    """
    last = length - patch_edge
    pos = list(range(0, last + 1, stride))
    if pos[-1] != last:
        pos.append(last)
    if stride > patch_edge:
        filled = [pos[0]]
        for nxt in pos[1:]:
            while nxt - filled[-1] > patch_edge:
                filled.append(filled[-1] + patch_edge)
            filled.append(nxt)
        pos = filled
    return np.asarray(pos, dtype=np.intp)


def vectorize_patch(patch) -> np.ndarray:
    p = np.asarray(patch, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise DimensionError(f"patch must be square 2-D, got shape {p.shape}")
    return p.reshape(-1).copy()


def devectorize_patch(column, patch_edge: int) -> np.ndarray:
    c = np.asarray(column, dtype=np.float64)
    if c.ndim != 1 or c.size != patch_edge * patch_edge:
        raise DimensionError(f"expected a vector of length {patch_edge * patch_edge}, got shape {c.shape}")
    return c.reshape(patch_edge, patch_edge).copy()


def extract_patches(img, patch_edge: int, stride: int = 1) -> PatchMatrix:
    """Collect every patch on the stride grid, clamping the last row/column to the border.

    Patches are ordered row-major by origin and vectorized row-major.
    """
    values = as_array(img)
    h, w = values.shape
    if patch_edge < 1 or patch_edge > min(h, w):
        raise DimensionError(f"patch edge {patch_edge} does not fit in a {h}x{w} image")
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    rows = grid_positions(h, patch_edge, stride)
    cols = grid_positions(w, patch_edge, stride)
    windows = sliding_window_view(values, (patch_edge, patch_edge))
    sel = windows[rows[:, None], cols[None, :]]
    data = sel.reshape(rows.size * cols.size, patch_edge * patch_edge).T.copy()
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    origins = np.stack([rr.ravel(), cc.ravel()], axis=1)
    return PatchMatrix(patch_edge, data, origins, (h, w))


class PixelAccumulator:
    """Running per-pixel weighted sums of overlapping patch estimates."""

    def __init__(self, shape: tuple[int, int]):
        self.shape = tuple(shape)
        self.sum = np.zeros(self.shape)
        self.weight = np.zeros(self.shape)

    def _flat_index(self, origins: np.ndarray, patch_edge: int) -> np.ndarray:
        d = np.arange(patch_edge)
        offs = (d[:, None] * self.shape[1] + d[None, :]).ravel()
        base = origins[:, 0] * self.shape[1] + origins[:, 1]
        return offs[:, None] + base[None, :]

    def add(self, origins: np.ndarray, patch_edge: int, estimates: np.ndarray, weights) -> None:
        estimates = np.asarray(estimates, dtype=np.float64)
        origins = np.asarray(origins)
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), (origins.shape[0],))
        if estimates.shape != (patch_edge * patch_edge, origins.shape[0]):
            raise DimensionError(
                f"estimates shape {estimates.shape} does not match "
                f"{patch_edge * patch_edge} x {origins.shape[0]} patches"
            )
        if np.any(weights < 0):
            raise DimensionError("aggregation weights must be nonnegative")
        idx = self._flat_index(origins, patch_edge).ravel()
        size = self.sum.size
        self.sum += np.bincount(idx, weights=(estimates * weights).ravel(), minlength=size).reshape(self.shape)
        self.weight += np.bincount(idx, weights=np.broadcast_to(weights, estimates.shape).ravel(), minlength=size).reshape(
            self.shape
        )

    def uncovered(self) -> np.ndarray:
        return self.weight <= 0

    def result(self) -> np.ndarray:
        holes = self.uncovered()
        if holes.any():
            r, c = np.argwhere(holes)[0]
            raise CoverageError(f"{int(holes.sum())} pixels received no patch weight (first at row {r}, col {c})")
        return self.sum / self.weight


def aggregate(patches: PatchMatrix, estimates, weights=None, canvas: tuple[int, int] | None = None) -> np.ndarray:
    """Weighted average of overlapping patch estimates onto a pixel canvas.

    Args:
        patches: supplies origins and patch geometry.
        estimates: ``(N, M)`` per-patch estimates aligned with ``patches``.
        weights: positive per-column weights; uniform when omitted.
        canvas: output shape, defaults to the source image shape.

    Raises:
        CoverageError: some pixel has zero accumulated weight.
    """
    if weights is None:
        weights = np.ones(patches.count)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (patches.count,):
        raise DimensionError(f"need {patches.count} weights, got shape {weights.shape}")
    if np.any(weights <= 0):
        raise DimensionError("aggregation weights must be positive")
    acc = PixelAccumulator(canvas or patches.image_shape)
    acc.add(patches.origins, patches.patch_edge, estimates, weights)
    return acc.result()


def sparsity_weights(support_sizes) -> np.ndarray:
    """Default per-patch weight ``1 / (1 + ||alpha||_0)``."""
    return 1.0 / (1.0 + np.asarray(support_sizes, dtype=np.float64))
