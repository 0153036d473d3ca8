"""Patch-grid geometry and bounding-box to patch-label conversion.

Conventions used everywhere in the package:

* pixel rectangles are half-open: patch (r, c) covers x in [c*P, (c+1)*P)
  and y in [r*P, (r+1)*P); a box overlaps a patch only if the intersection
  has positive area, so boxes that merely touch a patch edge do not count;
* patches are indexed row-major, ``index = row * cols + col``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    GridTooSmallError,
    IndexOutOfRangeError,
    NonDivisibleError,
    OutOfBoundsError,
    ValidationError,
)


@dataclass(frozen=True)
class PatchGrid:
    """An ``height x width`` image tiled into non-overlapping square patches."""

    height: int
    width: int
    patch_size: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.patch_size <= 0:
            raise ValidationError(
                f"grid dimensions must be positive, got "
                f"{self.height}x{self.width} patch {self.patch_size}"
            )
        if self.height % self.patch_size or self.width % self.patch_size:
            raise NonDivisibleError(
                f"patch size {self.patch_size} must divide image "
                f"{self.height}x{self.width}"
            )
        if self.rows < 2 or self.cols < 2:
            raise GridTooSmallError(
                f"grid {self.rows}x{self.cols} too small; need at least 2x2 patches"
            )

    @property
    def rows(self) -> int:
        return self.height // self.patch_size

    @property
    def cols(self) -> int:
        return self.width // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0:
            raise OutOfBoundsError(f"box has negative origin: {self}")
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise OutOfBoundsError(f"box is empty: {self}")


def make_grid(height: int, width: int, patch_size: int) -> PatchGrid:
    """Validate and build a patch grid for an image of the given size."""
    return PatchGrid(height, width, patch_size)


def patch_index(grid: PatchGrid, row: int, col: int) -> int:
    """Row-major index of patch (row, col)."""
    if not (0 <= row < grid.rows and 0 <= col < grid.cols):
        raise IndexOutOfRangeError(
            f"patch ({row}, {col}) outside grid {grid.rows}x{grid.cols}"
        )
    return row * grid.cols + col


def box_to_patch_labels(grid: PatchGrid, box: BoundingBox) -> np.ndarray:
    """Binary label per patch: 1 iff the patch overlaps the box with positive area.

    Returns a length-``grid.n_patches`` int8 array in row-major order.
    """
    if box.x1 > grid.width or box.y1 > grid.height:
        raise OutOfBoundsError(
            f"box {box} exceeds image {grid.height}x{grid.width}"
        )
    p = grid.patch_size
    # Half-open overlap: patch c covers [c*p, (c+1)*p), so the covered column
    # range is [x0 // p, (x1 - 1) // p] and likewise for rows.
    c_lo, c_hi = box.x0 // p, (box.x1 - 1) // p
    r_lo, r_hi = box.y0 // p, (box.y1 - 1) // p
    labels = np.zeros((grid.rows, grid.cols), dtype=np.int8)
    labels[r_lo : r_hi + 1, c_lo : c_hi + 1] = 1
    return labels.reshape(-1)


def window_patch_labels(grid: PatchGrid, row: int, col: int, height: int, width: int) -> np.ndarray:
    """Labels for a rectangular block of patches (used for planted regions)."""
    if row < 0 or col < 0 or height < 1 or width < 1:
        raise IndexOutOfRangeError(f"bad patch window ({row},{col},{height},{width})")
    if row + height > grid.rows or col + width > grid.cols:
        raise IndexOutOfRangeError(
            f"patch window ({row},{col},{height},{width}) outside "
            f"grid {grid.rows}x{grid.cols}"
        )
    labels = np.zeros((grid.rows, grid.cols), dtype=np.int8)
    labels[row : row + height, col : col + width] = 1
    return labels.reshape(-1)
