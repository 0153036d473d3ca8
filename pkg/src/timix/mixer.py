"""Text-aware region selection, compositing, and soft-label arithmetic.

A mix takes a target image and a source image sharing one patch grid,
cuts the ``h x w`` patch window with the *highest* relevance total out of
the source, and pastes it over the window with the *lowest* relevance
total in the target.  ``h = max(1, floor(gamma * rows))`` and likewise for
``w``; the pasted area fraction ``h*w*P^2 / (H*W)`` becomes the soft label
of the source text, its complement the soft label of the target text.

Window totals for every position are computed with a summed-area table,
so a full scan costs O(rows * cols) independent of window size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, ValidationError, WindowTooLargeError
from .geometry import PatchGrid
from .scores import ScoreMap

GAMMA_LO = 0.25
GAMMA_HI = 0.75


@dataclass(frozen=True)
class WindowSpec:
    """An ``height x width`` block of patches with top-left corner (row, col)."""

    row: int
    col: int
    height: int
    width: int

    @property
    def center(self) -> tuple[int, int]:
        return (self.row + self.height // 2, self.col + self.width // 2)


@dataclass(frozen=True)
class MixRecipe:
    """Everything needed to reproduce one mix and its soft labels."""

    grid: PatchGrid
    gamma: float
    target_window: WindowSpec
    source_window: WindowSpec
    s_src: float
    s_tgt: float


def sample_gamma(rng: np.random.Generator, lo: float = GAMMA_LO, hi: float = GAMMA_HI) -> float:
    """Draw a side ratio uniformly from [lo, hi]."""
    if not (0.0 <= lo < hi < 1.0):
        raise ValidationError(f"gamma bounds must satisfy 0 <= lo < hi < 1, got [{lo}, {hi}]")
    return float(rng.uniform(lo, hi))


def window_shape(grid: PatchGrid, gamma: float) -> tuple[int, int]:
    """Window extent in patches for a side ratio; clamped to at least 1."""
    if not (0.0 < gamma < 1.0):
        raise ValidationError(f"gamma must lie in (0, 1), got {gamma}")
    h = max(1, int(gamma * grid.rows))
    w = max(1, int(gamma * grid.cols))
    return h, w


def window_sums(score_map: ScoreMap, height: int, width: int) -> np.ndarray:
    """Total score of every ``height x width`` window at stride 1.

    Entry (r, c) is the sum over the window whose top-left patch is (r, c);
    the output has shape (rows - height + 1, cols - width + 1).
    """
    grid = score_map.grid
    if not (1 <= height <= grid.rows and 1 <= width <= grid.cols):
        raise WindowTooLargeError(
            f"window {height}x{width} does not fit grid {grid.rows}x{grid.cols}"
        )
    values = score_map.as_grid()
    sat = np.zeros((grid.rows + 1, grid.cols + 1))
    sat[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
    return (
        sat[height:, width:]
        - sat[:-height, width:]
        - sat[height:, :-width]
        + sat[:-height, :-width]
    )


def select_windows(
    target_map: ScoreMap, source_map: ScoreMap, gamma: float
) -> tuple[WindowSpec, WindowSpec]:
    """Least-relevant target window and most-relevant source window.

    Ties are broken toward the smallest row-major top-left index, which is
    what ``argmin``/``argmax`` return on first occurrence.
    """
    if (target_map.grid.rows, target_map.grid.cols) != (source_map.grid.rows, source_map.grid.cols):
        raise ShapeMismatchError(
            f"maps on different grids: {target_map.grid} vs {source_map.grid}"
        )
    h, w = window_shape(target_map.grid, gamma)
    tgt_sums = window_sums(target_map, h, w)
    src_sums = window_sums(source_map, h, w)
    tr, tc = np.unravel_index(np.argmin(tgt_sums), tgt_sums.shape)
    sr, sc = np.unravel_index(np.argmax(src_sums), src_sums.shape)
    return WindowSpec(int(tr), int(tc), h, w), WindowSpec(int(sr), int(sc), h, w)


def random_windows(
    grid: PatchGrid, gamma: float, rng: np.random.Generator
) -> tuple[WindowSpec, WindowSpec]:
    """Uniformly random target and source windows (CutMix-style selection)."""
    h, w = window_shape(grid, gamma)
    tr = int(rng.integers(0, grid.rows - h + 1))
    tc = int(rng.integers(0, grid.cols - w + 1))
    sr = int(rng.integers(0, grid.rows - h + 1))
    sc = int(rng.integers(0, grid.cols - w + 1))
    return WindowSpec(tr, tc, h, w), WindowSpec(sr, sc, h, w)


def soft_labels(grid: PatchGrid, gamma: float) -> tuple[float, float]:
    """(target label, source label): complement pair summing to exactly 1.

    The source label is the pasted pixel-area fraction ``h*w*P^2 / (H*W)``.
    """
    h, w = window_shape(grid, gamma)
    s_src = (h * w * grid.patch_size**2) / (grid.height * grid.width)
    return 1.0 - s_src, s_src


def _check_window(grid: PatchGrid, win: WindowSpec):
    if win.row < 0 or win.col < 0 or win.height < 1 or win.width < 1:
        raise WindowTooLargeError(f"bad window {win}")
    if win.row + win.height > grid.rows or win.col + win.width > grid.cols:
        raise WindowTooLargeError(f"window {win} outside grid {grid.rows}x{grid.cols}")


def make_recipe(
    grid: PatchGrid,
    gamma: float,
    target_window: WindowSpec,
    source_window: WindowSpec,
) -> MixRecipe:
    _check_window(grid, target_window)
    _check_window(grid, source_window)
    if (target_window.height, target_window.width) != (source_window.height, source_window.width):
        raise ShapeMismatchError(
            f"windows must share an extent: {target_window} vs {source_window}"
        )
    s_tgt, s_src = soft_labels(grid, gamma)
    return MixRecipe(grid, float(gamma), target_window, source_window, s_src=s_src, s_tgt=s_tgt)


def composite(target: np.ndarray, source: np.ndarray, recipe: MixRecipe) -> np.ndarray:
    """Paste the source window's pixels over the target window's pixels.

    Inputs are (H, W) or (H, W, C) pixel arrays and are not modified; only
    the target window's footprint changes in the returned copy.
    """
    target = np.asarray(target)
    source = np.asarray(source)
    grid = recipe.grid
    if target.shape != source.shape:
        raise ShapeMismatchError(f"target {target.shape} vs source {source.shape}")
    if target.shape[:2] != (grid.height, grid.width):
        raise ShapeMismatchError(
            f"image {target.shape[:2]} inconsistent with grid "
            f"{grid.height}x{grid.width}"
        )
    p = grid.patch_size
    tw, sw = recipe.target_window, recipe.source_window
    out = target.copy()
    out[tw.row * p : (tw.row + tw.height) * p, tw.col * p : (tw.col + tw.width) * p] = source[
        sw.row * p : (sw.row + sw.height) * p, sw.col * p : (sw.col + sw.width) * p
    ]
    return out


def composite_features(target: np.ndarray, source: np.ndarray, recipe: MixRecipe) -> np.ndarray:
    """Same paste at patch-feature granularity.

    Accepts (rows, cols, D) grids or flat (n_patches, D) arrays; the output
    keeps the input layout.
    """
    target = np.asarray(target)
    source = np.asarray(source)
    grid = recipe.grid
    if target.shape != source.shape:
        raise ShapeMismatchError(f"target {target.shape} vs source {source.shape}")
    flat = target.ndim == 2 and target.shape[0] == grid.n_patches
    if flat:
        target = target.reshape(grid.rows, grid.cols, -1)
        source = source.reshape(grid.rows, grid.cols, -1)
    elif target.shape[:2] != (grid.rows, grid.cols):
        raise ShapeMismatchError(
            f"features {target.shape} inconsistent with grid "
            f"{grid.rows}x{grid.cols}"
        )
    tw, sw = recipe.target_window, recipe.source_window
    out = target.copy()
    out[tw.row : tw.row + tw.height, tw.col : tw.col + tw.width] = source[
        sw.row : sw.row + sw.height, sw.col : sw.col + sw.width
    ]
    return out.reshape(grid.n_patches, -1) if flat else out


def mix_pair(
    image_x: np.ndarray,
    map_x: ScoreMap,
    image_y: np.ndarray,
    map_y: ScoreMap,
    gamma: float,
    mode: str = "auto",
) -> tuple[np.ndarray, np.ndarray, MixRecipe, MixRecipe]:
    """Produce both mixes of a pair under a single shared side ratio.

    Returns (mix_xy, mix_yx, recipe_xy, recipe_yx) where mix_xy pastes the
    most text-relevant window of y over the least relevant window of x.
    Sharing gamma makes each text's two soft labels (one per mix) sum to 1.
    """
    grid = map_x.grid
    if mode == "auto":
        if image_x.shape[:2] == (grid.height, grid.width):
            mode = "pixels"
        elif image_x.shape[:2] == (grid.rows, grid.cols) or (
            image_x.ndim == 2 and image_x.shape[0] == grid.n_patches
        ):
            mode = "features"
        else:
            raise ShapeMismatchError(
                f"cannot infer pixel/feature mode for shape {image_x.shape}"
            )
    paste = composite if mode == "pixels" else composite_features

    tgt_x, src_y = select_windows(map_x, map_y, gamma)
    recipe_xy = make_recipe(grid, gamma, tgt_x, src_y)
    mixed_xy = paste(image_x, image_y, recipe_xy)

    tgt_y, src_x = select_windows(map_y, map_x, gamma)
    recipe_yx = make_recipe(grid, gamma, tgt_y, src_x)
    mixed_yx = paste(image_y, image_x, recipe_yx)
    return mixed_xy, mixed_yx, recipe_xy, recipe_yx
