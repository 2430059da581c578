"""Gaussian density grids over in-plane coordinates and their image encodings."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from matplotlib import colormaps
from PIL import Image

from .errors import RaggedGrid

DEFAULT_RESOLUTION = 513
SIGMA_FRACTION = 1.0 / 128.0
EXTENT_MARGIN = 1.05
TRUNCATE_SIGMAS = 4.0
COLORMAP = "inferno"


@dataclass(frozen=True)
class DensityGrid:
    """``values[iy, ix]`` at node ``(x_ix, y_iy)`` of ``linspace(-extent, extent, resolution)``."""

    values: np.ndarray
    extent: float

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / (self.resolution - 1)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.resolution)


@dataclass(frozen=True)
class ColorScale:
    vmax: float
    vmin: float = 0.0

    def __post_init__(self):
        if not self.vmax > self.vmin:
            raise ValueError("vmax must exceed vmin")


def _coords(records) -> np.ndarray:
    if getattr(records, "dtype", None) is not None and records.dtype.names:
        return np.asarray(records["w"], dtype=np.float64).reshape(-1, 2)
    return np.asarray(records, dtype=np.float64).reshape(-1, 2)


def default_extent(coord_sets: Sequence) -> float:
    """1.05 x the largest ``|w|`` across a row of record sets (1.0 if all are empty)."""
    r = 0.0
    for recs in coord_sets:
        w = _coords(recs)
        if len(w):
            r = max(r, float(np.max(np.hypot(w[:, 0], w[:, 1]))))
    return EXTENT_MARGIN * r if r > 0 else 1.0


def accumulate_density(records, resolution: int = DEFAULT_RESOLUTION, extent: float = 1.0, kernel_sigma: Optional[float] = None, chunk: int = 2048) -> DensityGrid:
    """Sum of unit-peak isotropic Gaussians centred at each record's ``w``.

    Each Gaussian is cut to a square of half-width 4 sigma. Records are put in
    lexicographic order first so the floating-point sum does not depend on the
    order they arrive in.
    """
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    if extent <= 0:
        raise ValueError("extent must be positive")
    sigma = extent * SIGMA_FRACTION if kernel_sigma is None else kernel_sigma
    if sigma <= 0:
        raise ValueError("kernel_sigma must be positive")
    w = _coords(records)
    grid = np.zeros((resolution, resolution))
    if len(w) == 0:
        return DensityGrid(grid, float(extent))
    w = w[np.lexsort((w[:, 1], w[:, 0]))]
    nodes = np.linspace(-extent, extent, resolution)
    cut = TRUNCATE_SIGMAS * sigma
    for s in range(0, len(w), chunk):
        dx = nodes[None, :] - w[s:s + chunk, 0:1]
        dy = nodes[None, :] - w[s:s + chunk, 1:2]
        gx = np.where(np.abs(dx) <= cut, np.exp(-0.5 * (dx / sigma) ** 2), 0.0)
        gy = np.where(np.abs(dy) <= cut, np.exp(-0.5 * (dy / sigma) ** 2), 0.0)
        grid += gy.T @ gx
    return DensityGrid(grid, float(extent))


def row_color_scale(grids: Sequence[DensityGrid]) -> ColorScale:
    """Shared scale for a row: vmax = mean + 5 std of every cell value in the row."""
    if not grids:
        raise ValueError("need at least one grid")
    pooled = np.concatenate([g.values.ravel() for g in grids])
    vmax = float(pooled.mean() + 5.0 * pooled.std())
    return ColorScale(vmax if vmax > 0 else 1.0)


def _lut() -> np.ndarray:
    cmap = colormaps[COLORMAP]
    return np.rint(cmap(np.linspace(0.0, 1.0, 256))[:, :3] * 255).astype(np.uint8)


def ramp_index(values: np.ndarray, scale: ColorScale) -> np.ndarray:
    """Monotone map of values to 0..255, clamped at the scale limits."""
    t = (np.asarray(values, dtype=np.float64) - scale.vmin) / (scale.vmax - scale.vmin)
    return np.floor(np.clip(t, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def render_rgb(grid: DensityGrid, scale: ColorScale) -> np.ndarray:
    """``(res, res, 3)`` uint8 image with +y at the top."""
    idx = ramp_index(grid.values[::-1], scale)
    return _lut()[idx]


def png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(rgb), mode="RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def pgm_bytes(grid: DensityGrid, scale: ColorScale) -> bytes:
    """Binary P5 greyscale, the ramp index as the grey level."""
    idx = ramp_index(grid.values[::-1], scale)
    h, w = idx.shape
    return b"P5\n%d %d\n255\n" % (w, h) + idx.tobytes()


def render_grid(grid: DensityGrid, scale: ColorScale, fmt: str = "png") -> bytes:
    if fmt == "png":
        return png_bytes(render_rgb(grid, scale))
    if fmt == "pgm":
        return pgm_bytes(grid, scale)
    raise ValueError(f"unknown image format {fmt!r}")


def montage(images: Sequence[Sequence[np.ndarray]], row_labels: Sequence[str], col_labels: Sequence, extent: Optional[Sequence[float]] = None) -> bytes:
    """Tile RGB images into one labelled PNG (rows = runs, columns = checkpoints).

    ``col_labels`` is either one list shared by all rows or one list per row.
    """
    from .plotting import montage_figure, figure_png

    rows = [list(r) for r in images]
    if not rows or not rows[0]:
        raise RaggedGrid("montage needs at least one image")
    ncols = len(rows[0])
    if any(len(r) != ncols for r in rows):
        raise RaggedGrid(f"row lengths {[len(r) for r in rows]} are not all {ncols}")
    if len(row_labels) != len(rows):
        raise RaggedGrid("one label per row required")
    fig = montage_figure(rows, list(row_labels), col_labels, extent)
    return figure_png(fig)
