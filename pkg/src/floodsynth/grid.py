"""Raster grid containers, plain-text grid file I/O, and terrain derivatives.

The grid file format is the six-line ASCII header (ncols, nrows, xllcorner,
yllcorner, cellsize, NODATA_value) followed by nrows whitespace-separated
rows, row 0 being the northernmost. It is human-diffable and needs no
format libraries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


class GridFormatError(ValueError):
    """Raised when a grid file violates the expected layout."""


@dataclass
class Raster:
    """A rectangular grid of 64-bit reals with a georeferencing header.

    ``values[i, j]`` holds row i (row 0 = north) and column j (col 0 = west).
    Cells equal to ``nodata`` are missing. Instances are treated as
    immutable; operations return new rasters.
    """

    values: np.ndarray
    cellsize: float
    origin_x: float = 0.0
    origin_y: float = 0.0
    nodata: float = -9999.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"values must be 2D, got shape {self.values.shape}")
        rows, cols = self.values.shape
        if rows < 1 or cols < 1:
            raise ValueError("raster needs at least one row and one column")
        if not self.cellsize > 0:
            raise ValueError(f"cellsize must be positive, got {self.cellsize}")
        valid = self.values != self.nodata
        if not np.all(np.isfinite(self.values[valid])):
            raise ValueError("raster contains non-finite values outside nodata")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def nodata_mask(self) -> np.ndarray:
        return self.values == self.nodata

    def valid_mask(self) -> np.ndarray:
        return self.values != self.nodata

    def header_matches(self, other: "Raster") -> bool:
        return (
            self.shape == other.shape
            and self.cellsize == other.cellsize
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
        )

    def with_values(self, values: np.ndarray, nodata: float | None = None) -> "Raster":
        """New raster sharing this header."""
        return Raster(
            values=np.asarray(values, dtype=np.float64),
            cellsize=self.cellsize,
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            nodata=self.nodata if nodata is None else nodata,
        )


@dataclass
class BinaryRaster:
    """A raster whose cells are exactly 0 or 1 (change / no-change)."""

    values: np.ndarray
    cellsize: float
    origin_x: float = 0.0
    origin_y: float = 0.0
    nodata: float = -9999.0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if not np.all((self.values == 0) | (self.values == 1)):
            raise ValueError("binary raster may only contain 0 and 1")
        self.values = self.values.astype(np.uint8)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_raster(self) -> Raster:
        return Raster(
            values=self.values.astype(np.float64),
            cellsize=self.cellsize,
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            nodata=self.nodata,
        )

    @staticmethod
    def from_raster(raster: Raster) -> "BinaryRaster":
        return BinaryRaster(
            values=raster.values,
            cellsize=raster.cellsize,
            origin_x=raster.origin_x,
            origin_y=raster.origin_y,
            nodata=raster.nodata,
        )


@dataclass
class TerrainFeatures:
    """Per-cell terrain derivatives used as explanatory variables.

    slope is in radians, flow_accumulation counts upstream cells including
    the cell itself, and the two curvatures are in 1/m. All grids share the
    source DEM header.
    """

    slope: Raster
    flow_accumulation: Raster
    plan_curvature: Raster
    tangential_curvature: Raster

    def stacked(self) -> np.ndarray:
        """Feature grids stacked along the last axis (rows, cols, 4)."""
        return np.stack(
            [
                self.slope.values,
                self.flow_accumulation.values,
                self.plan_curvature.values,
                self.tangential_curvature.values,
            ],
            axis=-1,
        )


def read_ascii_grid(path) -> Raster:
    """Read a plain-text grid file.

    Raises GridFormatError on malformed headers, row/column count
    mismatches, and unparseable values.
    """
    with open(path, "r") as fh:
        header = {}
        for key in _HEADER_KEYS:
            line = fh.readline()
            if not line:
                raise GridFormatError(f"{path}: truncated header, expected '{key}' line")
            parts = line.split()
            if len(parts) != 2 or parts[0].lower() != key:
                raise GridFormatError(f"{path}: expected header line '{key} <value>', got {line!r}")
            try:
                header[key] = float(parts[1])
            except ValueError as exc:
                raise GridFormatError(f"{path}: unparseable header value in {line!r}") from exc

        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        if header["ncols"] != ncols or header["nrows"] != nrows or ncols < 1 or nrows < 1:
            raise GridFormatError(f"{path}: ncols/nrows must be positive integers")

        try:
            flat = np.loadtxt(fh, dtype=np.float64, ndmin=1).ravel()
        except ValueError as exc:
            raise GridFormatError(f"{path}: unparseable grid value ({exc})") from exc
        if flat.size != nrows * ncols:
            raise GridFormatError(
                f"{path}: expected {nrows}x{ncols}={nrows * ncols} values, found {flat.size}"
            )

    return Raster(
        values=flat.reshape(nrows, ncols),
        cellsize=header["cellsize"],
        origin_x=header["xllcorner"],
        origin_y=header["yllcorner"],
        nodata=header["nodata_value"],
    )


def write_ascii_grid(raster, path) -> None:
    """Write a raster (or binary raster) as a plain-text grid file.

    Header floats use repr so a read-back reproduces them exactly; cell
    values are printed with 17 significant digits.
    """
    values = raster.values if isinstance(raster, Raster) else raster.to_raster().values
    with open(path, "w") as fh:
        fh.write(f"ncols {raster.cols}\n")
        fh.write(f"nrows {raster.rows}\n")
        fh.write(f"xllcorner {raster.origin_x!r}\n")
        fh.write(f"yllcorner {raster.origin_y!r}\n")
        fh.write(f"cellsize {raster.cellsize!r}\n")
        fh.write(f"NODATA_value {raster.nodata!r}\n")
        for row in values:
            fh.write(" ".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def _gradients(dem: Raster) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(dz/dx, dz/dy, bad-cell mask); central differences inside, one-sided
    at the edges. x runs east (columns), y runs north (against rows)."""
    z = dem.values
    invalid = dem.nodata_mask()
    zed = np.where(invalid, np.nan, z)
    # np.gradient: axis 0 = rows (southward), axis 1 = cols (eastward)
    dz_drow, dz_dcol = np.gradient(zed, dem.cellsize)
    dzdx = dz_dcol
    dzdy = -dz_drow  # row index grows southward
    bad = ~np.isfinite(dzdx) | ~np.isfinite(dzdy) | invalid
    return dzdx, dzdy, bad


def slope_grid(dem: Raster) -> Raster:
    """Slope in radians, atan of the gradient magnitude.

    Cells whose stencil touches nodata are nodata.
    """
    if dem.rows < 3 or dem.cols < 3:
        raise ValueError("slope needs at least a 3x3 DEM")
    dzdx, dzdy, bad = _gradients(dem)
    slope = np.arctan(np.hypot(dzdx, dzdy))
    slope[bad] = dem.nodata
    return dem.with_values(slope)


def _zt_coefficients(dem: Raster):
    """Zevenbergen-Thorne 3x3 surface coefficients per cell.

    Returns first derivatives (zx east, zy north) and second derivatives
    (zxx, zyy, zxy). Edges are computed on an edge-replicated padding.
    """
    invalid = dem.nodata_mask()
    z = np.where(invalid, np.nan, dem.values)
    zp = np.pad(z, 1, mode="edge")
    L = dem.cellsize

    c = zp[1:-1, 1:-1]
    n = zp[:-2, 1:-1]
    s = zp[2:, 1:-1]
    w = zp[1:-1, :-2]
    e = zp[1:-1, 2:]
    nw = zp[:-2, :-2]
    ne = zp[:-2, 2:]
    sw = zp[2:, :-2]
    se = zp[2:, 2:]

    zx = (e - w) / (2 * L)
    zy = (n - s) / (2 * L)
    zxx = (e + w - 2 * c) / (L * L)
    zyy = (n + s - 2 * c) / (L * L)
    zxy = (ne + sw - nw - se) / (4 * L * L)
    return zx, zy, zxx, zyy, zxy


def curvature_grids(dem: Raster) -> tuple[Raster, Raster]:
    """(plan, tangential) curvature in 1/m from the 3x3 quadratic fit.

    Positive values are convex in the respective direction; flat cells
    (zero gradient) get curvature 0.
    """
    zx, zy, zxx, zyy, zxy = _zt_coefficients(dem)
    p = zx * zx + zy * zy
    num = zxx * zy * zy - 2 * zxy * zx * zy + zyy * zx * zx
    with np.errstate(invalid="ignore", divide="ignore"):
        plan = -num / np.where(p > 0, p ** 1.5, np.inf)
        tang = -num / np.where(p > 0, p * np.sqrt(1 + p), np.inf)
    plan = np.where(p > 0, plan, 0.0)
    tang = np.where(p > 0, tang, 0.0)
    bad = ~np.isfinite(plan) | ~np.isfinite(tang)
    plan[bad] = dem.nodata
    tang[bad] = dem.nodata
    return dem.with_values(plan), dem.with_values(tang)


_NEIGHBOR_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def flow_directions(dem: Raster) -> np.ndarray:
    """Receiver index per cell for single-direction routing.

    Each cell drains to its lowest strictly-lower neighbor among the 8
    surrounding cells (ties broken by scan order, NW to SE). Sinks and
    nodata cells point at themselves. Returned as flat indices.
    """
    rows, cols = dem.shape
    z = np.where(dem.nodata_mask(), np.inf, dem.values)
    best = np.full((rows, cols), np.inf)
    idx = np.arange(rows * cols).reshape(rows, cols)
    recv = idx.copy()
    routable = np.isfinite(z)
    for dr, dc in _NEIGHBOR_OFFSETS:
        nz = np.full((rows, cols), np.inf)
        r0, r1 = max(dr, 0), rows + min(dr, 0)
        c0, c1 = max(dc, 0), cols + min(dc, 0)
        nz[r0 - dr : r1 - dr, c0 - dc : c1 - dc] = z[r0:r1, c0:c1]
        shifted_idx = np.full((rows, cols), -1, dtype=np.int64)
        shifted_idx[r0 - dr : r1 - dr, c0 - dc : c1 - dc] = idx[r0:r1, c0:c1]
        take = routable & (nz < best) & (nz < z)
        best = np.where(take, nz, best)
        recv = np.where(take, shifted_idx, recv)
    return recv.ravel()


def flow_accumulation_grid(dem: Raster) -> Raster:
    """Upstream cell count per cell (including itself).

    Cells are processed from highest to lowest elevation; every cell passes
    its accumulated count to its receiver, so sinks collect their whole
    catchment and the counts over all sinks sum to the cell total.
    """
    rows, cols = dem.shape
    recv = flow_directions(dem)
    valid = dem.valid_mask().ravel()
    acc = np.ones(rows * cols, dtype=np.float64)
    acc[~valid] = 0.0
    z = dem.values.ravel()
    order = np.argsort(z, kind="stable")[::-1]  # high to low
    for i in order:
        if not valid[i]:
            continue
        r = recv[i]
        if r != i:
            acc[r] += acc[i]
    acc_grid = acc.reshape(rows, cols)
    out = np.where(dem.valid_mask(), acc_grid, dem.nodata)
    return dem.with_values(out)


def terrain_features(dem: Raster) -> TerrainFeatures:
    """Slope, flow accumulation, and curvatures bundled."""
    plan, tang = curvature_grids(dem)
    return TerrainFeatures(
        slope=slope_grid(dem),
        flow_accumulation=flow_accumulation_grid(dem),
        plan_curvature=plan,
        tangential_curvature=tang,
    )
