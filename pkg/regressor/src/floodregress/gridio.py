"""Minimal reader/writer for the plain-text grid format shared with the
simulation toolkit (six header lines, rows north to south)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


@dataclass
class Grid:
    values: np.ndarray
    cellsize: float
    origin_x: float = 0.0
    origin_y: float = 0.0
    nodata: float = -9999.0

    @property
    def shape(self):
        return self.values.shape


def read_grid(path) -> Grid:
    with open(path) as fh:
        header = {}
        for key in _HEADER_KEYS:
            parts = fh.readline().split()
            if len(parts) != 2 or parts[0].lower() != key:
                raise ValueError(f"{path}: bad header line, expected '{key} <value>'")
            header[key] = float(parts[1])
        values = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    nrows, ncols = int(header["nrows"]), int(header["ncols"])
    values = values.reshape(nrows, ncols)
    return Grid(values=values, cellsize=header["cellsize"],
                origin_x=header["xllcorner"], origin_y=header["yllcorner"],
                nodata=header["nodata_value"])


def write_grid(grid: Grid, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"ncols {grid.values.shape[1]}\n")
        fh.write(f"nrows {grid.values.shape[0]}\n")
        fh.write(f"xllcorner {grid.origin_x!r}\n")
        fh.write(f"yllcorner {grid.origin_y!r}\n")
        fh.write(f"cellsize {grid.cellsize!r}\n")
        fh.write(f"NODATA_value {grid.nodata!r}\n")
        for row in grid.values:
            fh.write(" ".join(f"{v:.17g}" for v in row))
            fh.write("\n")
