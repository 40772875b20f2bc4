"""Vegetation-index change detection from pre/post optical band rasters.

Two spectral indices are supported: the normalized difference vegetation
index from near-infrared and red, and the visible atmospherically
resistant index from the RGB bands when no near-infrared is available.
Change is flagged where a cell was vegetated before and is not after.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import BinaryRaster, Raster

DENOM_FLOOR = 1e-12
NDVI_DEFAULT_THRESHOLD = 0.7
VARI_DEFAULT_THRESHOLD = 0.0


@dataclass
class BandSet:
    """Named reflectance rasters sharing one header; nir is optional."""

    red: Raster
    green: Raster
    blue: Raster
    nir: Raster | None = None

    def __post_init__(self):
        for name in ("green", "blue", "nir"):
            band = getattr(self, name)
            if band is not None and not band.header_matches(self.red):
                raise ValueError(f"band {name} does not share the red band header")


def ndvi(bands: BandSet) -> Raster:
    """(nir - red) / (nir + red); degenerate denominators become nodata."""
    if bands.nir is None:
        raise ValueError("ndvi needs a near-infrared band")
    nir, red = bands.nir.values, bands.red.values
    den = nir + red
    bad = (np.abs(den) < DENOM_FLOOR) | (nir == bands.nir.nodata) | (red == bands.red.nodata)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (nir - red) / den
    out = np.where(bad, bands.red.nodata, out)
    return bands.red.with_values(out)


def vari(bands: BandSet) -> Raster:
    """(green - red) / (green + red - blue); degenerate denominators
    become nodata."""
    g, r, b = bands.green.values, bands.red.values, bands.blue.values
    den = g + r - b
    bad = np.abs(den) < DENOM_FLOOR
    for band in (bands.green, bands.red, bands.blue):
        bad |= band.values == band.nodata
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (g - r) / den
    out = np.where(bad, bands.red.nodata, out)
    return bands.red.with_values(out)


def vegetation_loss(pre_index: Raster, post_index: Raster,
                    threshold: float = NDVI_DEFAULT_THRESHOLD) -> tuple[BinaryRaster, BinaryRaster]:
    """Binary change map of vegetation loss, plus a validity mask.

    A cell changes iff it was at or above the vegetation threshold before
    and below it after; cells that were bare before therefore can never
    flag (the detector's structural false negatives). Nodata in either
    index yields 0 in the change map and 0 in the validity mask.
    """
    if not pre_index.header_matches(post_index):
        raise ValueError("pre and post index rasters must share a header")
    valid = pre_index.valid_mask() & post_index.valid_mask()
    changed = valid & (pre_index.values >= threshold) & (post_index.values < threshold)
    header = dict(cellsize=pre_index.cellsize, origin_x=pre_index.origin_x,
                  origin_y=pre_index.origin_y, nodata=pre_index.nodata)
    return (
        BinaryRaster(values=changed.astype(np.uint8), **header),
        BinaryRaster(values=valid.astype(np.uint8), **header),
    )
