"""Synthetic binary change maps and training patches from simulation runs.

The corruption pipeline degrades a clean thresholded change map the way a
real detector would: unvegetated areas are masked out, morphological
erosion eats thin shapes (false negatives), independent per-pixel noise
adds false positives, and cutout zeroes random rectangles of both the
input and the target so the models see true negatives.

Patch files (extension .tsp) are little-endian binary: a 12-byte header
of magic b"TSP1", u32 patch size, u32 channel count, followed by records
of (case_id u64, row u32, col u32, input f32[ch*ps*ps], target
f32[ps*ps]).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .grid import BinaryRaster, Raster

PATCH_MAGIC = b"TSP1"
SLOPE_SCALE = float(np.pi / 2)


@dataclass
class CorruptionParams:
    """Knobs of the binarization/corruption pipeline."""

    truth_threshold: float = 0.1     # |target| >= this is "changed", metres
    veg_threshold: float | None = None  # pre-disaster index floor; None skips masking
    erosion_radius: int = 1
    erosion_iterations: int = 1
    fp_rate: float = 0.005
    cutout_count: int = 2
    cutout_size_range: tuple[int, int] = (16, 64)
    seed: int = 0

    def validate(self):
        if not (0.0 <= self.fp_rate <= 1.0):
            raise ValueError("fp_rate must be within [0, 1]")
        if self.erosion_radius < 0 or self.erosion_iterations < 0:
            raise ValueError("erosion radius/iterations must be non-negative")
        if self.truth_threshold <= 0:
            raise ValueError("truth_threshold must be positive")

    def to_dict(self) -> dict:
        return {
            "truth_threshold": self.truth_threshold,
            "veg_threshold": self.veg_threshold,
            "erosion_radius": self.erosion_radius,
            "erosion_iterations": self.erosion_iterations,
            "fp_rate": self.fp_rate,
            "cutout_count": self.cutout_count,
            "cutout_size_range": list(self.cutout_size_range),
            "seed": self.seed,
        }


@dataclass
class PatchSample:
    """One training sample: (binary change, normalized slope) -> target."""

    input: np.ndarray    # (2, ps, ps) float32; ch0 in {0,1}, ch1 in [0,1]
    target: np.ndarray   # (ps, ps) float32
    case_id: int = 0
    row: int = 0
    col: int = 0


def threshold_truth(target: Raster, t: float) -> BinaryRaster:
    """1 where |value| >= t: erosion and deposition both count as change."""
    if t <= 0:
        raise ValueError("threshold must be positive")
    vals = np.where(target.valid_mask(), np.abs(target.values) >= t, False)
    return BinaryRaster(values=vals.astype(np.uint8), cellsize=target.cellsize,
                        origin_x=target.origin_x, origin_y=target.origin_y,
                        nodata=target.nodata)


def mask_unvegetated(change: BinaryRaster, pre_index: Raster,
                     veg_threshold: float) -> BinaryRaster:
    """Drop change where the pre-disaster vegetation index is below the
    threshold (the detector cannot see change there)."""
    if change.shape != pre_index.shape:
        raise ValueError("change map and index raster differ in shape")
    out = change.values.copy()
    out[pre_index.values < veg_threshold] = 0
    return BinaryRaster(values=out, cellsize=change.cellsize,
                        origin_x=change.origin_x, origin_y=change.origin_y,
                        nodata=change.nodata)


def erode(change: BinaryRaster, radius: int, iterations: int) -> BinaryRaster:
    """Binary erosion with a (2r+1)-square element; outside the grid is 0."""
    if iterations >= 1 and radius < 1:
        raise ValueError("erosion with iterations needs radius >= 1")
    out = change.values.astype(bool)
    if radius >= 1 and iterations >= 1:
        selem = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
        out = ndimage.binary_erosion(out, structure=selem, iterations=iterations,
                                     border_value=0)
    return BinaryRaster(values=out.astype(np.uint8), cellsize=change.cellsize,
                        origin_x=change.origin_x, origin_y=change.origin_y,
                        nodata=change.nodata)


def add_false_positives(change: BinaryRaster, fp_rate: float, seed: int) -> BinaryRaster:
    """Flip each 0-cell to 1 with probability fp_rate (Philox stream)."""
    if not (0.0 <= fp_rate <= 1.0):
        raise ValueError("fp_rate must be within [0, 1]")
    gen = np.random.Generator(np.random.Philox(seed))
    u = gen.random(change.shape)
    out = change.values.copy()
    out[(out == 0) & (u < fp_rate)] = 1
    return BinaryRaster(values=out, cellsize=change.cellsize,
                        origin_x=change.origin_x, origin_y=change.origin_y,
                        nodata=change.nodata)


def cutout(sample: PatchSample, params: CorruptionParams,
           seed: int | None = None) -> PatchSample:
    """Zero seeded random rectangles in the change channel AND the target.

    The slope channel is untouched. Zeroing input and target together
    creates consistent no-change regions instead of an inpainting task.
    """
    if params.cutout_count == 0:
        return sample
    ps = sample.input.shape[1]
    lo, hi = params.cutout_size_range
    if hi > ps:
        raise ValueError("cutout rectangles must fit within the patch")
    gen = np.random.Generator(np.random.Philox(params.seed if seed is None else seed))
    inp = sample.input.copy()
    tgt = sample.target.copy()
    for _ in range(params.cutout_count):
        height = int(gen.integers(lo, hi + 1))
        width = int(gen.integers(lo, hi + 1))
        r0 = int(gen.integers(0, ps - height + 1))
        c0 = int(gen.integers(0, ps - width + 1))
        inp[0, r0:r0 + height, c0:c0 + width] = 0.0
        tgt[r0:r0 + height, c0:c0 + width] = 0.0
    return PatchSample(input=inp, target=tgt, case_id=sample.case_id,
                       row=sample.row, col=sample.col)


def patchify(change: BinaryRaster, slope: Raster, target: Raster,
             patch: int = 256, stride: int = 256, case_id: int = 0) -> list[PatchSample]:
    """Row-major tiling into (change, slope)->target patches.

    Partial edge tiles are dropped; the slope channel is normalized by
    pi/2 so it lands in [0, 1].
    """
    rows, cols = change.shape
    if rows < patch or cols < patch:
        raise ValueError(f"grid {rows}x{cols} smaller than patch {patch}")
    slope_norm = np.clip(np.where(slope.valid_mask(), slope.values, 0.0) / SLOPE_SCALE, 0.0, 1.0)
    tgt = np.where(target.valid_mask(), target.values, 0.0)
    samples = []
    for r0 in range(0, rows - patch + 1, stride):
        for c0 in range(0, cols - patch + 1, stride):
            window = (slice(r0, r0 + patch), slice(c0, c0 + patch))
            inp = np.stack([
                change.values[window].astype(np.float32),
                slope_norm[window].astype(np.float32),
            ])
            samples.append(PatchSample(
                input=inp,
                target=tgt[window].astype(np.float32),
                case_id=case_id, row=r0, col=c0,
            ))
    return samples


def write_patches(path, samples: list[PatchSample], patch: int = 256,
                  channels: int = 2) -> None:
    """Write samples in the binary patch-file layout (see module docs)."""
    with open(path, "wb") as fh:
        fh.write(PATCH_MAGIC)
        fh.write(struct.pack("<II", patch, channels))
        for s in samples:
            if s.input.shape != (channels, patch, patch) or s.target.shape != (patch, patch):
                raise ValueError("sample shape does not match the file header")
            fh.write(struct.pack("<QII", s.case_id, s.row, s.col))
            fh.write(s.input.astype("<f4").tobytes())
            fh.write(s.target.astype("<f4").tobytes())


def read_patches(path) -> list[PatchSample]:
    """Read a binary patch file back into samples."""
    samples = []
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PATCH_MAGIC:
            raise ValueError(f"{path}: not a patch file (magic {magic!r})")
        patch, channels = struct.unpack("<II", fh.read(8))
        rec_head = struct.Struct("<QII")
        in_bytes = 4 * channels * patch * patch
        tg_bytes = 4 * patch * patch
        while True:
            head = fh.read(rec_head.size)
            if not head:
                break
            case_id, row, col = rec_head.unpack(head)
            buf = fh.read(in_bytes + tg_bytes)
            if len(buf) != in_bytes + tg_bytes:
                raise ValueError(f"{path}: truncated record")
            inp = np.frombuffer(buf[:in_bytes], dtype="<f4").reshape(channels, patch, patch)
            tgt = np.frombuffer(buf[in_bytes:], dtype="<f4").reshape(patch, patch)
            samples.append(PatchSample(input=inp.copy(), target=tgt.copy(),
                                       case_id=case_id, row=row, col=col))
    return samples


def corrupt_change_map(target: Raster, pre_index: Raster | None,
                       params: CorruptionParams, case_seed: int) -> BinaryRaster:
    """threshold -> vegetation mask -> erosion -> false positives."""
    change = threshold_truth(target, params.truth_threshold)
    if pre_index is not None and params.veg_threshold is not None:
        change = mask_unvegetated(change, pre_index, params.veg_threshold)
    change = erode(change, params.erosion_radius, params.erosion_iterations)
    change = add_false_positives(change, params.fp_rate, case_seed)
    return change


def _case_seed(base: int, case_id: int, stage: int) -> int:
    """Per-case, per-stage stream seed: base xor case, folded with stage."""
    return int(np.uint64(base) ^ np.uint64(case_id)) * 1_000_003 + stage


def synth_dataset(cases, dem_slope: Raster, pre_index: Raster | None,
                  params: CorruptionParams, out_dir, patch: int = 256,
                  stride: int = 256, split_name: str = "train") -> dict:
    """Corrupt and patchify every case into one patch file per variable.

    `cases` yields (case_id, SimOutputs-like) pairs; each target variable
    (maximum water level, deformation) becomes its own dataset file named
    `<variable>_<split>.tsp`. Returns the manifest dictionary (also
    written alongside the files).
    """
    params.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    variables = ("max_water_level", "deformation")
    per_file: dict[str, list[PatchSample]] = {v: [] for v in variables}
    per_case_counts: dict[str, dict[str, int]] = {}

    for case_id, outputs in cases:
        counts = {}
        for var in variables:
            target = getattr(outputs, var)
            change = corrupt_change_map(target, pre_index, params,
                                        _case_seed(params.seed, case_id, 1))
            samples = patchify(change, dem_slope, target, patch=patch,
                               stride=stride, case_id=case_id)
            cut = [
                cutout(s, params, seed=_case_seed(params.seed, case_id, 2) + 31 * k)
                for k, s in enumerate(samples)
            ]
            per_file[var].extend(cut)
            counts[var] = len(cut)
        per_case_counts[str(case_id)] = counts

    files = {}
    for var in variables:
        fname = f"{var}_{split_name}.tsp"
        write_patches(out_dir / fname, per_file[var], patch=patch)
        files[var] = fname

    manifest = {
        "split": split_name,
        "patch": patch,
        "stride": stride,
        "params": params.to_dict(),
        "files": files,
        "patch_counts": {v: len(per_file[v]) for v in variables},
        "per_case_counts": per_case_counts,
    }
    with open(out_dir / f"manifest_{split_name}.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
