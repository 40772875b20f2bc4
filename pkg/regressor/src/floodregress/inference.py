"""Whole-scene inference by overlapping tiles, and model fusion."""

from __future__ import annotations

import numpy as np
import torch

SLOPE_SCALE = float(np.pi / 2)


def fuse(out_a: np.ndarray, out_b: np.ndarray) -> np.ndarray:
    """Elementwise mean of two model outputs."""
    a = np.asarray(out_a)
    b = np.asarray(out_b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return (a + b) / 2


@torch.no_grad()
def infer_scene(model, change_map: np.ndarray, slope: np.ndarray,
                tile: int = 256, overlap: int = 32, scale: float = 1.0,
                nonneg: bool = False, device: str = "cpu") -> np.ndarray:
    """Predict a full scene from a binary change map and slope (radians).

    The scene is covered with `tile`-sized windows at stride
    tile - overlap (edge windows snapped inward so the whole scene is
    covered); overlapping predictions are averaged per pixel. The output
    is un-normalized by `scale` and clamped non-negative when requested.
    """
    rows, cols = change_map.shape
    if rows < tile or cols < tile:
        raise ValueError(f"scene {rows}x{cols} smaller than tile {tile}")
    if slope.shape != change_map.shape:
        raise ValueError("change map and slope differ in shape")

    stride = tile - overlap
    starts_r = sorted({min(r0, rows - tile) for r0 in range(0, rows, stride) if r0 < rows})
    starts_c = sorted({min(c0, cols - tile) for c0 in range(0, cols, stride) if c0 < cols})

    slope_norm = np.clip(slope / SLOPE_SCALE, 0.0, 1.0)
    accum = np.zeros((rows, cols), dtype=np.float64)
    weight = np.zeros((rows, cols), dtype=np.float64)

    model.eval()
    for r0 in starts_r:
        for c0 in starts_c:
            win = (slice(r0, r0 + tile), slice(c0, c0 + tile))
            x = np.stack([change_map[win], slope_norm[win]]).astype(np.float32)
            t = torch.from_numpy(x).unsqueeze(0).to(device)
            pred = model(t)[0, 0].cpu().numpy().astype(np.float64)
            accum[win] += pred
            weight[win] += 1.0
    out = accum / weight * scale
    if nonneg:
        out = np.maximum(out, 0.0)
    return out
