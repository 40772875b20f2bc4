"""Reader for the binary patch-file format produced by the simulation
toolkit, plus a torch Dataset over it.

Layout (little-endian): magic b"TSP1", u32 patch size, u32 channels,
then records of (case_id u64, row u32, col u32, input f32[ch*ps*ps],
target f32[ps*ps]).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch.utils.data import Dataset

MAGIC = b"TSP1"


@dataclass
class PatchRecord:
    input: np.ndarray   # (channels, ps, ps) float32
    target: np.ndarray  # (ps, ps) float32
    case_id: int
    row: int
    col: int


def read_patch_file(path) -> list[PatchRecord]:
    records = []
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a patch file")
        ps, channels = struct.unpack("<II", fh.read(8))
        head = struct.Struct("<QII")
        in_bytes = 4 * channels * ps * ps
        tg_bytes = 4 * ps * ps
        while True:
            raw = fh.read(head.size)
            if not raw:
                break
            case_id, row, col = head.unpack(raw)
            buf = fh.read(in_bytes + tg_bytes)
            if len(buf) != in_bytes + tg_bytes:
                raise ValueError(f"{path}: truncated record")
            inp = np.frombuffer(buf[:in_bytes], dtype="<f4").reshape(channels, ps, ps)
            tgt = np.frombuffer(buf[in_bytes:], dtype="<f4").reshape(ps, ps)
            records.append(PatchRecord(inp.copy(), tgt.copy(), case_id, row, col))
    return records


def write_patch_file(path, records: list[PatchRecord]) -> None:
    if not records:
        raise ValueError("nothing to write")
    channels, ps, _ = records[0].input.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", ps, channels))
        for r in records:
            fh.write(struct.pack("<QII", r.case_id, r.row, r.col))
            fh.write(r.input.astype("<f4").tobytes())
            fh.write(r.target.astype("<f4").tobytes())


class PatchDataset(Dataset):
    """Patches as (input, target) tensor pairs with target normalization.

    Targets are divided by `scale` and clipped to [-1, 1] (water-level
    targets are non-negative so they land in [0, 1]); inference reverses
    the scaling.
    """

    def __init__(self, path, scale: float = 1.0):
        self.records = read_patch_file(path)
        if not self.records:
            raise ValueError(f"{path}: empty dataset")
        self.scale = float(scale)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        rec = self.records[i]
        x = torch.from_numpy(rec.input)
        y = np.clip(rec.target / self.scale, -1.0, 1.0)
        return x, torch.from_numpy(y).unsqueeze(0)
