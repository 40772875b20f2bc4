"""Training loop: Adam, smooth-L1 loss, per-epoch mean loss, seeded
determinism, checkpoint with a JSON sidecar describing the run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import torch
from torch.utils.data import DataLoader

from .losses import smooth_l1
from .models import ModelConfig, build_model
from .patches import PatchDataset

TARGET_SCALES = {"water_level": 10.0, "deformation": 5.0}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 32
    epochs: int = 200
    delta: float = 1.0
    seed: int = 0
    target: str = "water_level"   # or "deformation"
    scale: float | None = None    # target normalization; default per target

    def __post_init__(self):
        if self.lr <= 0 or self.delta <= 0:
            raise ValueError("lr and delta must be positive")
        if self.target not in TARGET_SCALES:
            raise ValueError(f"target must be one of {sorted(TARGET_SCALES)}")
        if self.scale is None:
            self.scale = TARGET_SCALES[self.target]

    def to_dict(self) -> dict:
        return {"lr": self.lr, "batch": self.batch, "epochs": self.epochs,
                "delta": self.delta, "seed": self.seed, "target": self.target,
                "scale": self.scale}


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def train(model_config: ModelConfig, dataset_path, train_config: TrainConfig,
          out_dir, device: str = "cpu",
          manifest_path=None) -> tuple[Path, list[float]]:
    """Train one model on a patch file; returns (checkpoint path, loss curve).

    Deterministic under the config seed (single-process data loading,
    seeded shuffling). Aborts on a non-finite loss with the epoch/step.
    The sidecar records the dataset hash, and the dataset manifest hash
    when a manifest is given or found next to the patch file.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(train_config.seed)

    data = PatchDataset(dataset_path, scale=train_config.scale)
    loader = DataLoader(
        data, batch_size=train_config.batch, shuffle=True,
        generator=torch.Generator().manual_seed(train_config.seed),
        num_workers=0,
    )
    model = build_model(model_config).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.lr)

    curve = []
    model.train()
    for epoch in range(train_config.epochs):
        total = 0.0
        count = 0
        for step, (x, y) in enumerate(loader):
            x = x.to(device)
            y = y.to(device)
            optimizer.zero_grad()
            pred = model(x)
            loss = smooth_l1(y, pred, train_config.delta)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, step {step}")
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * x.shape[0]
            count += x.shape[0]
        curve.append(total / count)

    name = f"{model_config.arch}_{train_config.target}"
    ckpt_path = out_dir / f"{name}.pt"
    torch.save(model.state_dict(), ckpt_path)
    if manifest_path is None:
        split = Path(dataset_path).stem.rsplit("_", 1)[-1]
        candidate = Path(dataset_path).parent / f"manifest_{split}.json"
        manifest_path = candidate if candidate.exists() else None
    sidecar = {
        "model": model_config.to_dict(),
        "train": train_config.to_dict(),
        "dataset": str(dataset_path),
        "dataset_sha256": _file_sha256(dataset_path),
        "manifest_sha256": _file_sha256(manifest_path) if manifest_path else None,
        "final_loss": curve[-1],
        "loss_curve": curve,
    }
    with open(out_dir / f"{name}.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
    return ckpt_path, curve


def load_checkpoint(ckpt_path, device: str = "cpu"):
    """Rebuild a model (and its sidecar metadata) from disk."""
    ckpt_path = Path(ckpt_path)
    with open(ckpt_path.with_suffix(".json")) as fh:
        sidecar = json.load(fh)
    model = build_model(ModelConfig.from_dict(sidecar["model"]))
    model.load_state_dict(torch.load(ckpt_path, map_location=device, weights_only=True))
    model.eval()
    return model, sidecar
