"""Encoder-decoder regression architectures.

Both models share the same encoder: per stage, two 3x3 convolutions each
followed by batch normalization and ReLU, with 2x max-pooling between
stages. They differ in how the decoder merges skip connections: gated
concatenation (attention gates) versus plain addition. Neither uses
residual blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

ARCHITECTURES = ("attention_unet", "linknet")


@dataclass
class ModelConfig:
    arch: str = "attention_unet"
    in_channels: int = 2
    out_channels: int = 1
    encoder_widths: tuple[int, ...] = (64, 128, 256, 512)
    output_activation: str = "nonneg"   # "nonneg" (water level) or "linear"

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown arch {self.arch!r}; pick one of {ARCHITECTURES}")
        if self.output_activation not in ("nonneg", "linear"):
            raise ValueError("output_activation must be 'nonneg' or 'linear'")
        if len(self.encoder_widths) < 1 or any(w <= 0 for w in self.encoder_widths):
            raise ValueError("encoder widths must be positive")
        if any(b <= a for a, b in zip(self.encoder_widths, self.encoder_widths[1:])):
            raise ValueError("encoder widths must increase")

    @property
    def depth(self) -> int:
        return len(self.encoder_widths)

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "encoder_widths": list(self.encoder_widths),
            "output_activation": self.output_activation,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(arch=d["arch"], in_channels=d["in_channels"],
                           out_channels=d["out_channels"],
                           encoder_widths=tuple(d["encoder_widths"]),
                           output_activation=d["output_activation"])


class ConvBlock(nn.Module):
    """Two 3x3 conv + batch norm + ReLU layers."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(c_in, c_out, 3, padding=1, bias=False),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
            nn.Conv2d(c_out, c_out, 3, padding=1, bias=False),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class AttentionGate(nn.Module):
    """Additive attention over a skip connection.

    The gating signal (decoder feature at the skip's resolution) and the
    skip feature are projected to an intermediate width, combined, and
    squashed to a per-pixel weight in (0, 1) that scales the skip.
    """

    def __init__(self, skip_ch: int, gate_ch: int):
        super().__init__()
        inter = max(skip_ch // 2, 1)
        self.project_skip = nn.Conv2d(skip_ch, inter, 1, bias=True)
        self.project_gate = nn.Conv2d(gate_ch, inter, 1, bias=True)
        self.score = nn.Conv2d(inter, 1, 1, bias=True)

    def forward(self, skip, gate):
        a = torch.relu(self.project_skip(skip) + self.project_gate(gate))
        psi = torch.sigmoid(self.score(a))
        return skip * psi


class Encoder(nn.Module):
    def __init__(self, in_channels: int, widths):
        super().__init__()
        chans = [in_channels, *widths]
        self.blocks = nn.ModuleList(ConvBlock(a, b) for a, b in zip(chans, chans[1:]))
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = ConvBlock(widths[-1], widths[-1] * 2)

    def forward(self, x):
        skips = []
        for block in self.blocks:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        return self.bottleneck(x), skips


def _head(c_in: int, c_out: int, activation: str) -> nn.Module:
    layers: list[nn.Module] = [nn.Conv2d(c_in, c_out, 1)]
    if activation == "nonneg":
        layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class AttentionUNet(nn.Module):
    """U-Net with attention-gated concatenation skips."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        w = config.encoder_widths
        self.encoder = Encoder(config.in_channels, w)
        ups, gates, blocks = [], [], []
        prev = w[-1] * 2
        for width in reversed(w):
            ups.append(nn.ConvTranspose2d(prev, width, 2, stride=2))
            gates.append(AttentionGate(skip_ch=width, gate_ch=width))
            blocks.append(ConvBlock(width * 2, width))
            prev = width
        self.ups = nn.ModuleList(ups)
        self.gates = nn.ModuleList(gates)
        self.blocks = nn.ModuleList(blocks)
        self.head = _head(w[0], config.out_channels, config.output_activation)

    def forward(self, x):
        x, skips = self.encoder(x)
        for up, gate, block, skip in zip(self.ups, self.gates, self.blocks,
                                         reversed(skips)):
            x = up(x)
            gated = gate(skip, x)
            x = block(torch.cat([gated, x], dim=1))
        return self.head(x)


class LinkNet(nn.Module):
    """Encoder-decoder with additive skip merging (no residual blocks)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        w = config.encoder_widths
        self.encoder = Encoder(config.in_channels, w)
        ups, blocks = [], []
        prev = w[-1] * 2
        for width in reversed(w):
            ups.append(nn.ConvTranspose2d(prev, width, 2, stride=2))
            blocks.append(ConvBlock(width, width))
            prev = width
        self.ups = nn.ModuleList(ups)
        self.blocks = nn.ModuleList(blocks)
        self.head = _head(w[0], config.out_channels, config.output_activation)

    def forward(self, x):
        x, skips = self.encoder(x)
        for up, block, skip in zip(self.ups, self.blocks, reversed(skips)):
            x = up(x)
            x = x + skip  # additive merge requires matching shapes
            x = block(x)
        return self.head(x)


def init_xavier(model: nn.Module) -> None:
    """Xavier-uniform weights on conv layers, zero biases."""
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def build_model(config: ModelConfig) -> nn.Module:
    model = AttentionUNet(config) if config.arch == "attention_unet" else LinkNet(config)
    init_xavier(model)
    return model
