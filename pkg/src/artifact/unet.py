"""Convolutional U-Net baseline for the denoiser ablation.

Residual conv blocks with group normalization and SiLU, strided-conv
downsampling, nearest-neighbor upsampling, and additive skip connections.
Each residual block injects the timestep through its own linear layer, added
channel-wise after the first convolution.  No attention anywhere; the point
of the baseline is to isolate what window attention buys.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .swin import TIME_BASE_DIM, sinusoidal_embedding


def _group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(4 if channels % 4 == 0 else 1, channels)


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.norm1 = _group_norm(in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(TIME_BASE_DIM, out_channels)
        self.norm2 = _group_norm(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        if in_channels != out_channels:
            self.skip = nn.Conv2d(in_channels, out_channels, 1)
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor, t_feat: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(t_feat)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class UNetDenoiser(nn.Module):
    """Noise-prediction U-Net; ``depths`` counts residual blocks per level."""

    def __init__(self, image_size: int, in_channels: int, base_dim: int, depths):
        super().__init__()
        levels = len(depths)
        self.image_size = image_size
        dims = [base_dim * (2 ** i) for i in range(levels)]

        self.stem = nn.Conv2d(in_channels, base_dim, 3, padding=1)
        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        for i in range(levels - 1):
            self.enc.append(nn.ModuleList(
                ResBlock(dims[i], dims[i]) for _ in range(depths[i])))
            self.down.append(nn.Conv2d(dims[i], dims[i + 1], 3, stride=2, padding=1))
        self.mid = nn.ModuleList(
            ResBlock(dims[-1], dims[-1]) for _ in range(depths[-1]))
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(levels - 1)):
            self.up.append(nn.Conv2d(dims[i + 1], dims[i], 3, padding=1))
            self.dec.append(nn.ModuleList(
                ResBlock(dims[i], dims[i]) for _ in range(depths[i])))

        self.out_norm = _group_norm(base_dim)
        self.head = nn.Conv2d(base_dim, in_channels, 3, padding=1)

    def forward(self, x: torch.Tensor, t) -> torch.Tensor:
        n = x.shape[0]
        if x.shape[-1] != self.image_size or x.shape[-2] != self.image_size:
            raise ValueError(f"expected {self.image_size} x {self.image_size} input, "
                             f"got {x.shape[-2]} x {x.shape[-1]}")
        t_feat = sinusoidal_embedding(t, dtype=x.dtype)
        if t_feat.shape[0] == 1 and n > 1:
            t_feat = t_feat.expand(n, -1)
        elif t_feat.shape[0] != n:
            raise ValueError(f"{t_feat.shape[0]} timesteps for batch of {n}")

        x = self.stem(x)
        skips = []
        for blocks, down in zip(self.enc, self.down):
            for blk in blocks:
                x = blk(x, t_feat)
            skips.append(x)
            x = down(x)
        for blk in self.mid:
            x = blk(x, t_feat)
        for up, blocks in zip(self.up, self.dec):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = up(x) + skips.pop()
            for blk in blocks:
                x = blk(x, t_feat)
        return self.head(F.silu(self.out_norm(x)))
