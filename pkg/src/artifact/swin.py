"""Shifted-window attention denoiser with per-block time tokens.

The network is U-shaped: a patch embedding, a stack of encoder stages joined
by patch merging, a bottleneck stage, and mirrored decoder stages joined by
patch expanding with channel-concatenated skip connections.  Every stage is
built from window-attention transformer blocks; odd blocks shift their
windows by half the window size and mask attention across the wrap seam.

Time conditioning: the scalar timestep is mapped to a fixed sinusoidal
vector, then through a learnable linear layer owned by each block.  In the
``concat_token`` scheme the resulting token is appended to every attention
window and dropped again right after the attention weighting, so the block
keeps its token count.  In the ``add`` scheme it is broadcast-added to all
tokens instead.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

# Width of the sinusoidal timestep vector fed to the per-block linears.
TIME_BASE_DIM = 64

# Additive surrogate for -inf in attention masks.
MASK_NEG = -100.0

MLP_RATIO = 4


def sinusoidal_embedding(t, dim: int = TIME_BASE_DIM,
                         dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Map integer timesteps to a (N, dim) sin/cos feature vector."""
    if not torch.is_tensor(t):
        t = torch.tensor([t])
    t = t.reshape(-1).to(torch.float64)
    half = dim // 2
    freqs = torch.exp(torch.arange(half, dtype=torch.float64)
                      * (-math.log(10000.0) / max(half - 1, 1)))
    ang = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb.to(dtype)


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """(N, H, W, C) -> (N * num_windows, window * window, C), row-major.

    A lossless rearrangement; ``window_reverse`` is its exact inverse.
    """
    n, h, w, c = x.shape
    if h % window or w % window:
        raise ValueError(f"window {window} does not divide grid {h} x {w}")
    x = x.view(n, h // window, window, w // window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5).contiguous()
    return x.view(-1, window * window, c)


def window_reverse(windows: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`; returns (N, H, W, C)."""
    nw = (h // window) * (w // window)
    n = windows.shape[0] // nw
    c = windows.shape[-1]
    x = windows.view(n, h // window, w // window, window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5).contiguous()
    return x.view(n, h, w, c)


def shifted_attention_mask(grid_h: int, grid_w: int, window: int, shift: int,
                           neg: float = MASK_NEG) -> torch.Tensor:
    """Additive per-window mask for shifted-window attention.

    Returns (num_windows, window^2, window^2) with 0 for allowed pairs and
    ``neg`` for pairs of tokens that originate from different pre-shift
    regions (content wrapped across the roll seam must not attend to
    unwrapped content).  shift = 0 yields an all-zero mask.
    """
    if not 0 <= shift < window:
        raise ValueError(f"shift must satisfy 0 <= shift < window, got {shift}")
    if grid_h % window or grid_w % window:
        raise ValueError(f"window {window} does not divide grid {grid_h} x {grid_w}")
    nw = (grid_h // window) * (grid_w // window)
    if shift == 0:
        return torch.zeros(nw, window * window, window * window)

    region = torch.zeros(1, grid_h, grid_w, 1)
    bounds = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    rid = 0
    for hs in bounds:
        for ws in bounds:
            region[:, hs, ws, :] = rid
            rid += 1
    win_regions = window_partition(region, window).squeeze(-1)  # nW, window^2
    diff = win_regions[:, :, None] - win_regions[:, None, :]
    return torch.where(diff == 0, 0.0, neg)


class TimeToken(nn.Module):
    """Per-block learnable linear map from the sinusoidal base to a D token."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(TIME_BASE_DIM, dim)

    def forward(self, t_feat: torch.Tensor) -> torch.Tensor:
        return self.proj(t_feat)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside a window, with relative position bias.

    When a time token is supplied, attention runs over window^2 + 1 tokens and
    the time row is stripped from the weighted values before the output
    projection, so the module always emits window^2 tokens.
    """

    def __init__(self, dim: int, num_heads: int, window: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.window = window
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.rel_bias = nn.Parameter(torch.zeros((2 * window - 1) ** 2, num_heads))
        self.register_buffer("rel_index", _relative_index(window), persistent=False)

    def _bias_matrix(self) -> torch.Tensor:
        ws2 = self.window * self.window
        bias = self.rel_bias[self.rel_index.view(-1)]
        return bias.view(ws2, ws2, -1).permute(2, 0, 1)  # heads, ws2, ws2

    def forward(self, tokens: torch.Tensor, time_token: torch.Tensor | None = None,
                mask: torch.Tensor | None = None, need_probs: bool = False):
        b, l, d = tokens.shape
        if time_token is not None:
            if time_token.shape[-1] != d:
                raise ValueError(f"time token dim {time_token.shape[-1]} != token dim {d}")
            tokens = torch.cat([tokens, time_token.view(b, 1, d)], dim=1)

        lt = tokens.shape[1]
        qkv = self.qkv(tokens).reshape(b, lt, 3, self.num_heads, d // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)  # each: b, heads, lt, head_dim

        attn = (q * self.scale) @ k.transpose(-2, -1)

        bias = self._bias_matrix()
        if time_token is not None:
            bias = F.pad(bias, (0, 1, 0, 1))  # time token carries no position
        attn = attn + bias[None]

        if mask is not None:
            m = mask
            if time_token is not None:
                m = F.pad(m, (0, 1, 0, 1))  # time token attends everywhere
            nw = m.shape[0]
            attn = attn.view(b // nw, nw, self.num_heads, lt, lt) + m[None, :, None]
            attn = attn.view(b, self.num_heads, lt, lt)

        probs = attn.softmax(dim=-1)
        out = probs @ v
        out = out[:, :, :l]  # discard the time row; token count is preserved
        out = out.transpose(1, 2).reshape(b, l, d)
        out = self.proj(out)
        if need_probs:
            return out, probs
        return out


def _relative_index(window: int) -> torch.Tensor:
    coords = torch.stack(torch.meshgrid(torch.arange(window), torch.arange(window),
                                        indexing="ij"))
    flat = coords.flatten(1)  # 2, ws2
    rel = flat[:, :, None] - flat[:, None, :]
    rel = rel.permute(1, 2, 0) + (window - 1)
    return rel[..., 0] * (2 * window - 1) + rel[..., 1]


class SwinBlock(nn.Module):
    """One transformer block: windowed attention plus a two-layer MLP."""

    def __init__(self, dim: int, num_heads: int, grid: int, window: int,
                 shift: int, time_injection: str):
        super().__init__()
        if shift and grid <= window:
            shift = 0  # single window: shifting is a no-op
        self.grid = grid
        self.window = window
        self.shift = shift
        self.time_injection = time_injection
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, num_heads, window)
        self.time_token = TimeToken(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, MLP_RATIO * dim),
            nn.GELU(),
            nn.Linear(MLP_RATIO * dim, dim),
        )
        if shift:
            self.register_buffer(
                "attn_mask", shifted_attention_mask(grid, grid, window, shift),
                persistent=False)
        else:
            self.attn_mask = None

    def forward(self, x: torch.Tensor, t_feat: torch.Tensor) -> torch.Tensor:
        n, l, d = x.shape
        g = self.grid
        tt = self.time_token(t_feat)  # n, d

        h = self.norm1(x)
        if self.time_injection == "add":
            h = h + tt[:, None, :]
        h = h.view(n, g, g, d)
        if self.shift:
            h = torch.roll(h, shifts=(-self.shift, -self.shift), dims=(1, 2))
        wins = window_partition(h, self.window)
        nw = wins.shape[0] // n

        mask = self.attn_mask
        if mask is not None and mask.dtype != wins.dtype:
            mask = mask.to(wins.dtype)
        if self.time_injection == "concat_token":
            tt_win = tt.repeat_interleave(nw, dim=0)
            out = self.attn(wins, time_token=tt_win, mask=mask)
        else:
            out = self.attn(wins, mask=mask)

        out = window_reverse(out, self.window, g, g)
        if self.shift:
            out = torch.roll(out, shifts=(self.shift, self.shift), dims=(1, 2))
        x = x + out.view(n, l, d)
        x = x + self.mlp(self.norm2(x))
        return x


class PatchEmbed(nn.Module):
    """Non-overlapping patch projection to the token grid."""

    def __init__(self, in_channels: int, dim: int, patch: int):
        super().__init__()
        self.patch = patch
        self.proj = nn.Conv2d(in_channels, dim, kernel_size=patch, stride=patch)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.proj(x)  # n, d, g, g
        x = x.flatten(2).transpose(1, 2)
        return self.norm(x)


class PatchMerge(nn.Module):
    """2x2 token concatenation followed by a linear reduction to 2D channels."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduce = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor, grid: int) -> torch.Tensor:
        n, l, d = x.shape
        x = x.view(n, grid, grid, d)
        parts = [x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]]
        x = torch.cat(parts, dim=-1).view(n, (grid // 2) ** 2, 4 * d)
        return self.reduce(self.norm(x))


class PatchExpand(nn.Module):
    """Double the grid side, halving the channel count."""

    def __init__(self, dim: int):
        super().__init__()
        self.expand = nn.Linear(dim, 2 * dim, bias=False)
        self.norm = nn.LayerNorm(dim // 2)

    def forward(self, x: torch.Tensor, grid: int) -> torch.Tensor:
        n, l, d = x.shape
        x = self.expand(x).view(n, grid, grid, 2, 2, d // 2)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(n, (2 * grid) ** 2, d // 2)
        return self.norm(x)


class SwinDenoiser(nn.Module):
    """U-shaped shifted-window transformer predicting the added noise.

    ``depths``/``num_heads`` give the block count and head count per stage;
    the last stage is the bottleneck and the earlier ones are mirrored in the
    decoder with channel-concatenated skips.
    """

    def __init__(self, image_size: int, in_channels: int, patch: int, window: int,
                 embed_dim: int, depths, num_heads, time_injection: str):
        super().__init__()
        stages = len(depths)
        self.image_size = image_size
        self.patch = patch
        self.grids = [image_size // patch // (2 ** i) for i in range(stages)]
        self.dims = [embed_dim * (2 ** i) for i in range(stages)]
        self.time_injection = time_injection

        self.embed = PatchEmbed(in_channels, embed_dim, patch)

        def stage(i):
            return nn.ModuleList(
                SwinBlock(self.dims[i], num_heads[i], self.grids[i], window,
                          shift=0 if b % 2 == 0 else window // 2,
                          time_injection=time_injection)
                for b in range(depths[i]))

        self.encoder = nn.ModuleList(stage(i) for i in range(stages - 1))
        self.merges = nn.ModuleList(PatchMerge(self.dims[i]) for i in range(stages - 1))
        self.bottleneck = stage(stages - 1)
        self.expands = nn.ModuleList(
            PatchExpand(self.dims[i + 1]) for i in reversed(range(stages - 1)))
        self.fuses = nn.ModuleList(
            nn.Linear(2 * self.dims[i], self.dims[i]) for i in reversed(range(stages - 1)))
        self.decoder = nn.ModuleList(stage(i) for i in reversed(range(stages - 1)))

        self.out_norm = nn.LayerNorm(embed_dim)
        self.head = nn.Linear(embed_dim, patch * patch * in_channels)

    def forward(self, x: torch.Tensor, t) -> torch.Tensor:
        n, c, h, w = x.shape
        if h != self.image_size or w != self.image_size:
            raise ValueError(f"expected {self.image_size} x {self.image_size} input, "
                             f"got {h} x {w}")
        t_feat = sinusoidal_embedding(t, dtype=x.dtype)
        if t_feat.shape[0] == 1 and n > 1:
            t_feat = t_feat.expand(n, -1)
        elif t_feat.shape[0] != n:
            raise ValueError(f"{t_feat.shape[0]} timesteps for batch of {n}")

        x = self.embed(x)
        skips = []
        for i, blocks in enumerate(self.encoder):
            for blk in blocks:
                x = blk(x, t_feat)
            skips.append(x)
            x = self.merges[i](x, self.grids[i])

        for blk in self.bottleneck:
            x = blk(x, t_feat)

        for j, blocks in enumerate(self.decoder):
            i = len(self.encoder) - 1 - j  # stage index being reconstructed
            x = self.expands[j](x, self.grids[i + 1])
            x = self.fuses[j](torch.cat([x, skips[i]], dim=-1))
            for blk in blocks:
                x = blk(x, t_feat)

        x = self.out_norm(x)
        x = self.head(x)  # n, g*g, patch*patch*c
        g = self.grids[0]
        p = self.patch
        x = x.view(n, g, g, p, p, c)
        x = x.permute(0, 5, 1, 3, 2, 4).reshape(n, c, h, w)
        return x
