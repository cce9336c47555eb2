"""Denoiser configuration, construction, and complexity accounting.

Three variants share one config type: the shifted-window transformer with
concatenated time tokens (the default), the same transformer with additive
time injection, and a convolutional U-Net baseline.  All are noise
predictors: given a noisy image and a timestep they estimate the Gaussian
noise that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import nn

from .images import Domain, ImageTensor
from .swin import SwinDenoiser
from .unet import UNetDenoiser

BACKBONES = ("swin", "unet")
TIME_INJECTIONS = ("concat_token", "add")


@dataclass(frozen=True)
class DenoiserConfig:
    backbone: str = "swin"
    time_injection: str = "concat_token"
    patch_size: int = 2
    window_size: int = 4
    embed_dim: int = 48
    depths: tuple = (2, 2, 2)
    num_heads: tuple = (3, 6, 12)
    image_size: int = 64
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(self.depths))
        object.__setattr__(self, "num_heads", tuple(self.num_heads))
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.time_injection not in TIME_INJECTIONS:
            raise ValueError(f"unknown time_injection {self.time_injection!r}")
        if not self.depths or any(d < 1 for d in self.depths):
            raise ValueError("depths must be a nonempty tuple of positive ints")
        if self.in_channels < 1 or self.image_size < 1:
            raise ValueError("image_size and in_channels must be positive")
        stages = len(self.depths)
        if self.backbone == "unet":
            if self.image_size % (2 ** (stages - 1)):
                raise ValueError(
                    f"image_size {self.image_size} not divisible by "
                    f"2^{stages - 1} levels")
            return
        if len(self.num_heads) != stages:
            raise ValueError("num_heads must have one entry per stage")
        if self.image_size % (self.patch_size * 2 ** (stages - 1)):
            raise ValueError(
                f"image_size {self.image_size} not divisible by "
                f"patch_size {self.patch_size} x 2^{stages - 1}")
        for i, heads in enumerate(self.num_heads):
            grid = self.image_size // self.patch_size // (2 ** i)
            dim = self.embed_dim * (2 ** i)
            if grid % self.window_size:
                raise ValueError(
                    f"window_size {self.window_size} does not divide the "
                    f"stage-{i} grid side {grid}")
            if dim % heads:
                raise ValueError(
                    f"stage-{i} dim {dim} not divisible by {heads} heads")

    @property
    def stages(self) -> int:
        return len(self.depths)


def desk_config(**overrides) -> DenoiserConfig:
    """Small config that trains in minutes on a CPU."""
    return replace(DenoiserConfig(), **overrides) if overrides else DenoiserConfig()


def tiny_config(backbone: str = "swin",
                time_injection: str = "concat_token") -> DenoiserConfig:
    """Minimal config for gradient checking and hand-counted inventories."""
    if backbone == "unet":
        # Width 6 keeps a single-group norm (6 % 4 != 0) so per-channel time
        # offsets survive normalization and every parameter carries gradient.
        return DenoiserConfig(backbone="unet", time_injection="add",
                              embed_dim=6, depths=(1, 1), num_heads=(1, 1),
                              image_size=8, in_channels=1)
    return DenoiserConfig(backbone="swin", time_injection=time_injection,
                          patch_size=2, window_size=2, embed_dim=8,
                          depths=(1,), num_heads=(2,), image_size=8,
                          in_channels=1)


def full_scale_config() -> DenoiserConfig:
    """Reference configuration at the published operating resolution."""
    return DenoiserConfig(patch_size=4, window_size=8, embed_dim=96,
                          depths=(2, 2, 2, 2), num_heads=(3, 6, 12, 24),
                          image_size=256, in_channels=3)


def build_denoiser(config: DenoiserConfig, seed: int = 0) -> nn.Module:
    """Construct a denoiser with deterministic, seeded initialization."""
    if config.backbone == "swin":
        model = SwinDenoiser(config.image_size, config.in_channels,
                             config.patch_size, config.window_size,
                             config.embed_dim, config.depths, config.num_heads,
                             config.time_injection)
    else:
        model = UNetDenoiser(config.image_size, config.in_channels,
                             config.embed_dim, config.depths)
    return init_weights(model, seed)


def init_weights(model: nn.Module, seed: int = 0) -> nn.Module:
    """Seeded init: N(0, 0.02) weights, zero biases, unit norms, zero head.

    The zero output head makes the initial noise prediction identically zero,
    so training starts from loss = E[eps^2] = 1 regardless of the backbone.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, (nn.Linear, nn.Conv2d)):
                mod.weight.normal_(0.0, 0.02, generator=gen)
                if mod.bias is not None:
                    mod.bias.zero_()
            elif isinstance(mod, (nn.LayerNorm, nn.GroupNorm)):
                mod.weight.fill_(1.0)
                mod.bias.zero_()
        for name, p in model.named_parameters():
            if name.endswith("rel_bias"):
                p.normal_(0.0, 0.02, generator=gen)
        model.head.weight.zero_()
        if model.head.bias is not None:
            model.head.bias.zero_()
    return model


def randomize_weights(model: nn.Module, seed: int, scale: float = 0.1) -> nn.Module:
    """Draw every parameter from N(0, scale); norms get weight 1 + noise.

    Puts the network at a generic point where gradients flow through all
    layers, which seeded init deliberately avoids (zero head).
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.normal_(0.0, scale, generator=gen)
        for mod in model.modules():
            if isinstance(mod, (nn.LayerNorm, nn.GroupNorm)):
                mod.weight.add_(1.0)
    return model


def weight_map(model: nn.Module) -> dict:
    """Named tensor map of all learnable parameters."""
    return {name: p.detach() for name, p in model.named_parameters()}


def parameter_inventory(config: DenoiserConfig) -> list:
    """(name, shape) for every parameter the config gives rise to."""
    model = build_denoiser(config)
    return [(name, tuple(p.shape)) for name, p in model.named_parameters()]


def param_count(config_or_model) -> int:
    if isinstance(config_or_model, nn.Module):
        model = config_or_model
    else:
        model = build_denoiser(config_or_model)
    return sum(p.numel() for p in model.parameters())


def denoise_forward(model: nn.Module, x, t):
    """Predict the noise in x at timestep t; returns x's container type."""
    wrapped = isinstance(x, ImageTensor)
    raw = x.data if wrapped else x
    out = model(raw, t)
    if wrapped:
        return ImageTensor(out, Domain.SIGNED11)
    return out


def flop_count(config: DenoiserConfig, batch: int = 1) -> int:
    """Analytic floating-point operation count for one forward pass.

    Counts 2 operations per multiply-accumulate in matrix products,
    attention score/value contractions, and convolutions.  Normalizations,
    activations, and reshapes are not counted.
    """
    if config.backbone == "swin":
        macs = _swin_macs(config)
    else:
        macs = _unet_macs(config)
    return 2 * macs * batch


def _swin_macs(c: DenoiserConfig) -> int:
    from .swin import TIME_BASE_DIM

    stages = c.stages
    grids = [c.image_size // c.patch_size // (2 ** i) for i in range(stages)]
    dims = [c.embed_dim * (2 ** i) for i in range(stages)]
    w2 = c.window_size ** 2
    concat = c.time_injection == "concat_token"

    def block(g, d):
        nw = (g // c.window_size) ** 2
        lt = w2 + 1 if concat else w2
        m = TIME_BASE_DIM * d            # per-block time linear
        m += nw * lt * d * 3 * d         # qkv over window tokens (+ time token)
        m += 2 * nw * lt * lt * d        # scores and value contraction
        m += g * g * d * d               # output projection (time row dropped)
        m += 2 * g * g * d * 4 * d       # MLP
        return m

    total = grids[0] ** 2 * dims[0] * c.patch_size ** 2 * c.in_channels  # embed
    for i in range(stages - 1):
        total += c.depths[i] * block(grids[i], dims[i])                  # encoder
        total += (grids[i] // 2) ** 2 * 4 * dims[i] * 2 * dims[i]        # merge
    total += c.depths[-1] * block(grids[-1], dims[-1])                   # bottleneck
    for i in reversed(range(stages - 1)):
        total += grids[i + 1] ** 2 * dims[i + 1] * 2 * dims[i + 1]       # expand
        total += grids[i] ** 2 * 2 * dims[i] * dims[i]                   # fuse
        total += c.depths[i] * block(grids[i], dims[i])                  # decoder
    total += grids[0] ** 2 * dims[0] * c.patch_size ** 2 * c.in_channels  # head
    return total


def _unet_macs(c: DenoiserConfig) -> int:
    from .swin import TIME_BASE_DIM

    levels = c.stages
    dims = [c.embed_dim * (2 ** i) for i in range(levels)]
    sides = [c.image_size // (2 ** i) for i in range(levels)]

    def conv(side, cin, cout, k):
        return side * side * cout * k * k * cin

    def res(side, cin, cout):
        m = conv(side, cin, cout, 3) + conv(side, cout, cout, 3)
        m += TIME_BASE_DIM * cout
        if cin != cout:
            m += conv(side, cin, cout, 1)
        return m

    total = conv(sides[0], c.in_channels, dims[0], 3)                    # stem
    for i in range(levels - 1):
        total += c.depths[i] * res(sides[i], dims[i], dims[i])           # encoder
        total += conv(sides[i + 1], dims[i], dims[i + 1], 3)             # down
    total += c.depths[-1] * res(sides[-1], dims[-1], dims[-1])           # middle
    for i in reversed(range(levels - 1)):
        total += conv(sides[i], dims[i + 1], dims[i], 3)                 # up
        total += c.depths[i] * res(sides[i], dims[i], dims[i])           # decoder
    total += conv(sides[0], dims[0], c.in_channels, 3)                   # head
    return total
