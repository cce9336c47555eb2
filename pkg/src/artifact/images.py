"""Domain-tagged image batches, boolean artifact masks, and PNG I/O.

All pixel data moves through the toolkit as ``ImageTensor``: an N x C x H x W
float tensor whose ``domain`` tag records the value convention (``unit01``,
``signed11`` or ``byte255``).  Conversions between domains are exact affine
maps; byte 0 maps to -1.0 and byte 255 to +1.0 in the signed domain.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image


class Domain(enum.Enum):
    """Value convention of an image batch."""

    UNIT01 = "unit01"
    SIGNED11 = "signed11"
    BYTE255 = "byte255"


# Nominal value range per domain.  SIGNED11 is the diffusion working range:
# noisy latents carry Gaussian tails, so its bounds are advisory and only
# UNIT01/BYTE255 data is range-checked on construction.
DOMAIN_RANGE = {
    Domain.UNIT01: (0.0, 1.0),
    Domain.SIGNED11: (-1.0, 1.0),
    Domain.BYTE255: (0.0, 255.0),
}

_RANGE_TOL = 1e-6


@dataclass
class ImageTensor:
    """An N x C x H x W float image batch with an explicit value domain."""

    data: torch.Tensor
    domain: Domain

    def __post_init__(self):
        if not isinstance(self.data, torch.Tensor):
            self.data = torch.as_tensor(self.data)
        if self.data.ndim != 4:
            raise ValueError(f"expected N x C x H x W data, got shape {tuple(self.data.shape)}")
        n, c, h, w = self.data.shape
        if c not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {c}")
        if h <= 0 or w <= 0 or n <= 0:
            raise ValueError(f"empty image batch: shape {tuple(self.data.shape)}")
        if not self.data.dtype.is_floating_point:
            self.data = self.data.float()
        if not torch.isfinite(self.data).all():
            raise ValueError("image data contains non-finite values")
        if self.domain is not Domain.SIGNED11:
            lo, hi = DOMAIN_RANGE[self.domain]
            mn, mx = float(self.data.min()), float(self.data.max())
            if mn < lo - _RANGE_TOL or mx > hi + _RANGE_TOL:
                raise ValueError(
                    f"values [{mn:.4g}, {mx:.4g}] outside {self.domain.value} range [{lo}, {hi}]"
                )

    @property
    def shape(self) -> tuple:
        return tuple(self.data.shape)

    def to_domain(self, target: Domain) -> "ImageTensor":
        """Affine-convert to another value domain (identity returns self)."""
        if target is self.domain:
            return self
        x = self.data
        # Go through unit01 as the common intermediate.
        if self.domain is Domain.SIGNED11:
            x = (x + 1.0) * 0.5
        elif self.domain is Domain.BYTE255:
            x = x / 255.0
        if target is Domain.SIGNED11:
            x = x * 2.0 - 1.0
        elif target is Domain.BYTE255:
            x = x * 255.0
        return ImageTensor(x, target)

    def numpy(self) -> np.ndarray:
        return self.data.detach().cpu().numpy()


@dataclass
class ArtifactMask:
    """Boolean H x W mask; True marks artifact pixels."""

    mask: np.ndarray
    coverage: float = field(init=False)

    def __post_init__(self):
        self.mask = np.asarray(self.mask)
        if self.mask.ndim != 2:
            raise ValueError(f"mask must be H x W, got shape {self.mask.shape}")
        if self.mask.dtype != bool:
            self.mask = self.mask.astype(bool)
        self.coverage = float(self.mask.sum()) / self.mask.size

    @property
    def shape(self) -> tuple:
        return tuple(self.mask.shape)

    def torch(self) -> torch.Tensor:
        """Mask as a (1, 1, H, W) boolean tensor for channel broadcasting."""
        return torch.from_numpy(self.mask)[None, None]

    def matches(self, image: ImageTensor) -> bool:
        return self.mask.shape == tuple(image.data.shape[-2:])


def load_image(path, domain: Domain = Domain.UNIT01) -> ImageTensor:
    """Load a PNG/JPEG as a 1 x C x H x W ImageTensor in the given domain."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    x = torch.from_numpy(arr).permute(2, 0, 1)[None]  # 1,3,H,W in [0,255]
    return ImageTensor(x, Domain.BYTE255).to_domain(domain)


def to_bytes_array(img: ImageTensor) -> np.ndarray:
    """Quantize a single image to an H x W x C uint8 array."""
    b = img.to_domain(Domain.BYTE255).data[0]
    arr = b.detach().cpu().numpy()
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def save_image(img: ImageTensor, path) -> None:
    """Write a single image (batch of one) to PNG."""
    if img.data.shape[0] != 1:
        raise ValueError("save_image expects a batch of one")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_bytes_array(img).squeeze()).save(path)


def load_mask(path) -> ArtifactMask:
    """Read a single-channel mask PNG (0 = clean, 255 = artifact)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return ArtifactMask(arr >= 128)


def save_mask(mask: ArtifactMask, path) -> None:
    """Write a mask as a single-channel PNG (0 = clean, 255 = artifact)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask.mask, 255, 0).astype(np.uint8), mode="L").save(path)
