"""Dataset ingestion and a procedural texture corpus.

Training consumes clean patches only.  ``ingest`` decodes a directory of
images, center-crops to square, resizes to the patch size, normalizes, and
serves shuffled batches whose order is a pure function of (shuffle_seed,
epoch).  The corpus generator fabricates stained-tissue-like textures so the
whole pipeline can run without any external data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .images import Domain, ImageTensor, save_image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class DatasetSpec:
    root_path: str
    patch_size: int = 64
    train_fraction: float = 0.9
    val_fraction: float = 0.1
    normalization: Domain = Domain.SIGNED11
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")
        if not 0.0 <= self.val_fraction <= 1.0 \
                or abs(self.train_fraction + self.val_fraction - 1.0) > 1e-9:
            raise ValueError("train and validation fractions must sum to 1")


class PatchDataset:
    """All patches resident in memory; iterable as epoch-0 training batches."""

    def __init__(self, patches: torch.Tensor, spec: DatasetSpec,
                 batch_size: int):
        self.spec = spec
        self.batch_size = batch_size
        n_val = int(round(len(patches) * spec.val_fraction))
        self.train = patches[:len(patches) - n_val]
        self.val = patches[len(patches) - n_val:]
        if len(self.train) == 0:
            raise ValueError("dataset has no training patches")

    def __len__(self) -> int:
        return len(self.train)

    def batches_per_epoch(self) -> int:
        return (len(self.train) + self.batch_size - 1) // self.batch_size

    def epoch_batches(self, epoch: int):
        """Deterministic shuffled batches for one epoch."""
        order = torch.randperm(
            len(self.train),
            generator=torch.Generator().manual_seed(
                self.spec.shuffle_seed * 100003 + epoch))
        for i in range(0, len(order), self.batch_size):
            chunk = self.train[order[i:i + self.batch_size]]
            yield ImageTensor(chunk, self.spec.normalization)

    def __iter__(self):
        return self.epoch_batches(0)

    def val_images(self):
        return [ImageTensor(self.val[i:i + 1], self.spec.normalization)
                for i in range(len(self.val))]


def _decode(path: Path, patch: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        side = min(im.size)
        left = (im.size[0] - side) // 2
        top = (im.size[1] - side) // 2
        im = im.crop((left, top, left + side, top + side))
        if side != patch:
            im = im.resize((patch, patch), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32)


def ingest(spec: DatasetSpec, batch_size: int = 8) -> PatchDataset:
    """Load every decodable image under the root into a PatchDataset."""
    root = Path(spec.root_path)
    files = sorted(p for p in root.glob("*")
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    arrays = []
    for path in files:
        try:
            arrays.append(_decode(path, spec.patch_size))
        except OSError as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
    if not arrays:
        raise ValueError(f"no decodable images under {root}")

    stack = torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2).contiguous()
    images = ImageTensor(stack, Domain.BYTE255).to_domain(spec.normalization)
    order = torch.randperm(
        len(arrays), generator=torch.Generator().manual_seed(spec.shuffle_seed))
    return PatchDataset(images.data[order], spec, batch_size)


def texture_patch(size: int, seed: int) -> ImageTensor:
    """One procedural stained-tissue-like patch in unit01."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    base = np.array([0.82, 0.64, 0.78]) + rng.uniform(-0.06, 0.06, 3)
    img = np.ones((size, size, 3)) * base

    # Low-frequency stain variation.
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.5, 2) * 2 * np.pi / size
        phase = rng.uniform(0, 2 * np.pi, 2)
        field = 0.05 * np.sin(fy * yy + phase[0]) * np.sin(fx * xx + phase[1])
        img += field[..., None] * rng.uniform(-1, 1, 3)

    # Nuclei: small dark purple blobs.
    # Floors keep tiny test patches (< 13 px) from emptying the range.
    count = rng.integers(max(1, size * size // 160),
                         max(2, size * size // 90))
    nucleus = np.array([0.28, 0.16, 0.42])
    for _ in range(count):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(1.2, 2.8)
        blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (r * r)))
        w = np.clip(blob, 0, 1)[..., None] * rng.uniform(0.5, 0.9)
        img = img * (1 - w) + w * (nucleus + rng.uniform(-0.05, 0.05, 3))

    img += rng.normal(0, 0.008, img.shape)
    img = np.clip(img, 0.02, 0.98)
    chw = torch.from_numpy(np.transpose(img, (2, 0, 1))[None]).float()
    return ImageTensor(chw, Domain.UNIT01)


def write_texture_corpus(out_dir, count: int, size: int = 64,
                         seed: int = 0) -> list:
    """Write PNG patches tex_00000.png .. ; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        path = out / f"tex_{i:05d}.png"
        save_image(texture_patch(size, seed * 1000003 + i), path)
        paths.append(path)
    return paths
