"""Artifact detection and synthesis.

Detection is a threshold rule over luminance and saturation followed by
binary morphology; it supplies masks at inference time when none are given.
Synthesis manufactures paired (corrupted, clean, truth-mask) data from clean
images for evaluation: darkened fold curves, bright bubbles with a dark rim,
ink blots, and smooth illumination gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage
from scipy.interpolate import splev, splprep
from scipy.spatial import cKDTree

from .images import ArtifactMask, Domain, ImageTensor

ARTIFACT_KINDS = ("fold", "bubble", "ink", "illumination")

# Saturated stains seen on real slides: blue, green, red ink and black marker.
INK_COLORS = ((0.08, 0.12, 0.62), (0.10, 0.48, 0.16),
              (0.58, 0.09, 0.10), (0.06, 0.05, 0.07))


@dataclass(frozen=True)
class DetectorParams:
    dark_luma_threshold: float = 0.35
    saturation_threshold: float = 0.82
    dilation_radius: int = 2
    min_component_area: int = 12

    def __post_init__(self):
        if not 0.0 < self.dark_luma_threshold < 1.0:
            raise ValueError("dark_luma_threshold must lie in (0, 1)")
        if not 0.0 < self.saturation_threshold < 1.0:
            raise ValueError("saturation_threshold must lie in (0, 1)")
        if self.dilation_radius < 0 or self.min_component_area < 0:
            raise ValueError("dilation_radius and min_component_area must be "
                             "nonnegative")


def _unit01_hwc(x: ImageTensor) -> np.ndarray:
    if x.data.shape[0] != 1:
        raise ValueError("expected a single image (batch of 1)")
    if x.data.shape[-1] == 0 or x.data.shape[-2] == 0:
        raise ValueError("empty image")
    arr = x.to_domain(Domain.UNIT01).data[0].numpy()
    return np.transpose(arr, (1, 2, 0)).astype(np.float64)


def luminance(hwc: np.ndarray) -> np.ndarray:
    if hwc.shape[-1] == 1:
        return hwc[..., 0]
    return 0.299 * hwc[..., 0] + 0.587 * hwc[..., 1] + 0.114 * hwc[..., 2]


def saturation(hwc: np.ndarray) -> np.ndarray:
    if hwc.shape[-1] == 1:
        return np.zeros(hwc.shape[:2])
    mx = hwc.max(axis=-1)
    mn = hwc.min(axis=-1)
    return np.where(mx > 0, (mx - mn) / np.maximum(mx, 1e-12), 0.0)


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    return yy * yy + xx * xx <= radius * radius


def detect_artifacts(x: ImageTensor,
                     p: DetectorParams = DetectorParams()) -> ArtifactMask:
    """Flag dark or over-saturated pixels, then clean the mask up.

    With dilation_radius = 0 and min_component_area = 0 the result is the
    raw per-pixel predicate with no morphology at all.
    """
    hwc = _unit01_hwc(x)
    raw = (luminance(hwc) < p.dark_luma_threshold) \
        | (saturation(hwc) > p.saturation_threshold)
    mask = raw
    if p.dilation_radius > 0:
        mask = ndimage.binary_closing(mask, structure=_disk(p.dilation_radius))
    if p.min_component_area > 0:
        labels, count = ndimage.label(mask, structure=np.ones((3, 3)))
        if count:
            areas = np.bincount(labels.ravel())
            keep = areas >= p.min_component_area
            keep[0] = False
            mask = keep[labels]
    if p.dilation_radius > 0:
        mask = ndimage.binary_dilation(mask, structure=_disk(p.dilation_radius))
    return ArtifactMask(np.ascontiguousarray(mask))


@dataclass(frozen=True)
class SyntheticArtifactSpec:
    """Recipe for one synthetic artifact; geometry defaults come from seed."""

    kind: str
    seed: int = 0
    intensity: float = 0.8
    control_points: tuple | None = None  # fold: ((y, x), ...) pixel coords
    center: tuple | None = None          # bubble / ink: (y, x)
    radius: float | None = None          # bubble
    blob_extent: float | None = None     # ink: cluster spread in pixels
    direction_deg: float | None = None   # illumination

    def __post_init__(self):
        if self.kind not in ARTIFACT_KINDS:
            raise ValueError(f"unknown artifact kind {self.kind!r}")
        if not 0.0 < self.intensity <= 1.0:
            raise ValueError("intensity must lie in (0, 1]")


def synthesize_artifact(x: ImageTensor, spec: SyntheticArtifactSpec):
    """Corrupt a clean image; returns (corrupted, truth mask).

    Deterministic for a fixed ``spec`` argument.  Every pixel outside the
    truth mask is copied from the input unchanged, bit for bit.
    """
    hwc = _unit01_hwc(x)
    h, w = hwc.shape[:2]
    rng = np.random.default_rng(spec.seed)
    kind = spec.kind
    if kind == "fold":
        blend, footprint = _fold(hwc, spec, rng)
    elif kind == "bubble":
        blend, footprint = _bubble(hwc, spec, rng)
    elif kind == "ink":
        blend, footprint = _ink(hwc, spec, rng)
    else:
        blend, footprint = _illumination(hwc, spec, rng)

    blend = np.clip(blend, 0.0, 1.0)
    chw = torch.from_numpy(np.transpose(blend, (2, 0, 1))[None])
    blended = ImageTensor(chw.to(x.data.dtype), Domain.UNIT01).to_domain(x.domain)
    fp = torch.from_numpy(footprint)[None, None]
    corrupted = ImageTensor(torch.where(fp, blended.data, x.data), x.domain)
    return corrupted, ArtifactMask(footprint)


def _check_point(pt, h, w):
    if not (0 <= pt[0] < h and 0 <= pt[1] < w):
        raise ValueError(f"point {tuple(pt)} outside {h} x {w} image")


def _fold(hwc, spec, rng):
    h, w = hwc.shape[:2]
    if spec.control_points is not None:
        pts = np.asarray(spec.control_points, dtype=np.float64)
    else:
        k = 4
        pts = np.stack([rng.uniform(0.1 * h, 0.9 * h, k),
                        rng.uniform(0.1 * w, 0.9 * w, k)], axis=1)
        pts = pts[np.argsort(pts[:, 1])]  # left to right, folds rarely loop
    for pt in pts:
        _check_point(pt, h, w)
    if len(pts) < 2:
        raise ValueError("fold needs at least two control points")

    degree = min(3, len(pts) - 1)
    tck, _ = splprep([pts[:, 0], pts[:, 1]], s=0, k=degree)
    ys, xs = splev(np.linspace(0, 1, 40 * len(pts)), tck)
    curve = np.stack([ys, xs], axis=1)

    thickness = max(2.5, 0.05 * min(h, w)) * (0.8 + 0.4 * rng.random())
    yy, xx = np.mgrid[0:h, 0:w]
    grid = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    dist = cKDTree(curve).query(grid)[0].reshape(h, w)

    footprint = dist <= thickness
    # Darker toward the crease center, never a no-op inside the footprint.
    depth = np.exp(-(dist / (0.6 * thickness)) ** 2)
    mult = 1.0 - spec.intensity * (0.25 + 0.72 * depth)
    return hwc * mult[..., None], footprint


def _bubble(hwc, spec, rng):
    h, w = hwc.shape[:2]
    cy, cx = spec.center if spec.center is not None else (
        rng.uniform(0.25 * h, 0.75 * h), rng.uniform(0.25 * w, 0.75 * w))
    _check_point((cy, cx), h, w)
    r = spec.radius if spec.radius is not None \
        else rng.uniform(0.12, 0.22) * min(h, w)
    if r <= 0:
        raise ValueError("bubble radius must be positive")

    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    footprint = d2 <= r * r
    d = np.sqrt(d2)
    rim = np.clip((d - 0.78 * r) / (0.22 * r), 0.0, 1.0)
    lift = spec.intensity * 0.55 * (1.0 - (d / r) ** 2).clip(0.0, 1.0)
    out = hwc + lift[..., None] * (1.0 - hwc)
    out = out * (1.0 - spec.intensity * 0.6 * rim[..., None])
    return out, footprint


def _ink(hwc, spec, rng):
    h, w = hwc.shape[:2]
    cy, cx = spec.center if spec.center is not None else (
        rng.uniform(0.3 * h, 0.7 * h), rng.uniform(0.3 * w, 0.7 * w))
    _check_point((cy, cx), h, w)
    extent = spec.blob_extent if spec.blob_extent is not None \
        else rng.uniform(0.12, 0.2) * min(h, w)
    if extent <= 0:
        raise ValueError("blob extent must be positive")

    color = np.array(INK_COLORS[rng.integers(len(INK_COLORS))])
    yy, xx = np.mgrid[0:h, 0:w]
    alpha = np.zeros((h, w))
    for _ in range(rng.integers(3, 6)):
        by = cy + rng.normal(0, 0.45) * extent
        bx = cx + rng.normal(0, 0.45) * extent
        br = extent * rng.uniform(0.35, 0.7)
        d = np.sqrt((yy - by) ** 2 + (xx - bx) ** 2)
        alpha = np.maximum(alpha, np.clip(1.1 - d / br, 0.0, 1.0))
    footprint = alpha > 0
    a = spec.intensity * (0.5 + 0.5 * alpha)
    out = np.where(footprint[..., None], (1 - a[..., None]) * hwc
                   + a[..., None] * color, hwc)
    return out, footprint


def _illumination(hwc, spec, rng):
    h, w = hwc.shape[:2]
    theta = math.radians(spec.direction_deg if spec.direction_deg is not None
                         else rng.uniform(0.0, 360.0))
    yy, xx = np.mgrid[0:h, 0:w]
    ramp = (xx - (w - 1) / 2) * math.cos(theta) + (yy - (h - 1) / 2) * math.sin(theta)
    peak = np.abs(ramp).max()
    if peak == 0:
        raise ValueError("image too small for an illumination ramp")
    g = 1.0 + 0.45 * spec.intensity * ramp / peak
    g = np.where(np.abs(g - 1.0) <= 0.01, 1.0, g)  # dead zone: exact identity
    footprint = g != 1.0
    return hwc * g[..., None], footprint
