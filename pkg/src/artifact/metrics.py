"""Full-reference image quality metrics and the evaluation report.

All six metrics are computed on the byte (0..255) scale so scores line up
across input encodings; MSE is additionally reported on the unit scale.
Infinite scores (identical inputs under PSNR/SRE) serialize as the string
"inf" in both CSV and JSON.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .images import ArtifactMask, Domain, ImageTensor
from .phasecong import phase_congruency

REPORT_COLUMNS = ("l2_region_x1e4", "mse", "ssim", "psnr", "fsim", "sre")

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2
FSIM_T1 = 0.85
FSIM_T2 = 160.0

SCHARR_X = np.array([[3.0, 0.0, -3.0],
                     [10.0, 0.0, -10.0],
                     [3.0, 0.0, -3.0]]) / 16.0


def _byte(img: ImageTensor) -> np.ndarray:
    """(C, H, W) float64 on the 0..255 scale; single image only."""
    if img.data.shape[0] != 1:
        raise ValueError("metrics operate on single images (batch of 1)")
    return img.to_domain(Domain.BYTE255).data[0].numpy().astype(np.float64)


def _pair(a: ImageTensor, b: ImageTensor):
    pa, pb = _byte(a), _byte(b)
    if pa.shape != pb.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    return pa, pb


def _gray(chw: np.ndarray) -> np.ndarray:
    if chw.shape[0] == 1:
        return chw[0]
    return 0.299 * chw[0] + 0.587 * chw[1] + 0.114 * chw[2]


def l2_region(a: ImageTensor, b: ImageTensor, m: ArtifactMask) -> float:
    """Euclidean norm of the difference restricted to masked pixels."""
    pa, pb = _pair(a, b)
    if m.mask.shape != pa.shape[1:]:
        raise ValueError("mask does not match image shape")
    diff = (pa - pb)[:, m.mask]
    return float(np.sqrt(np.sum(diff * diff)))


def mse(a: ImageTensor, b: ImageTensor) -> float:
    pa, pb = _pair(a, b)
    return float(np.mean((pa - pb) ** 2))


def psnr(a: ImageTensor, b: ImageTensor, max_value: float = 255.0) -> float:
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / err)


def sre(a: ImageTensor, b: ImageTensor) -> float:
    """Signal-to-reconstruction-error ratio; reference signal power is
    the squared mean of a."""
    pa, pb = _pair(a, b)
    err = float(np.mean((pa - pb) ** 2))
    if err == 0.0:
        return math.inf
    mean = float(np.mean(pa))
    if mean == 0.0:
        return math.nan
    return 10.0 * math.log10(mean * mean / err)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: ImageTensor, b: ImageTensor) -> float:
    """Mean structural similarity over all fully covered window positions."""
    pa, pb = _pair(a, b)
    x, y = _gray(pa), _gray(pb)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}-pixel window")
    w = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)

    def filt(img):
        return convolve2d(img, w, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    xx = filt(x * x) - mu_x * mu_x
    yy = filt(y * y) - mu_y * mu_y
    xy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * xy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (xx + yy + SSIM_C2)
    return float(np.mean(num / den))


def _fsim_prepare(gray: np.ndarray) -> np.ndarray:
    """Average-pool by the published resolution rule."""
    f = max(1, int(round(min(gray.shape) / 256.0)))
    if f == 1:
        return gray
    kernel = np.ones((f, f)) / (f * f)
    pooled = convolve2d(gray, kernel, mode="same")
    return pooled[0::f, 0::f]


def _scharr_magnitude(img: np.ndarray) -> np.ndarray:
    gx = convolve2d(img, SCHARR_X, mode="same")
    gy = convolve2d(img, SCHARR_X.T, mode="same")
    return np.sqrt(gx * gx + gy * gy)


def fsim(a: ImageTensor, b: ImageTensor) -> float:
    """Feature similarity: phase congruency and gradient agreement, weighted
    by the stronger phase congruency."""
    pa, pb = _pair(a, b)
    x = _fsim_prepare(_gray(pa))
    y = _fsim_prepare(_gray(pb))
    if min(x.shape) < 32:
        raise ValueError("image too small for the log-Gabor bank (min 32)")

    pc1, pc2 = phase_congruency(x), phase_congruency(y)
    g1, g2 = _scharr_magnitude(x), _scharr_magnitude(y)

    s_pc = (2 * pc1 * pc2 + FSIM_T1) / (pc1 ** 2 + pc2 ** 2 + FSIM_T1)
    s_g = (2 * g1 * g2 + FSIM_T2) / (g1 ** 2 + g2 ** 2 + FSIM_T2)
    pcm = np.maximum(pc1, pc2)
    denom = float(np.sum(pcm))
    if denom == 0.0:
        return 1.0 if np.array_equal(x, y) else 0.0
    return float(np.sum(s_pc * s_g * pcm) / denom)


def compute_row(image_id: str, clean: ImageTensor, restored: ImageTensor,
                m: ArtifactMask) -> dict:
    """All six metrics for one (clean, restored, mask) triple."""
    err = mse(clean, restored)
    return {
        "id": image_id,
        "l2_region_x1e4": l2_region(clean, restored, m) * 1e-4,
        "mse": err,
        "mse_unit01": err / (255.0 * 255.0),
        "ssim": ssim(clean, restored),
        "psnr": psnr(clean, restored),
        "fsim": fsim(clean, restored),
        "sre": sre(clean, restored),
    }


@dataclass(frozen=True)
class MetricsReport:
    per_image: tuple
    aggregate: dict
    complexity: dict | None = None


def build_report(rows, complexity: dict | None = None) -> MetricsReport:
    """Aggregate per-image rows into column means; column order is fixed."""
    rows = tuple(dict(r) for r in rows)
    if not rows:
        raise ValueError("cannot build a report from zero rows")
    keys = [k for k in rows[0] if k != "id"]
    aggregate = {}
    for key in keys:
        vals = [float(r[key]) for r in rows]
        aggregate[key] = math.inf if any(math.isinf(v) for v in vals) \
            else float(np.mean(vals))
    return MetricsReport(rows, aggregate, complexity)


def format_cell(value) -> str:
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def write_report_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("id",) + REPORT_COLUMNS)
        for row in report.per_image:
            writer.writerow([row["id"]] + [format_cell(row[c]) for c in REPORT_COLUMNS])
        writer.writerow(["mean"] + [format_cell(report.aggregate[c])
                                    for c in REPORT_COLUMNS])


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_report_json(report: MetricsReport, path) -> None:
    payload = {"per_image": _jsonable(list(report.per_image)),
               "aggregate": _jsonable(report.aggregate),
               "complexity": _jsonable(report.complexity)}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
