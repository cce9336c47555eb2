"""Phase congruency of a grayscale image via a log-Gabor filter bank.

Moments of local phase agreement across scales signal perceptually salient
features (edges, lines) independent of contrast.  The bank uses four radial
scales and four orientations; responses are combined per orientation with a
per-orientation noise threshold estimated from the smallest-scale response,
then pooled over orientations.
"""

from __future__ import annotations

import math

import numpy as np

NSCALE = 4
NORIENT = 4
MIN_WAVELENGTH = 6.0
MULT = 2.0
SIGMA_ONF = 0.55
DTHETA_ON_SIGMA = 1.2
NOISE_K = 2.0
CUTOFF = 0.45
BUTTERWORTH_ORDER = 15
EPS = 1e-4


def _frequency_grid(rows: int, cols: int):
    """Normalized frequency radius and angle, origin at element [0, 0]."""
    if cols % 2:
        xr = np.arange(-(cols - 1) / 2, (cols - 1) / 2 + 1) / (cols - 1)
    else:
        xr = np.arange(-cols / 2, cols / 2) / cols
    if rows % 2:
        yr = np.arange(-(rows - 1) / 2, (rows - 1) / 2 + 1) / (rows - 1)
    else:
        yr = np.arange(-rows / 2, rows / 2) / rows
    x, y = np.meshgrid(xr, yr)
    radius = np.fft.ifftshift(np.sqrt(x * x + y * y))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    radius[0, 0] = 1.0  # avoid log(0) at the DC bin
    return radius, theta


def _log_gabor_bank(rows: int, cols: int):
    radius, theta = _frequency_grid(rows, cols)
    lowpass = 1.0 / (1.0 + (radius / CUTOFF) ** (2 * BUTTERWORTH_ORDER))
    radial = []
    for s in range(NSCALE):
        f0 = 1.0 / (MIN_WAVELENGTH * MULT ** s)
        g = np.exp(-np.log(radius / f0) ** 2 / (2.0 * math.log(SIGMA_ONF) ** 2))
        g *= lowpass
        g[0, 0] = 0.0
        radial.append(g)

    sigma_theta = math.pi / NORIENT / DTHETA_ON_SIGMA
    spreads = []
    for o in range(NORIENT):
        angle = o * math.pi / NORIENT
        ds = np.sin(theta) * math.cos(angle) - np.cos(theta) * math.sin(angle)
        dc = np.cos(theta) * math.cos(angle) + np.sin(theta) * math.sin(angle)
        dtheta = np.abs(np.arctan2(ds, dc))
        spreads.append(np.exp(-dtheta ** 2 / (2.0 * sigma_theta ** 2)))
    return radial, spreads


def phase_congruency(image: np.ndarray) -> np.ndarray:
    """Pointwise phase congruency in [0, 1] for a 2-D array."""
    im = np.asarray(image, dtype=np.float64)
    if im.ndim != 2:
        raise ValueError("phase congruency expects a 2-D array")
    rows, cols = im.shape
    imfft = np.fft.fft2(im)
    radial, spreads = _log_gabor_bank(rows, cols)

    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))

    for spread in spreads:
        eo = []
        ifft_filters = []
        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        em_n = 0.0
        for s in range(NSCALE):
            filt = radial[s] * spread
            ifft_filters.append(np.real(np.fft.ifft2(filt))
                                * math.sqrt(rows * cols))
            response = np.fft.ifft2(imfft * filt)
            eo.append(response)
            an = np.abs(response)
            sum_an += an
            sum_e += response.real
            sum_o += response.imag
            if s == 0:
                em_n = np.sum(filt ** 2)

        x_energy = np.sqrt(sum_e ** 2 + sum_o ** 2) + EPS
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for response in eo:
            e, o = response.real, response.imag
            energy += e * mean_e + o * mean_o - np.abs(e * mean_o - o * mean_e)

        # Rayleigh noise model fitted to the smallest-scale response.
        median_e2n = np.median(np.abs(eo[0]) ** 2)
        mean_e2n = -median_e2n / math.log(0.5)
        noise_power = mean_e2n / em_n

        est_sum_an2 = np.zeros((rows, cols))
        for f in ifft_filters:
            est_sum_an2 += f ** 2
        est_sum_eiej = np.zeros((rows, cols))
        for i in range(NSCALE - 1):
            for j in range(i + 1, NSCALE):
                est_sum_eiej += ifft_filters[i] * ifft_filters[j]
        est_noise_energy2 = 2 * noise_power * np.sum(est_sum_an2) \
            + 4 * noise_power * np.sum(est_sum_eiej)
        tau = math.sqrt(est_noise_energy2 / 2)
        est_noise_energy = tau * math.sqrt(math.pi / 2)
        est_noise_sigma = math.sqrt((2 - math.pi / 2) * tau ** 2)
        threshold = (est_noise_energy + NOISE_K * est_noise_sigma) / 1.7

        energy_all += np.maximum(energy - threshold, 0.0)
        an_all += sum_an

    return energy_all / (an_all + EPS)
