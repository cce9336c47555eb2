"""Closed-form diffusion mathematics.

Forward process with variances beta_t:

    q(x_t | x_{t-1}) = N(x_t; sqrt(1 - beta_t) x_{t-1}, beta_t I)
    q(x_t | x_0)     = N(x_t; sqrt(abar_t) x_0, (1 - abar_t) I)

with abar_t the running product of alpha_t = 1 - beta_t.  The posterior
q(x_{t-1} | x_t, x_0) is Gaussian with

    mean = (sqrt(abar_{t-1}) beta_t x_0 + sqrt(alpha_t)(1 - abar_{t-1}) x_t) / (1 - abar_t)
    var  = beta_t (1 - abar_{t-1}) / (1 - abar_t)

The ancestral sampling step predicts the noise eps and applies

    x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t) + sigma_t z

with sigma_t^2 equal to the posterior variance (zero at t = 1).

All functions are pure: randomness always enters through an explicit noise
argument, so every operation is deterministic and replayable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .images import ImageTensor

SCHEDULE_KINDS = ("linear", "constant")


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed schedule indexed directly by timestep.

    Every array has length T + 1 so that entry t corresponds to timestep t;
    index 0 is the identity step (beta[0] = 0, alpha_bar[0] = 1,
    posterior_var[0] = 0).  ``one_minus_alpha_bar`` is accumulated through the
    recurrence 1 - abar_t = beta_t + alpha_t (1 - abar_{t-1}) instead of the
    subtraction 1 - abar_t, so that 1 - abar_1 equals beta_1 exactly and the
    t = 1 posterior collapses onto x_0 without cancellation error.
    """

    T: int
    kind: str
    beta_start: float
    beta_end: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    one_minus_alpha_bar: np.ndarray
    posterior_var: np.ndarray


def make_schedule(T: int, kind: str = "linear",
                  beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Build a noise schedule of T steps.

    ``linear`` spaces beta uniformly from beta_start to beta_end; ``constant``
    repeats beta_start.  Bounds must satisfy 0 < beta_start <= beta_end < 1.
    """
    if not isinstance(T, int) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )

    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    else:
        betas = np.full(T, beta_start, dtype=np.float64)

    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)

    omab = np.empty(T + 1)
    omab[0] = 0.0
    for t in range(1, T + 1):
        omab[t] = beta[t] + alpha[t] * omab[t - 1]

    post = np.zeros(T + 1)
    post[1:] = beta[1:] * omab[:-1] / omab[1:]

    sched = NoiseSchedule(T, kind, float(beta_start), float(beta_end),
                          beta, alpha, alpha_bar, omab, post)
    _check_invariants(sched)
    return sched


def _check_invariants(s: NoiseSchedule) -> None:
    if not np.all((s.beta[1:] > 0) & (s.beta[1:] < 1)):
        raise ValueError("every beta must lie in (0, 1)")
    if not np.all(np.diff(s.alpha_bar) < 0):
        raise ValueError("alpha_bar must be strictly decreasing")
    if s.alpha_bar[-1] <= 0:
        raise ValueError("alpha_bar[T] must stay positive")


def _unwrap(x):
    """Accept ImageTensor or raw tensor; return (tensor, rewrap domain or None)."""
    if isinstance(x, ImageTensor):
        return x.data, x.domain
    return x, None


def _rewrap(data: torch.Tensor, domain):
    return ImageTensor(data, domain) if domain is not None else data


def forward_sample(x0, t: int, epsilon: torch.Tensor, s: NoiseSchedule):
    """Sample the closed-form marginal x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.

    t = 0 returns x0 unchanged.  ``epsilon`` must match x0's shape.
    """
    data, domain = _unwrap(x0)
    if not 0 <= t <= s.T:
        raise ValueError(f"t = {t} outside [0, {s.T}]")
    if t == 0:
        return x0
    if epsilon.shape != data.shape:
        raise ValueError(f"epsilon shape {tuple(epsilon.shape)} != x0 shape {tuple(data.shape)}")
    c0 = float(np.sqrt(s.alpha_bar[t]))
    c1 = float(np.sqrt(s.one_minus_alpha_bar[t]))
    return _rewrap(c0 * data + c1 * epsilon, domain)


def forward_sample_batched(x0: torch.Tensor, t: torch.Tensor,
                           epsilon: torch.Tensor, s: NoiseSchedule) -> torch.Tensor:
    """Vectorized forward_sample with one timestep per batch element."""
    if t.shape != (x0.shape[0],):
        raise ValueError(f"t shape {tuple(t.shape)} != ({x0.shape[0]},)")
    if epsilon.shape != x0.shape:
        raise ValueError("epsilon shape does not match x0")
    if int(t.min()) < 0 or int(t.max()) > s.T:
        raise ValueError(f"timesteps outside [0, {s.T}]")
    ab = torch.from_numpy(np.sqrt(s.alpha_bar)).to(x0.dtype)
    omab = torch.from_numpy(np.sqrt(s.one_minus_alpha_bar)).to(x0.dtype)
    c0 = ab[t].view(-1, 1, 1, 1)
    c1 = omab[t].view(-1, 1, 1, 1)
    return c0 * x0 + c1 * epsilon


def posterior_params(x0, xt, t: int, s: NoiseSchedule):
    """Mean and variance of the forward posterior q(x_{t-1} | x_t, x_0).

    Coefficients are formed as scalars first, so at t = 1 the mean collapses
    to x0 exactly (coefficients 1 and 0) and the variance is exactly zero.
    """
    if not 1 <= t <= s.T:
        raise ValueError(f"t = {t} outside [1, {s.T}] (no posterior at t = 0)")
    x0d, _ = _unwrap(x0)
    xtd, _ = _unwrap(xt)
    if x0d.shape != xtd.shape:
        raise ValueError("x0 and xt shapes differ")
    c0 = float(np.sqrt(s.alpha_bar[t - 1]) * s.beta[t] / s.one_minus_alpha_bar[t])
    c1 = float(np.sqrt(s.alpha[t]) * s.one_minus_alpha_bar[t - 1] / s.one_minus_alpha_bar[t])
    mean = c0 * x0d + c1 * xtd
    return mean, float(s.posterior_var[t])


@dataclass(frozen=True)
class DiffusionLossSample:
    """One training draw: clean image, timestep, noise, and the noisy image."""

    x0: ImageTensor
    t: int
    epsilon: torch.Tensor
    xt: torch.Tensor


def make_loss_sample(x0: ImageTensor, t: int, epsilon: torch.Tensor,
                     s: NoiseSchedule) -> DiffusionLossSample:
    xt, _ = _unwrap(forward_sample(x0, t, epsilon, s))
    return DiffusionLossSample(x0, t, epsilon, xt)


def loss_target(sample: DiffusionLossSample, predicted_epsilon: torch.Tensor) -> torch.Tensor:
    """Mean squared error between the true and predicted noise (0-dim tensor)."""
    return noise_mse(sample.epsilon, predicted_epsilon)


def noise_mse(epsilon: torch.Tensor, predicted: torch.Tensor) -> torch.Tensor:
    if epsilon.shape != predicted.shape:
        raise ValueError(
            f"shape mismatch: {tuple(epsilon.shape)} vs {tuple(predicted.shape)}"
        )
    d = predicted - epsilon
    return (d * d).mean()


def reverse_step(xt, predicted_epsilon: torch.Tensor, t: int,
                 z: torch.Tensor | None, s: NoiseSchedule):
    """One ancestral sampling step from noise level t to t - 1.

    ``z`` is a standard normal draw; it is ignored at t = 1 where the
    posterior variance is exactly zero.
    """
    data, domain = _unwrap(xt)
    if not 1 <= t <= s.T:
        raise ValueError(f"t = {t} outside [1, {s.T}]")
    if predicted_epsilon.shape != data.shape:
        raise ValueError("predicted_epsilon shape does not match xt")
    inv_sqrt_alpha = float(1.0 / np.sqrt(s.alpha[t]))
    eps_coef = float(s.beta[t] / np.sqrt(s.one_minus_alpha_bar[t]))
    mean = inv_sqrt_alpha * (data - eps_coef * predicted_epsilon)
    if t == 1:
        return _rewrap(mean, domain)
    if z is None:
        raise ValueError("z is required for t > 1")
    if z.shape != data.shape:
        raise ValueError("z shape does not match xt")
    sigma = float(np.sqrt(s.posterior_var[t]))
    return _rewrap(mean + sigma * z, domain)
