"""Regional restoration by selective denoising resampling.

The reverse chain runs only inside the artifact mask.  At every timestep the
sampler rebuilds its input as a composite: the unmasked region is re-diffused
from the original image at that step's noise level, while the masked region
carries the previous denoising output.  The final image pins every unmasked
pixel to the original, so the surrounding appearance passes through
untouched by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .denoisers import denoise_forward
from .diffusion import NoiseSchedule, forward_sample, reverse_step
from .images import ArtifactMask, Domain, ImageTensor

MASKED_INITS = ("noise", "diffused")


@dataclass(frozen=True)
class RestorationTrace:
    """Snapshots taken on the way down the chain, plus the composed result."""

    snapshots: tuple
    final: ImageTensor

    def __post_init__(self):
        ts = [t for t, _ in self.snapshots]
        if any(a <= b for a, b in zip(ts, ts[1:])):
            raise ValueError("snapshot timesteps must be strictly decreasing")


def _as_mask_tensor(m, shape) -> torch.Tensor:
    mt = m.torch() if isinstance(m, ArtifactMask) else m
    if mt.shape[-2:] != shape[-2:]:
        raise ValueError(f"mask {tuple(mt.shape[-2:])} does not match "
                         f"image {tuple(shape[-2:])}")
    return mt


def compose_step_input(x0, prev_out, m, t: int, epsilon: torch.Tensor,
                       s: NoiseSchedule):
    """Diffused original outside the mask, previous output inside it."""
    wrapped = isinstance(x0, ImageTensor)
    x0_raw = x0.data if wrapped else x0
    prev_raw = prev_out.data if isinstance(prev_out, ImageTensor) else prev_out
    if prev_raw.shape != x0_raw.shape:
        raise ValueError(f"shape mismatch: {tuple(prev_raw.shape)} vs "
                         f"{tuple(x0_raw.shape)}")
    mask = _as_mask_tensor(m, x0_raw.shape)
    diffused = forward_sample(x0_raw, t, epsilon, s)
    out = torch.where(mask, prev_raw, diffused)
    if wrapped:
        return ImageTensor(out, Domain.SIGNED11)
    return out


def _to_input_domain(raw: torch.Tensor, domain: Domain) -> ImageTensor:
    clamped = ImageTensor(raw.clamp(-1.0, 1.0), Domain.SIGNED11)
    return clamped.to_domain(domain)


def _slice(img: ImageTensor, i: int) -> ImageTensor:
    return ImageTensor(img.data[i:i + 1], img.domain)


def restore(x0: ImageTensor, m: ArtifactMask, model, s: NoiseSchedule,
            snapshot_ts=(), seed: int = 0, masked_init: str = "noise",
            jump_count: int = 0) -> RestorationTrace:
    """Run the reverse chain T..1 inside the mask and compose the result.

    Deterministic given the seed.  Pixels outside the mask are copied from
    x0 bit-for-bit.  ``masked_init`` picks the state of the masked region at
    t=T: fresh standard normal noise, or the diffused artifact content.
    """
    traces = restore_many(x0, [m], model, s, snapshot_ts=snapshot_ts,
                          seed=seed, masked_init=masked_init,
                          jump_count=jump_count)
    return traces[0]


def restore_many(images: ImageTensor, masks, model, s: NoiseSchedule,
                 snapshot_ts=(), seed: int = 0, masked_init: str = "noise",
                 jump_count: int = 0) -> list:
    """Batched :func:`restore`; one mask per image, one trace per image."""
    if jump_count:
        raise NotImplementedError("resampling jumps are a hook; only the "
                                  "single-sweep schedule is implemented")
    if masked_init not in MASKED_INITS:
        raise ValueError(f"unknown masked_init {masked_init!r}")
    n = images.data.shape[0]
    if n == 0:
        raise ValueError("empty image batch")
    if len(masks) != n:
        raise ValueError(f"{len(masks)} masks for {n} images")
    snapshot_ts = sorted(set(int(t) for t in snapshot_ts), reverse=True)
    if snapshot_ts and not 0 <= snapshot_ts[0] <= s.T:
        raise ValueError(f"snapshot timesteps must lie in [0, {s.T}]")

    mask = torch.cat([_as_mask_tensor(m, images.data.shape) for m in masks])

    if not mask.any():
        # Identity restoration: the composition never reads the model.
        return [RestorationTrace(tuple((t, _slice(images, i))
                                       for t in snapshot_ts),
                                 _slice(images, i)) for i in range(n)]

    x0 = images.to_domain(Domain.SIGNED11).data
    gen = torch.Generator().manual_seed(seed)
    model.eval()

    def draw():
        return torch.randn(x0.shape, generator=gen, dtype=x0.dtype)

    if masked_init == "noise":
        out = draw()
    else:
        out = forward_sample(x0, s.T, draw(), s)

    snaps = [[] for _ in range(n)]

    def record(t, state):
        composite = torch.where(mask, state, x0)
        for i in range(n):
            snaps[i].append((t, _to_input_domain(composite[i:i + 1],
                                                 images.domain)))

    if snapshot_ts and snapshot_ts[0] == s.T:
        record(s.T, out)
    with torch.no_grad():
        for t in range(s.T, 0, -1):
            x_in = torch.where(mask, out, forward_sample(x0, t, draw(), s))
            eps_hat = denoise_forward(model, x_in, t)
            z = draw() if t > 1 else None
            out = reverse_step(x_in, eps_hat, t, z, s)
            if (t - 1) in snapshot_ts:
                record(t - 1, out)

    final_raw = _to_input_domain(out, images.domain).data
    final = torch.where(mask, final_raw, images.data)
    return [RestorationTrace(tuple(snaps[i]), _slice(
        ImageTensor(final, images.domain), i)) for i in range(n)]
