"""Noise-prediction training on clean patches.

Every step draws a batch, per-sample timesteps uniform on [1, T], and fresh
Gaussian noise; the loss is the mean squared error between the drawn noise
and the model's prediction at the noised input.  All randomness flows
through one seeded generator whose state is checkpointed, so a resumed run
continues the exact trajectory of an uninterrupted one.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .checkpoint import Checkpoint
from .denoisers import DenoiserConfig, build_denoiser
from .diffusion import NoiseSchedule, forward_sample_batched, noise_mse

OPTIMIZERS = ("adam",)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    total_steps: int = 2000
    optimizer: str = "adam"
    adam_betas: tuple = (0.9, 0.999)
    grad_clip: float | None = None
    checkpoint_every: int = 500
    seed: int = 0
    ema_decay: float | None = None

    def __post_init__(self):
        # Zero is allowed: a no-update run is the cheapest determinism probe.
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1 or self.total_steps < 0:
            raise ValueError("batch_size must be >= 1 and total_steps >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if self.ema_decay is not None and not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")


@dataclass(frozen=True)
class TrainEvent:
    step: int
    loss: float
    checkpoint: Checkpoint | None


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; carries a diagnostic dump."""

    def __init__(self, step: int, dump: dict):
        super().__init__(f"non-finite loss at step {step}")
        self.dump = dump


def schedule_params(s: NoiseSchedule) -> dict:
    return {"T": s.T, "kind": s.kind,
            "beta_start": s.beta_start, "beta_end": s.beta_end}


def _optimizer_tensors(optimizer, name_of: dict) -> dict:
    out = {}
    for param, state in optimizer.state.items():
        base = name_of[id(param)]
        for key, value in state.items():
            out[f"{base}.{key}"] = torch.as_tensor(value).detach().clone()
    return out


def _make_checkpoint(model, optimizer, gen, dc, sched: dict, step: int,
                     ema: dict | None) -> Checkpoint:
    name_of = {id(p): n for n, p in model.named_parameters()}
    return Checkpoint(
        config=dc, schedule=dict(sched), step=step,
        weights={k: v.detach().clone() for k, v in model.state_dict().items()},
        optimizer_state=_optimizer_tensors(optimizer, name_of),
        rng_state=bytes(gen.get_state().numpy().tobytes()),
        ema=None if ema is None else {k: v.clone() for k, v in ema.items()})


def _build_optimizer(model, tc: TrainConfig):
    return torch.optim.Adam(model.parameters(), lr=tc.learning_rate,
                            betas=tuple(tc.adam_betas))


def _apply_optimizer_state(optimizer, model, tensors: dict) -> None:
    params = dict(model.named_parameters())
    grouped = {}
    for full, tensor in tensors.items():
        base, key = full.rsplit(".", 1)
        grouped.setdefault(base, {})[key] = tensor
    for base, state in grouped.items():
        optimizer.state[params[base]] = state


def restore_training(ck: Checkpoint, tc: TrainConfig):
    """Rebuild (model, optimizer, generator) exactly as checkpointed."""
    model = build_denoiser(ck.config)
    model.load_state_dict(ck.weights)
    optimizer = _build_optimizer(model, tc)
    _apply_optimizer_state(optimizer, model, ck.optimizer_state)
    gen = torch.Generator()
    gen.set_state(torch.frombuffer(bytearray(ck.rng_state),
                                   dtype=torch.uint8).clone())
    return model, optimizer, gen


def sample_timesteps(gen: torch.Generator, n: int, T: int) -> torch.Tensor:
    """Per-sample training timesteps, uniform over the integers [1, T]."""
    return torch.randint(1, T + 1, (n,), generator=gen)


def _batches_from(dataset, start_step: int):
    bpe = dataset.batches_per_epoch()
    step = start_step
    while True:
        skip = step % bpe
        for i, batch in enumerate(dataset.epoch_batches(step // bpe)):
            if i < skip:
                continue
            yield batch
            step += 1


def train(dataset, dc: DenoiserConfig, tc: TrainConfig, s: NoiseSchedule,
          resume: Checkpoint | None = None):
    """Yield a TrainEvent per step; checkpoints ride along periodically.

    A checkpoint is attached every ``checkpoint_every`` steps and at the
    final step.  Pass a prior checkpoint to continue its trajectory.
    """
    sched = schedule_params(s)
    if resume is not None:
        if resume.schedule != sched:
            raise ValueError("resume checkpoint was trained with a different "
                             "noise schedule")
        model, optimizer, gen = restore_training(resume, tc)
        start = resume.step
        ema = resume.ema
    else:
        model = build_denoiser(dc, seed=tc.seed)
        optimizer = _build_optimizer(model, tc)
        gen = torch.Generator().manual_seed(tc.seed)
        start = 0
        ema = None if tc.ema_decay is None else {
            k: v.detach().clone() for k, v in model.state_dict().items()}

    model.train()
    recent = []
    batches = _batches_from(dataset, start)
    for step in range(start + 1, tc.total_steps + 1):
        batch = next(batches).data
        n = batch.shape[0]
        t = sample_timesteps(gen, n, s.T)
        eps = torch.randn(batch.shape, generator=gen, dtype=batch.dtype)
        xt = forward_sample_batched(batch, t, eps, s)

        optimizer.zero_grad(set_to_none=True)
        loss = noise_mse(eps, model(xt, t))
        value = float(loss.detach())
        if not torch.isfinite(loss):
            raise TrainingDiverged(step, {
                "step": step, "loss": value,
                "recent_losses": [l for _, l in recent[-50:]],
                "learning_rate": tc.learning_rate,
                "batch_size": tc.batch_size})
        loss.backward()
        if tc.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
        optimizer.step()

        if ema is not None:
            with torch.no_grad():
                for k, v in model.state_dict().items():
                    ema[k].mul_(tc.ema_decay).add_(v, alpha=1 - tc.ema_decay)

        recent.append((step, value))
        ck = None
        if step % tc.checkpoint_every == 0 or step == tc.total_steps:
            ck = _make_checkpoint(model, optimizer, gen, dc, sched, step, ema)
        yield TrainEvent(step, value, ck)
