"""Plain-text run configuration.

An INI file with one section per subsystem; every key is validated against
the schema below and unknown sections or keys are hard errors.  Command-line
overrides arrive as "section.key=value" strings and pass through the same
validation.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .denoisers import DenoiserConfig
from .lab import DetectorParams
from .training import TrainConfig

DEFAULT_SNAPSHOTS = (0, 50, 100, 150)


class ConfigError(Exception):
    """Invalid, unknown, or missing configuration input."""


def _int_tuple(text: str) -> tuple:
    parts = text.replace(",", " ").split()
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p) for p in parts)


def _optional_float(text: str):
    if text.strip().lower() in ("", "none"):
        return None
    return float(text)


SCHEMA = {
    "model": {
        "backbone": str, "time_injection": str, "patch_size": int,
        "window_size": int, "embed_dim": int, "depths": _int_tuple,
        "num_heads": _int_tuple, "image_size": int, "in_channels": int,
    },
    "schedule": {
        "timesteps": int, "kind": str, "beta_start": float, "beta_end": float,
    },
    "train": {
        "learning_rate": float, "batch_size": int, "total_steps": int,
        "optimizer": str, "adam_beta1": float, "adam_beta2": float,
        "grad_clip": _optional_float, "checkpoint_every": int, "seed": int,
        "ema_decay": _optional_float,
    },
    "data": {
        "root": str, "patch_size": int, "train_fraction": float,
        "val_fraction": float, "shuffle_seed": int,
    },
    "restore": {
        "masked_init": str, "snapshots": _int_tuple, "seed": int,
    },
    "detect": {
        "dark_luma_threshold": float, "saturation_threshold": float,
        "dilation_radius": int, "min_component_area": int,
    },
    "synthesize": {
        "kind": str, "intensity": float, "seed": int,
    },
}


@dataclass(frozen=True)
class RunConfig:
    denoiser: DenoiserConfig
    schedule_args: dict
    train: TrainConfig
    data: dict
    restore: dict
    detect: DetectorParams
    synthesize: dict


def _collect(path, overrides) -> dict:
    values = {section: {} for section in SCHEMA}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None,
                                           inline_comment_prefixes=(";", "#"))
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key [{section}] {key}")
                values[section][key] = value
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, "
                              f"got {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown key [{section}] {key}")
        values[section][key] = value
    return values


def _parse_section(values: dict, section: str) -> dict:
    parsed = {}
    for key, raw in values[section].items():
        try:
            parsed[key] = SCHEMA[section][key](raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return parsed


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Build a validated RunConfig from a file plus overrides.

    Both are optional; with neither, the desk-scale defaults apply.
    """
    values = _collect(path, overrides)
    try:
        denoiser = DenoiserConfig(**_parse_section(values, "model"))

        sched = {"T": 250, "kind": "linear",
                 "beta_start": 1e-4, "beta_end": 0.02}
        parsed = _parse_section(values, "schedule")
        if "timesteps" in parsed:
            sched["T"] = parsed.pop("timesteps")
        sched.update(parsed)
        if sched["T"] < 1:
            raise ValueError("timesteps must be >= 1")

        tkw = _parse_section(values, "train")
        beta1 = tkw.pop("adam_beta1", 0.9)
        beta2 = tkw.pop("adam_beta2", 0.999)
        train = TrainConfig(adam_betas=(beta1, beta2), **tkw)

        data = {"root": None, "patch_size": denoiser.image_size,
                "train_fraction": 0.9, "val_fraction": 0.1, "shuffle_seed": 0}
        data.update(_parse_section(values, "data"))

        restore = {"masked_init": "noise", "snapshots": DEFAULT_SNAPSHOTS,
                   "seed": 0}
        restore.update(_parse_section(values, "restore"))
        if restore["masked_init"] not in ("noise", "diffused"):
            raise ValueError(f"[restore] masked_init: unknown value "
                             f"{restore['masked_init']!r}")

        detect = DetectorParams(**_parse_section(values, "detect"))

        synth = {"kind": "fold", "intensity": 0.8, "seed": 0}
        synth.update(_parse_section(values, "synthesize"))

        return RunConfig(denoiser=denoiser, schedule_args=sched, train=train,
                         data=data, restore=restore, detect=detect,
                         synthesize=synth)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
