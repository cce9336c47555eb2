"""Bit-exact checkpoint serialization.

Layout: an 8-byte magic, a little-endian uint32 format version, a
little-endian uint64 header length, a UTF-8 JSON header, then raw
little-endian tensor payloads.  The header records the model config, the
noise-schedule parameters, the step counter, and one {name, dtype, shape,
offset, nbytes} entry per tensor; offsets are relative to the payload start.

Every corruption mode gets its own exception so callers can tell a wrong
file apart from a damaged one.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .denoisers import DenoiserConfig

MAGIC = b"ARTIFUS\0"
FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: ("float32", "<f4"),
    torch.float64: ("float64", "<f8"),
    torch.int64: ("int64", "<i8"),
    torch.uint8: ("uint8", "|u1"),
}
_NUMPY_OF = {name: np_dtype for name, np_dtype in _DTYPES.values()}
_TORCH_OF = {name: t for t, (name, _) in _DTYPES.items()}


class CheckpointError(Exception):
    """Base class for unreadable checkpoint files."""


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointHeaderError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: DenoiserConfig
    schedule: dict
    step: int
    weights: dict
    optimizer_state: dict
    rng_state: bytes
    ema: dict | None = None
    format_version: int = FORMAT_VERSION


def _named_tensors(ck: Checkpoint) -> list:
    pairs = [(f"model.{k}", v) for k, v in ck.weights.items()]
    pairs += [(f"optim.{k}", v) for k, v in ck.optimizer_state.items()]
    if ck.ema is not None:
        pairs += [(f"ema.{k}", v) for k, v in ck.ema.items()]
    pairs.append(("rng_state",
                  torch.frombuffer(bytearray(ck.rng_state), dtype=torch.uint8)))
    return pairs


def save_checkpoint(ck: Checkpoint, path) -> None:
    tensors = _named_tensors(ck)
    entries = []
    payload = bytearray()
    for name, tensor in tensors:
        t = tensor.detach().contiguous()
        if t.dtype not in _DTYPES:
            raise ValueError(f"unsupported tensor dtype {t.dtype} for {name}")
        dtype_name, np_dtype = _DTYPES[t.dtype]
        raw = t.numpy().astype(np_dtype, copy=False).tobytes()
        entries.append({"name": name, "dtype": dtype_name,
                        "shape": list(t.shape), "offset": len(payload),
                        "nbytes": len(raw)})
        payload.extend(raw)

    header = {
        "format_version": ck.format_version,
        "step": ck.step,
        "config": dataclasses.asdict(ck.config),
        "schedule": ck.schedule,
        "has_ema": ck.ema is not None,
        "tensors": entries,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", ck.format_version))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointTruncatedError(
            f"file ends inside the {what} ({len(buf)} of {n} bytes)")
    return buf


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(MAGIC), "magic")
        if magic != MAGIC:
            raise CheckpointMagicError(f"bad magic {magic!r}")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"format version {version}, expected {FORMAT_VERSION}")
        hlen = struct.unpack("<Q", _read_exact(fh, 8, "header length"))[0]
        blob = _read_exact(fh, hlen, "header")
        payload = fh.read()

    try:
        header = json.loads(blob.decode("utf-8"))
        entries = header["tensors"]
        config = DenoiserConfig(**header["config"])
        schedule = dict(header["schedule"])
        step = int(header["step"])
        has_ema = bool(header["has_ema"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointHeaderError(f"unreadable header: {exc}") from exc

    tensors = {}
    for entry in entries:
        try:
            name, dtype = entry["name"], entry["dtype"]
            shape = tuple(int(d) for d in entry["shape"])
            offset, nbytes = int(entry["offset"]), int(entry["nbytes"])
            np_dtype = np.dtype(_NUMPY_OF[dtype])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointHeaderError(f"bad tensor entry: {exc}") from exc
        expected = int(np.prod(shape, dtype=np.int64)) * np_dtype.itemsize
        if nbytes != expected or offset < 0:
            raise CheckpointHeaderError(
                f"{name}: {nbytes} bytes inconsistent with shape {shape}")
        if offset + nbytes > len(payload):
            raise CheckpointTruncatedError(
                f"{name}: payload ends at {len(payload)}, "
                f"need {offset + nbytes}")
        arr = np.frombuffer(payload, dtype=np_dtype, count=int(np.prod(
            shape, dtype=np.int64)), offset=offset).reshape(shape)
        tensors[name] = torch.from_numpy(arr.copy()).to(_TORCH_OF[dtype])

    if "rng_state" not in tensors:
        raise CheckpointHeaderError("missing rng_state tensor")
    weights = {k[len("model."):]: v for k, v in tensors.items()
               if k.startswith("model.")}
    optim = {k[len("optim."):]: v for k, v in tensors.items()
             if k.startswith("optim.")}
    ema = {k[len("ema."):]: v for k, v in tensors.items()
           if k.startswith("ema.")} if has_ema else None
    rng_state = bytes(tensors["rng_state"].numpy().tobytes())
    return Checkpoint(config=config, schedule=schedule, step=step,
                      weights=weights, optimizer_state=optim,
                      rng_state=rng_state, ema=ema, format_version=version)
