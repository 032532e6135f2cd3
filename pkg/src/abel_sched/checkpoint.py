"""Byte-exact checkpoints and the resume rules.

Layout (little-endian):

    magic ``b"ABCK"``; version u16.
    config: u32 byte length + canonical config text (utf-8),
    followed by its raw sha256 (32 bytes).
    epoch u32; global_step u64.
    parameters: u16 layer count, then per layer: u16 name length + name,
    flags u8 (bit 0 = l2_enabled, bit 1 = scale_invariant), ndim u8,
    u32 per dimension, float64 data.
    optimizer: u8 kind (1 = momentum, 2 = adam); momentum carries mu f64
    and one buffer per layer (raw float64, shapes as the parameters);
    adam carries beta1, beta2, eps f64, t u64 and two buffers per layer.
    scheduler: u32 byte length + scheduler state blob (empty for
    stateless schedules).

No RNG state is stored: the data order of epoch e is derived from
``[seed, e]``, so the checkpointed epoch number determines it.

Resume with a changed epoch budget is allowed only for schedules whose
learning rate at an epoch does not depend on the budget (constant,
step-wise, plateau, and the bounce scheduler, whose final decay is
re-derived from its stored fraction). Cosine, linear and simple decay
refuse a changed budget: their entire profile depends on it.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, format_config, parse_config
from .optim import AdamState, MomentumState
from .params import Layer, ParamSet
from .runner import RunState

MAGIC = b"ABCK"
VERSION = 1

BUDGET_FREE_KINDS = ("constant", "stepwise", "abel", "plateau")


class CheckpointError(ValueError):
    """Raised for unreadable or corrupt checkpoint files."""


class ResumeRefusedError(RuntimeError):
    """Raised when a resume request contradicts the checkpointed run."""


def _pack_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype=np.float64)
    return struct.pack(f"<B{a.ndim}I", a.ndim, *a.shape) + a.tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def take_bytes(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def take_array(self) -> np.ndarray:
        (ndim,) = self.take("<B")
        shape = self.take(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        raw = self.take_bytes(count * 8)
        return np.frombuffer(raw, dtype=np.float64).reshape(shape).copy()


def save_checkpoint(path: str | Path, config: ExperimentConfig, state: RunState) -> None:
    text = format_config(config).encode()
    parts = [MAGIC, struct.pack("<H", VERSION),
             struct.pack("<I", len(text)), text, hashlib.sha256(text).digest(),
             struct.pack("<IQ", state.epoch, state.global_step),
             struct.pack("<H", len(state.params))]
    for layer in state.params:
        name = layer.name.encode()
        flags = (1 if layer.l2_enabled else 0) | (2 if layer.scale_invariant else 0)
        parts.append(struct.pack("<H", len(name)) + name + struct.pack("<B", flags))
        parts.append(_pack_array(layer.value))
    opt = state.opt
    if isinstance(opt, MomentumState):
        parts.append(struct.pack("<Bd", 1, opt.mu))
        for layer in state.params:
            parts.append(_pack_array(opt.velocity[layer.name]))
    elif isinstance(opt, AdamState):
        parts.append(struct.pack("<BdddQ", 2, opt.beta1, opt.beta2, opt.eps, opt.t))
        for layer in state.params:
            parts.append(_pack_array(opt.m[layer.name]))
        for layer in state.params:
            parts.append(_pack_array(opt.v[layer.name]))
    else:
        raise TypeError(f"cannot checkpoint optimizer {type(opt).__name__}")
    parts.append(struct.pack("<I", len(state.scheduler_bytes)))
    parts.append(state.scheduler_bytes)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[ExperimentConfig, RunState]:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take_bytes(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = r.take("<H")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (text_len,) = r.take("<I")
    text = r.take_bytes(text_len)
    digest = r.take_bytes(32)
    if hashlib.sha256(text).digest() != digest:
        raise CheckpointError(f"{path}: config hash mismatch (corrupt checkpoint)")
    try:
        config = parse_config(text.decode())
    except ConfigError as exc:
        raise CheckpointError(f"{path}: embedded config is invalid: {exc}") from None

    epoch, global_step = r.take("<IQ")
    (n_layers,) = r.take("<H")
    layers = []
    for _ in range(n_layers):
        (name_len,) = r.take("<H")
        name = r.take_bytes(name_len).decode()
        (flags,) = r.take("<B")
        layers.append(Layer(name, r.take_array(),
                            l2_enabled=bool(flags & 1), scale_invariant=bool(flags & 2)))
    params = ParamSet(layers)
    (opt_kind,) = r.take("<B")
    if opt_kind == 1:
        (mu,) = r.take("<d")
        velocity = {layer.name: r.take_array() for layer in params}
        opt: MomentumState | AdamState = MomentumState(mu=mu, velocity=velocity)
    elif opt_kind == 2:
        beta1, beta2, eps, t = r.take("<dddQ")
        m = {layer.name: r.take_array() for layer in params}
        v = {layer.name: r.take_array() for layer in params}
        opt = AdamState(m=m, v=v, t=t, beta1=beta1, beta2=beta2, eps=eps)
    else:
        raise CheckpointError(f"{path}: unknown optimizer kind {opt_kind}")
    (sched_len,) = r.take("<I")
    scheduler_bytes = bytes(r.take_bytes(sched_len))
    if r.pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes")
    return config, RunState(epoch=epoch, global_step=global_step, params=params,
                            opt=opt, scheduler_bytes=scheduler_bytes)


def prepare_resume(path: str | Path, epochs: int | None = None,
                   log_dir: str | None = None) -> tuple[ExperimentConfig, RunState]:
    """Load a checkpoint and apply resume overrides, enforcing the budget rules."""
    config, state = load_checkpoint(path)
    if epochs is not None and epochs != config.epochs:
        if config.schedule.kind not in BUDGET_FREE_KINDS:
            raise ResumeRefusedError(
                f"cannot resume a {config.schedule.kind!r} schedule with a different "
                f"epoch budget ({config.epochs} -> {epochs}): its learning rate at any "
                f"epoch depends on the total budget; restart from scratch instead")
        if epochs < state.epoch:
            raise ResumeRefusedError(
                f"new epoch budget {epochs} lies before the checkpointed epoch "
                f"{state.epoch}")
        config = replace(config, epochs=epochs,
                         schedule=replace(config.schedule, total_epochs=epochs))
    if log_dir is not None:
        config = replace(config, log_dir=log_dir)
    else:
        config = replace(config, log_dir=str(Path(config.log_dir).with_name(
            Path(config.log_dir).name + "-resume")))
    return config, state
