"""Byte-exact serialization of scheduler state.

Format (all integers and reals little-endian):

    offset  field
    0       magic ``b"LRS1"``
    4       version: u16 (currently 1)
    6       kind: u8 (1 = bounce scheduler, 2 = plateau scheduler)
    7...    kind-specific payload

Bounce-scheduler payload, in order: base_lr, current_lr, decay_factor,
last_decay_fraction (f64 each); total_epochs, epoch (u32 each);
smoothing_window, min_history (u16 each); reached_minimum (u8);
raw norm history (u32 count + f64 values); smoothed history (same);
decay log (u32 count + per event: epoch u32, trigger u8, old_lr f64,
new_lr f64).

Plateau payload: base_lr, current_lr, factor, threshold (f64 each);
patience, epochs_since_improvement, epoch (u32 each); mode u8
(0 = min, 1 = max); has_best u8 + best_metric f64; decay log as above.

Round-trip identity: a restored scheduler behaves identically to the
original on any subsequent observation sequence.
"""

from __future__ import annotations

import struct

from .adaptive import AbelScheduler, PlateauScheduler
from .schedules import LrEvent

MAGIC = b"LRS1"
VERSION = 1

_KIND_ABEL = 1
_KIND_PLATEAU = 2

_TRIGGERS = ("milestone", "bounce", "final_decay", "plateau")
_MODES = ("min", "max")


class StateDecodeError(ValueError):
    """Raised when scheduler state bytes are malformed."""


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise StateDecodeError("truncated scheduler state")
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values

    def take_floats(self, count: int) -> list[float]:
        return list(self.take(f"<{count}d")) if count else []

    def done(self) -> None:
        if self.pos != len(self.data):
            raise StateDecodeError("trailing bytes after scheduler state")


def _pack_events(events: list[LrEvent]) -> bytes:
    out = [struct.pack("<I", len(events))]
    for ev in events:
        out.append(struct.pack("<IBdd", ev.epoch, _TRIGGERS.index(ev.trigger), ev.old_lr, ev.new_lr))
    return b"".join(out)


def _unpack_events(r: _Reader) -> list[LrEvent]:
    (count,) = r.take("<I")
    events = []
    for _ in range(count):
        epoch, trig, old_lr, new_lr = r.take("<IBdd")
        if trig >= len(_TRIGGERS):
            raise StateDecodeError(f"unknown event trigger code {trig}")
        events.append(LrEvent(epoch=epoch, old_lr=old_lr, new_lr=new_lr, trigger=_TRIGGERS[trig]))
    return events


def serialize_scheduler(scheduler: AbelScheduler | PlateauScheduler) -> bytes:
    """Encode a scheduler's full state as bytes."""
    if isinstance(scheduler, AbelScheduler):
        s = scheduler
        parts = [
            MAGIC,
            struct.pack("<HB", VERSION, _KIND_ABEL),
            struct.pack("<dddd", s.base_lr, s.current_lr, s.decay_factor, s.last_decay_fraction),
            struct.pack("<IIHHB", s.total_epochs, s.epoch, s.smoothing_window, s.min_history,
                        int(s.reached_minimum)),
            struct.pack("<I", len(s.norm_history)),
            struct.pack(f"<{len(s.norm_history)}d", *s.norm_history),
            struct.pack("<I", len(s.smoothed_history)),
            struct.pack(f"<{len(s.smoothed_history)}d", *s.smoothed_history),
            _pack_events(s.decay_log),
        ]
        return b"".join(parts)
    if isinstance(scheduler, PlateauScheduler):
        p = scheduler
        parts = [
            MAGIC,
            struct.pack("<HB", VERSION, _KIND_PLATEAU),
            struct.pack("<dddd", p.base_lr, p.current_lr, p.factor, p.threshold),
            struct.pack("<III", p.patience, p.epochs_since_improvement, p.epoch),
            struct.pack("<B", _MODES.index(p.mode)),
            struct.pack("<Bd", int(p.best_metric is not None),
                        0.0 if p.best_metric is None else p.best_metric),
            _pack_events(p.decay_log),
        ]
        return b"".join(parts)
    raise TypeError(f"cannot serialize {type(scheduler).__name__}")


def restore_scheduler(
    data: bytes, total_epochs: int | None = None
) -> AbelScheduler | PlateauScheduler:
    """Decode scheduler state bytes.

    ``total_epochs``, if given, retargets a bounce scheduler's final decay to
    the new budget (the stored last_decay_fraction is kept). It is rejected
    for plateau schedulers, whose behaviour never depends on the budget.
    """
    r = _Reader(data)
    if bytes(r.take("<4s")[0]) != MAGIC:
        raise StateDecodeError("bad magic: not a scheduler state blob")
    version, kind = r.take("<HB")
    if version != VERSION:
        raise StateDecodeError(f"unsupported scheduler state version {version}")

    if kind == _KIND_ABEL:
        base_lr, current_lr, decay_factor, last_decay_fraction = r.take("<dddd")
        total, epoch, window, min_history, reached = r.take("<IIHHB")
        (n_raw,) = r.take("<I")
        raw = r.take_floats(n_raw)
        (n_smooth,) = r.take("<I")
        smooth = r.take_floats(n_smooth)
        events = _unpack_events(r)
        r.done()
        s = AbelScheduler(
            base_lr=base_lr,
            decay_factor=decay_factor,
            total_epochs=total,
            last_decay_fraction=last_decay_fraction,
            smoothing_window=window,
            min_history=min_history,
        )
        s.current_lr = current_lr
        s.epoch = epoch
        s.reached_minimum = bool(reached)
        s.norm_history = raw
        s.smoothed_history = smooth
        s.decay_log = events
        if total_epochs is not None:
            s.retarget(total_epochs)
        return s

    if kind == _KIND_PLATEAU:
        if total_epochs is not None:
            raise StateDecodeError("plateau scheduler state does not carry a training budget")
        base_lr, current_lr, factor, threshold = r.take("<dddd")
        patience, since, epoch = r.take("<III")
        (mode_code,) = r.take("<B")
        if mode_code >= len(_MODES):
            raise StateDecodeError(f"unknown plateau mode code {mode_code}")
        has_best, best = r.take("<Bd")
        events = _unpack_events(r)
        r.done()
        p = PlateauScheduler(
            base_lr=base_lr, factor=factor, patience=patience, threshold=threshold,
            mode=_MODES[mode_code],
        )
        p.current_lr = current_lr
        p.epochs_since_improvement = since
        p.epoch = epoch
        p.best_metric = best if has_best else None
        p.decay_log = events
        return p

    raise StateDecodeError(f"unknown scheduler kind code {kind}")
