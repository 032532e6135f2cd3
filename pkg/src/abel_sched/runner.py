"""Reproducible training runs with per-epoch logging and auto-stop.

One run writes four files into its log directory:

* ``metrics.csv`` -- one row per epoch, fixed column order
  ``epoch,lr,train_loss,train_error,test_error,wsq_total,wsq_l2_only,
  gw_total,wall_ms``. Floats use round-trippable repr; ``gw_total`` is
  empty unless enabled; ``wall_ms`` (last column) is wall-clock and is the
  only non-deterministic field.
* ``layers.csv`` -- long-format per-layer squared norms
  (``epoch,layer,wsq``).
* ``events.csv`` -- learning-rate changes (``epoch,old_lr,new_lr,trigger``).
* ``meta.json`` -- config hash, package version, final status and summary.
* ``config.txt`` -- the canonical config text.

Determinism: parameters come from ``seed``; the epoch-e minibatch order
comes from a generator seeded with ``[seed, e]``, so resuming at any epoch
reproduces the remaining records exactly. The squared weight norm is
measured after the last optimizer step of an epoch, before the scheduler
observes it; the bounce scheduler watches the total squared norm, the
plateau scheduler watches the epoch's mean training loss.

Auto-stop: when ``auto_stop_min_improvement > 0``, training stops a fixed
3 epochs after any bounce decay whose improvement in best test error is
below the threshold (best over all epochs up to the decay versus best in
the 3 epochs after it). Auto-stop bookkeeping is process-local: it is not
carried across checkpoint/resume.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__ as _version
from .adaptive import AbelScheduler, PlateauScheduler, make_scheduler
from .config import ExperimentConfig, config_hash, format_config
from .datasets import dataset_meta, make_dataset
from .models import Model, ModelArch, NumericError
from .optim import AdamState, MomentumState, clip_global_norm, step_adam, step_sgd
from .params import ParamSet, inner_gw, weight_norm_sq
from .schedules import LrEvent, has_discrete_milestones, lr_at, warmup_scale
from .state_io import restore_scheduler, serialize_scheduler

AUTO_STOP_SETTLE_EPOCHS = 3

METRICS_COLUMNS = ("epoch", "lr", "train_loss", "train_error", "test_error",
                   "wsq_total", "wsq_l2_only", "gw_total", "wall_ms")


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_error: float
    test_error: float
    wsq_total: float
    wsq_l2_only: float
    per_layer_wsq: dict[str, float]
    gw_total: float | None = None
    wall_ms: int = 0


@dataclass
class RunState:
    """Everything needed to continue a run from an epoch boundary."""

    epoch: int
    global_step: int
    params: ParamSet
    opt: MomentumState | AdamState
    scheduler_bytes: bytes


@dataclass
class RunResult:
    records: list[EpochRecord]
    events: list[LrEvent]
    meta: dict
    log_dir: Path

    @property
    def best_test_error(self) -> float:
        return min(r.test_error for r in self.records)

    @property
    def final_test_error(self) -> float:
        return self.records[-1].test_error


def build_model(config: ExperimentConfig) -> tuple[Model, dict]:
    """Model plus dataset metadata; the arch takes input_dim/classes from the data."""
    train, test = make_dataset(config.dataset)
    meta = dataset_meta(config.dataset, train)
    m = config.model
    arch = ModelArch(
        input_dim=meta["input_dim"], hidden=m.hidden, classes=meta["classes"],
        kind=m.kind, activation=m.activation, normalize=m.normalize,
        init_scale=m.init_scale, input_shape=m.input_shape)
    return Model(arch), {"train": train, "test": test, **meta}


def _init_opt(config: ExperimentConfig, params: ParamSet):
    if config.optimizer.kind == "momentum":
        return MomentumState.init(params, mu=config.optimizer.momentum)
    return AdamState.init(params, beta1=config.optimizer.beta1,
                          beta2=config.optimizer.beta2, eps=config.optimizer.eps)


def _fmt(value: float) -> str:
    return repr(float(value))


class _RunLog:
    def __init__(self, log_dir: Path, config: ExperimentConfig):
        log_dir.mkdir(parents=True, exist_ok=True)
        self.dir = log_dir
        (log_dir / "config.txt").write_text(format_config(config))
        self.metrics = open(log_dir / "metrics.csv", "w")
        self.metrics.write(",".join(METRICS_COLUMNS) + "\n")
        self.layers = open(log_dir / "layers.csv", "w")
        self.layers.write("epoch,layer,wsq\n")
        self.events = open(log_dir / "events.csv", "w")
        self.events.write("epoch,old_lr,new_lr,trigger\n")

    def write_record(self, rec: EpochRecord) -> None:
        gw = "" if rec.gw_total is None else _fmt(rec.gw_total)
        self.metrics.write(
            f"{rec.epoch},{_fmt(rec.lr)},{_fmt(rec.train_loss)},{_fmt(rec.train_error)},"
            f"{_fmt(rec.test_error)},{_fmt(rec.wsq_total)},{_fmt(rec.wsq_l2_only)},"
            f"{gw},{rec.wall_ms}\n")
        for name, wsq in rec.per_layer_wsq.items():
            self.layers.write(f"{rec.epoch},{name},{_fmt(wsq)}\n")
        self.flush()

    def write_events(self, events: list[LrEvent]) -> None:
        for ev in events:
            self.events.write(f"{ev.epoch},{_fmt(ev.old_lr)},{_fmt(ev.new_lr)},{ev.trigger}\n")
        self.events.flush()

    def flush(self) -> None:
        self.metrics.flush()
        self.layers.flush()

    def close(self) -> None:
        self.metrics.close()
        self.layers.close()
        self.events.close()

    def write_meta(self, meta: dict) -> None:
        (self.dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def run_experiment(config: ExperimentConfig, resume_state: RunState | None = None,
                   quiet: bool = True) -> RunResult:
    """Train per the config, logging one record per epoch.

    ``resume_state`` continues a checkpointed run; only epochs after
    ``resume_state.epoch`` are executed and logged. Raises
    :class:`DivergenceError` on a non-finite training loss.
    """
    model, data = build_model(config)
    xtr, ytr = data["train"]
    xte, yte = data["test"]
    n = xtr.shape[0]
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    spec = config.schedule

    if resume_state is None:
        params = model.init_params(config.seed)
        opt = _init_opt(config, params)
        scheduler = make_scheduler(spec, total_epochs=config.epochs)
        start_epoch = 0
        global_step = 0
    else:
        params = resume_state.params
        opt = resume_state.opt
        scheduler = (restore_scheduler(resume_state.scheduler_bytes)
                     if resume_state.scheduler_bytes else None)
        if isinstance(scheduler, AbelScheduler) and scheduler.total_epochs != config.epochs:
            scheduler.retarget(config.epochs)
        start_epoch = resume_state.epoch
        global_step = resume_state.global_step

    log = _RunLog(Path(config.log_dir), config)
    meta = {
        "config_hash": config_hash(config),
        "version": _version,
        "status": "running",
        "start_epoch": start_epoch,
        "epochs": config.epochs,
    }
    log.write_meta(meta)

    records: list[EpochRecord] = []
    all_events: list[LrEvent] = []
    pending_stop_check: list[int] = []  # bounce-decay epochs awaiting the settle window
    status = "completed"
    probe = slice(0, min(config.batch_size, n))

    def schedule_lr(epoch: int) -> float:
        # epoch is 1-based; the lr for epoch e is the schedule value at t = e - 1
        if scheduler is not None:
            return scheduler.current_lr
        return lr_at(spec, epoch - 1, config.epochs)

    try:
        for epoch in range(start_epoch + 1, config.epochs + 1):
            t0 = time.perf_counter()
            lr_epoch = schedule_lr(epoch)
            order = np.random.default_rng([config.seed, epoch]).permutation(n)
            loss_sum = 0.0
            err_sum = 0.0
            eff_lr = lr_epoch
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                loss, grads, err = model.train_step_stats(
                    params, xtr[idx], ytr[idx], config.label_smoothing)
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}")
                if config.clip_norm > 0:
                    grads = clip_global_norm(grads, config.clip_norm)
                eff_lr = lr_epoch * warmup_scale(global_step, steps_per_epoch,
                                                 spec.warmup_epochs)
                if isinstance(opt, MomentumState):
                    params, opt = step_sgd(params, opt, grads, eff_lr, config.weight_decay)
                else:
                    params, opt = step_adam(params, opt, grads, eff_lr, config.weight_decay)
                global_step += 1
                loss_sum += loss * len(idx)
                err_sum += err * len(idx)

            train_loss = loss_sum / n
            train_error = err_sum / n
            wsq_total, per_layer = weight_norm_sq(params)
            wsq_l2, _ = weight_norm_sq(params, include="l2_only")
            gw_total = None
            if config.log_gw:
                _, grads, _ = model.train_step_stats(
                    params, xtr[probe], ytr[probe], config.label_smoothing)
                gw_total, _ = inner_gw(params, grads)
            test_error = model.error_rate(params, xte, yte, batch_size=config.eval_batch)

            events: list[LrEvent] = []
            if isinstance(scheduler, AbelScheduler):
                _, events = scheduler.observe_epoch(wsq_total)
            elif isinstance(scheduler, PlateauScheduler):
                _, events = scheduler.observe_epoch(train_loss)
            elif has_discrete_milestones(spec) and epoch < config.epochs:
                next_lr = lr_at(spec, epoch, config.epochs)
                if next_lr != lr_epoch:
                    events = [LrEvent(epoch=epoch, old_lr=lr_epoch, new_lr=next_lr,
                                      trigger="milestone")]

            rec = EpochRecord(
                epoch=epoch, lr=eff_lr, train_loss=train_loss, train_error=train_error,
                test_error=test_error, wsq_total=wsq_total, wsq_l2_only=wsq_l2,
                per_layer_wsq=per_layer, gw_total=gw_total,
                wall_ms=int((time.perf_counter() - t0) * 1000))
            records.append(rec)
            all_events.extend(events)
            log.write_record(rec)
            log.write_events(events)

            if config.checkpoint_every > 0 and epoch % config.checkpoint_every == 0:
                from .checkpoint import save_checkpoint
                state = RunState(
                    epoch=epoch, global_step=global_step, params=params, opt=opt,
                    scheduler_bytes=serialize_scheduler(scheduler) if scheduler else b"")
                save_checkpoint(log.dir / f"epoch_{epoch:04d}.ckpt", config, state)

            pending_stop_check.extend(
                ev.epoch for ev in events if ev.trigger == "bounce")
            if _should_auto_stop(config, records, pending_stop_check, epoch):
                status = "auto_stopped"
                break
    except NumericError as exc:
        meta.update(status="diverged", error=str(exc), epochs_run=len(records))
        log.write_meta(meta)
        log.close()
        raise DivergenceError(str(exc)) from exc

    best = min(records, key=lambda r: r.test_error) if records else None
    meta.update(
        status=status,
        epochs_run=start_epoch + len(records),
        best_test_error=best.test_error if best else None,
        best_epoch=best.epoch if best else None,
        final_test_error=records[-1].test_error if records else None,
        decay_events=[{"epoch": ev.epoch, "old_lr": ev.old_lr, "new_lr": ev.new_lr,
                       "trigger": ev.trigger} for ev in all_events],
    )
    log.write_meta(meta)
    log.close()
    if not quiet:
        print(f"run {log.dir}: {meta['status']}, best test error "
              f"{meta['best_test_error']} at epoch {meta['best_epoch']}")
    return RunResult(records=records, events=all_events, meta=meta, log_dir=log.dir)


def _should_auto_stop(config: ExperimentConfig, records: list[EpochRecord],
                      pending: list[int], epoch: int) -> bool:
    if config.auto_stop_min_improvement <= 0:
        return False
    by_epoch = {r.epoch: r.test_error for r in records}
    for decay_epoch in list(pending):
        if epoch >= decay_epoch + AUTO_STOP_SETTLE_EPOCHS:
            pending.remove(decay_epoch)
            before = min(err for ep, err in by_epoch.items() if ep <= decay_epoch)
            after = min(err for ep, err in by_epoch.items() if ep > decay_epoch)
            if before - after < config.auto_stop_min_improvement:
                return True
    return False


# -- reading logs back --------------------------------------------------------


def read_metrics(log_dir: str | Path) -> list[EpochRecord]:
    """Parse metrics.csv and layers.csv back into records."""
    log_dir = Path(log_dir)
    per_layer: dict[int, dict[str, float]] = {}
    layers_file = log_dir / "layers.csv"
    if layers_file.exists():
        for line in layers_file.read_text().splitlines()[1:]:
            epoch_s, name, wsq_s = line.split(",")
            per_layer.setdefault(int(epoch_s), {})[name] = float(wsq_s)
    records = []
    lines = (log_dir / "metrics.csv").read_text().splitlines()
    if lines and lines[0] != ",".join(METRICS_COLUMNS):
        raise ValueError(f"unexpected metrics header in {log_dir}")
    for line in lines[1:]:
        parts = line.split(",")
        epoch = int(parts[0])
        records.append(EpochRecord(
            epoch=epoch, lr=float(parts[1]), train_loss=float(parts[2]),
            train_error=float(parts[3]), test_error=float(parts[4]),
            wsq_total=float(parts[5]), wsq_l2_only=float(parts[6]),
            per_layer_wsq=per_layer.get(epoch, {}),
            gw_total=float(parts[7]) if parts[7] else None,
            wall_ms=int(parts[8])))
    return records


def read_events(log_dir: str | Path) -> list[LrEvent]:
    path = Path(log_dir) / "events.csv"
    events = []
    for line in path.read_text().splitlines()[1:]:
        epoch_s, old_s, new_s, trigger = line.split(",")
        events.append(LrEvent(epoch=int(epoch_s), old_lr=float(old_s),
                              new_lr=float(new_s), trigger=trigger))
    return events
