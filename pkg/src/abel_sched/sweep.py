"""Grid sweeps over a template config.

A grid specification is ``name=v1,v2,...`` groups joined by semicolons, e.g.
``base_lr=0.5,1,2;decay_factor=0.5,0.2,0.1``. Sweepable names: ``base_lr``,
``decay_factor`` (the decay multiplier of whichever schedule is configured),
``init_scale`` and ``weight_decay``. Each grid point trains in its own
subdirectory of the sweep directory; failures are recorded in the summary
and do not stop the sweep. Points are independent, so they may run in
parallel worker processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

from .config import ConfigError, ExperimentConfig, format_config
from .runner import DivergenceError, run_experiment

SWEEPABLE = ("base_lr", "decay_factor", "init_scale", "weight_decay")


@dataclass
class SweepPoint:
    index: int
    values: dict[str, float]
    status: str
    best_test_error: float | None = None
    best_epoch: int | None = None
    final_test_error: float | None = None
    first_decay_epoch: int | None = None
    n_decays: int = 0
    decay_epochs: tuple[int, ...] = ()
    log_dir: str = ""


def parse_grid(spec: str) -> dict[str, list[float]]:
    grid: dict[str, list[float]] = {}
    for group in spec.split(";"):
        group = group.strip()
        if not group:
            continue
        name, eq, rest = group.partition("=")
        name = name.strip()
        if not eq or name not in SWEEPABLE:
            raise ConfigError(f"grid axis must be one of {SWEEPABLE}, got {name!r}")
        try:
            values = [float(v) for v in rest.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad grid values for {name!r}: {rest!r}") from None
        if not values:
            raise ConfigError(f"empty grid for {name!r}")
        grid[name] = values
    if not grid:
        raise ConfigError("empty grid specification")
    return grid


def apply_point(config: ExperimentConfig, values: dict[str, float]) -> ExperimentConfig:
    """Template config with one grid point's values substituted."""
    sched = config.schedule
    for name, value in values.items():
        if name == "base_lr":
            config = replace(config, base_lr=value)
            sched = replace(sched, base_lr=value)
        elif name == "decay_factor":
            if sched.kind == "abel":
                sched = replace(sched, decay_factor=value)
            elif sched.kind in ("simple", "plateau"):
                sched = replace(sched, factor=value)
            elif sched.kind == "stepwise":
                sched = replace(sched, milestones=tuple(
                    (epoch, value) for epoch, _ in sched.milestones))
            else:
                raise ConfigError(
                    f"decay_factor does not apply to a {sched.kind!r} schedule")
        elif name == "init_scale":
            config = replace(config, model=replace(config.model, init_scale=value))
        elif name == "weight_decay":
            config = replace(config, weight_decay=value)
    return replace(config, schedule=sched)


def _point_dir_name(index: int, values: dict[str, float]) -> str:
    tags = "__".join(f"{k}={v:g}" for k, v in values.items())
    return f"point_{index:03d}__{tags}"


def _run_point(args: tuple[int, ExperimentConfig, dict[str, float]]) -> SweepPoint:
    index, config, values = args
    point = SweepPoint(index=index, values=values, status="ok", log_dir=config.log_dir)
    try:
        result = run_experiment(config)
    except DivergenceError:
        point.status = "diverged"
        return point
    except Exception as exc:  # individual failures must not kill the sweep
        point.status = f"error: {exc}"
        return point
    decays = [ev.epoch for ev in result.events]
    best = min(result.records, key=lambda r: r.test_error)
    point.best_test_error = best.test_error
    point.best_epoch = best.epoch
    point.final_test_error = result.final_test_error
    point.first_decay_epoch = decays[0] if decays else None
    point.n_decays = len(decays)
    point.decay_epochs = tuple(decays)
    if result.meta["status"] == "auto_stopped":
        point.status = "auto_stopped"
    return point


def run_sweep(template: ExperimentConfig, grid: dict[str, list[float]],
              sweep_dir: str | Path, jobs: int = 1) -> list[SweepPoint]:
    """One run per grid point; returns summary rows and writes summary.csv."""
    sweep_dir = Path(sweep_dir)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    (sweep_dir / "template.txt").write_text(format_config(template))

    names = list(grid)
    tasks = []
    for index, combo in enumerate(product(*(grid[name] for name in names))):
        values = dict(zip(names, combo))
        config = apply_point(template, values)
        config = replace(config, log_dir=str(sweep_dir / _point_dir_name(index, values)))
        tasks.append((index, config, values))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_run_point, tasks))
    else:
        points = [_run_point(task) for task in tasks]

    header = ["point", *names, "status", "best_test_error", "best_epoch",
              "final_test_error", "first_decay_epoch", "n_decays", "decay_epochs"]
    lines = [",".join(header)]
    for p in points:
        row = [str(p.index), *(repr(p.values[name]) for name in names), p.status,
               "" if p.best_test_error is None else repr(p.best_test_error),
               "" if p.best_epoch is None else str(p.best_epoch),
               "" if p.final_test_error is None else repr(p.final_test_error),
               "" if p.first_decay_epoch is None else str(p.first_decay_epoch),
               str(p.n_decays),
               ";".join(str(e) for e in p.decay_epochs)]
        lines.append(",".join(row))
    (sweep_dir / "summary.csv").write_text("\n".join(lines) + "\n")
    return points
