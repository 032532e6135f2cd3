"""Shared test fixtures-in-spirit: task configs, oracles, and replay checkers.

The checkers here are deliberately independent re-implementations of the
library's logic (naive loops, no shared code paths) so the tests compare
two routes to the same answer.
"""

from __future__ import annotations

import numpy as np

from abel_sched import (
    BlobsSpec,
    ExperimentConfig,
    Model,
    ModelSpec,
    OptimizerSpec,
    ScheduleSpec,
    config_hash,
    run_experiment,
)

# -- the standard hard synthetic task ------------------------------------------
#
# Blobs with 20% label noise (irreducible train error), a row-normalized tanh
# MLP (every weight tensor scale-invariant, no biases), plain SGD, gradient
# clipping, label smoothing, 5 warmup epochs. The init norm starts well above
# the L2 equilibrium, so with weight decay the squared norm falls, bounces,
# and equilibrates; without weight decay it grows monotonically. The largest
# stable learning rate on the documented grid {0.25..8} is 4.0.

STANDARD_EPOCHS = 200
STANDARD_LR = 4.0
STANDARD_WEIGHT_DECAY = 5e-4
STANDARD_SMOOTHING_WINDOW = 5
CLASSIFY_TOL = 0.005


def standard_dataset() -> BlobsSpec:
    return BlobsSpec(classes=4, dim=20, samples=2048, test_samples=8192,
                     label_noise=0.2, separation=2.5, seed=7)


def standard_config(schedule_kind: str, *, base_lr: float = STANDARD_LR,
                    weight_decay: float = STANDARD_WEIGHT_DECAY, seed: int = 0,
                    epochs: int = STANDARD_EPOCHS, log_dir: str = "unused",
                    decay_factor: float = 0.2, **schedule_kwargs) -> ExperimentConfig:
    schedule_defaults = {
        "stepwise": dict(milestones=((60, decay_factor), (120, decay_factor),
                                     (160, decay_factor))),
        "cosine": dict(cosine_form="quarter"),
        "simple": dict(decay_fraction=0.85, factor=decay_factor),
        "abel": dict(decay_factor=decay_factor, last_decay_fraction=0.85,
                     smoothing_window=STANDARD_SMOOTHING_WINDOW),
        "constant": {},
        "linear": dict(final_lr=0.0),
        "plateau": dict(factor=decay_factor),
    }[schedule_kind]
    schedule_defaults.update(schedule_kwargs)
    return ExperimentConfig(
        epochs=epochs,
        base_lr=base_lr,
        log_dir=log_dir,
        dataset=standard_dataset(),
        model=ModelSpec(kind="mlp", hidden=(32, 16), activation="tanh",
                        normalize=True, init_scale=4.0),
        optimizer=OptimizerSpec(kind="momentum", momentum=0.0),
        schedule=ScheduleSpec(kind=schedule_kind, base_lr=base_lr,
                              warmup_epochs=5, total_epochs=epochs,
                              **schedule_defaults),
        seed=seed,
        batch_size=128,
        weight_decay=weight_decay,
        label_smoothing=0.1,
        clip_norm=5.0,
    )


_RUN_CACHE: dict[tuple, object] = {}


def run_cached(config: ExperimentConfig, tmp_root) -> object:
    """Run once per distinct config per session; log dirs under tmp_root."""
    key = config_hash(config)
    if key not in _RUN_CACHE:
        from dataclasses import replace
        cfg = replace(config, log_dir=str(tmp_root / f"run-{key[:12]}"))
        _RUN_CACHE[key] = run_experiment(cfg)
    return _RUN_CACHE[key]


# -- oracles --------------------------------------------------------------------


def finite_difference_grads(model: Model, params, x, y, label_smoothing=0.0, h=1e-5):
    """Central-difference gradients, the independent oracle for backprop."""
    grads = {}
    for layer in params:
        flat = layer.value.ravel()
        g = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = model.loss(params, x, y, label_smoothing)
            flat[i] = orig - h
            lm = model.loss(params, x, y, label_smoothing)
            flat[i] = orig
            g[i] = (lp - lm) / (2.0 * h)
        grads[layer.name] = g.reshape(layer.value.shape)
    return grads


def gradcheck_worst_rel_err(arch, seed=0, n_coords=40, h=1e-5, batch=8,
                            label_smoothing=0.1):
    """Worst relative error between backprop and central differences.

    Samples ``n_coords`` coordinates per tensor (all when the tensor is
    smaller), so the total always exceeds 100 per architecture.
    """
    model = Model(arch)
    params = model.init_params(seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(batch, arch.input_dim))
    y = rng.integers(0, arch.classes, size=batch)
    _, grads = model.loss_and_grad(params, x, y, label_smoothing)
    worst = 0.0
    total = 0
    for layer in params:
        flat = layer.value.ravel()
        g = grads[layer.name].ravel()
        idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp = model.loss(params, x, y, label_smoothing)
            flat[i] = orig - h
            lm = model.loss(params, x, y, label_smoothing)
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            denom = max(abs(fd), abs(g[i]), 1e-8)
            worst = max(worst, abs(fd - g[i]) / denom)
            total += 1
    return worst, total


class FlipReplay:
    """Naive re-simulation of the arm/fire sign-flip automaton.

    Independent of AbelScheduler: feeds a raw norm history and predicts the
    epochs of bounce decays and the final decay.
    """

    def __init__(self, total_epochs, last_decay_fraction=0.85, window=1, min_history=3):
        self.total = total_epochs
        self.last = round(last_decay_fraction * total_epochs)
        self.window = window
        self.min_history = min_history

    def decay_epochs(self, history):
        smoothed = []
        armed = False
        bounces = []
        finals = []
        for epoch in range(1, len(history) + 1):
            if epoch % self.window == 0:
                block = history[epoch - self.window:epoch]
                smoothed.append(sum(block) / self.window)
                if len(smoothed) >= self.min_history:
                    d1 = smoothed[-1] - smoothed[-2]
                    d0 = smoothed[-2] - smoothed[-3]
                    if d1 * d0 < 0:
                        if armed:
                            armed = False
                            bounces.append(epoch)
                        else:
                            armed = True
            if epoch == self.last:
                finals.append(epoch)
        return bounces, finals


def brute_force_bounces(values, noise_tol=0.0):
    """Exhaustive checker of the bounce definition on one fixed-lr segment.

    For every epoch m, search all candidate down-runs ending at m and
    up-runs starting at m by direct enumeration.
    """
    n = len(values)
    hits = []
    for m in range(n):
        start = m
        while start > 0 and values[start] <= values[start - 1] + noise_tol * values[start - 1]:
            start -= 1
        end = m
        while end < n - 1 and values[end + 1] >= values[end] - noise_tol * values[end]:
            end += 1
        if (m - start >= 2 and end - m >= 2
                and values[start] - values[m] > noise_tol * values[m]
                and values[end] - values[m] > noise_tol * values[m]):
            hits.append(m)
    return hits


def measured_delta_wsq(before, after) -> dict[str, float]:
    """Per-layer change of the squared norm, evaluated cancellation-free.

    sum((w' - w) * (w' + w)) equals |w'|^2 - |w|^2 exactly in real
    arithmetic; the factored form keeps full float precision when the
    change is tiny relative to the norm itself.
    """
    out = {}
    for layer in before:
        w0 = layer.value.ravel()
        w1 = after[layer.name].value.ravel()
        out[layer.name] = float(np.dot(w1 - w0, w1 + w0))
    return out


def strip_wall_ms(csv_text: str) -> str:
    """Drop the trailing wall-clock column, the one non-deterministic field."""
    lines = csv_text.splitlines()
    return "\n".join(line.rsplit(",", 1)[0] for line in lines)
