"""Optimizer steps, gradient clipping, and the squared-norm update identity.

The L2 coefficient acts as an added gradient ``weight_decay * w`` on layers
with ``l2_enabled`` (plain L2 regularization, not decoupled decay, for both
SGD and Adam). Gradients passed in are of the bare loss.

For plain SGD (momentum 0) the per-layer change of the squared weight norm
obeys an exact identity in the learning rate, L2 coefficient, gradient norm
and g.w; :func:`predicted_delta_wsq` evaluates it, and
:func:`predicted_delta_wsq_truncated` evaluates the first-order-in-lr*l2
truncation used for intuition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import GradSet, ParamSet, check_congruent, grad_norm_sq


@dataclass
class MomentumState:
    """Heavy-ball buffer: v <- mu*v + (g + l2*w), step is -lr*v."""

    mu: float
    velocity: GradSet

    @classmethod
    def init(cls, params: ParamSet, mu: float = 0.9) -> "MomentumState":
        if not 0.0 <= mu < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        return cls(mu=mu, velocity={l.name: np.zeros_like(l.value) for l in params})


@dataclass
class AdamState:
    """Bias-corrected Adam moments."""

    m: GradSet
    v: GradSet
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: ParamSet, beta1: float = 0.9, beta2: float = 0.999,
             eps: float = 1e-8) -> "AdamState":
        return cls(
            m={l.name: np.zeros_like(l.value) for l in params},
            v={l.name: np.zeros_like(l.value) for l in params},
            beta1=beta1, beta2=beta2, eps=eps,
        )


OptState = MomentumState | AdamState


def clip_global_norm(grads: GradSet, max_norm: float) -> GradSet:
    """Scale all gradients by max_norm/||g|| when the global norm exceeds it."""
    if not max_norm > 0:
        raise ValueError("max_norm must be > 0")
    norm = float(np.sqrt(grad_norm_sq(grads)))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


def _l2_grad(layer, grads: GradSet, weight_decay: float) -> np.ndarray:
    g = grads[layer.name]
    if weight_decay != 0.0 and layer.l2_enabled:
        return g + weight_decay * layer.value
    return g


def step_sgd(
    params: ParamSet,
    opt: MomentumState,
    grads: GradSet,
    lr: float,
    weight_decay: float = 0.0,
) -> tuple[ParamSet, MomentumState]:
    """One SGD step; with mu = 0 this is exactly w <- w - lr*g - lr*l2*w."""
    check_congruent(params, grads)
    new_values: GradSet = {}
    new_velocity: GradSet = {}
    for layer in params:
        g = _l2_grad(layer, grads, weight_decay)
        if opt.mu == 0.0:
            v = g
        else:
            v = opt.mu * opt.velocity[layer.name] + g
        new_velocity[layer.name] = v
        new_values[layer.name] = layer.value - lr * v
    return params.with_values(new_values), MomentumState(mu=opt.mu, velocity=new_velocity)


def step_adam(
    params: ParamSet,
    opt: AdamState,
    grads: GradSet,
    lr: float,
    weight_decay: float = 0.0,
) -> tuple[ParamSet, AdamState]:
    """One bias-corrected Adam step with L2 as an added gradient."""
    check_congruent(params, grads)
    t = opt.t + 1
    c1 = 1.0 - opt.beta1 ** t
    c2 = 1.0 - opt.beta2 ** t
    new_values: GradSet = {}
    new_m: GradSet = {}
    new_v: GradSet = {}
    for layer in params:
        g = _l2_grad(layer, grads, weight_decay)
        m = opt.beta1 * opt.m[layer.name] + (1.0 - opt.beta1) * g
        v = opt.beta2 * opt.v[layer.name] + (1.0 - opt.beta2) * g * g
        new_m[layer.name] = m
        new_v[layer.name] = v
        new_values[layer.name] = layer.value - lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params.with_values(new_values), AdamState(
        m=new_m, v=new_v, t=t, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)


def predicted_delta_wsq(wsq: float, gsq: float, gw: float, lr: float,
                        weight_decay: float) -> float:
    """Exact per-step change of |w|^2 under plain SGD with L2.

    Expanding |w - lr*(g + l2*w)|^2 - |w|^2 gives

        lr^2*|g|^2 - (2 - lr*l2)*lr*l2*|w|^2 - 2*lr*(1 - lr*l2)*g.w

    with no approximation.
    """
    e = lr * weight_decay
    return lr * lr * gsq - (2.0 - e) * e * wsq - 2.0 * lr * (1.0 - e) * gw


def predicted_delta_wsq_truncated(wsq: float, gsq: float, gw: float, lr: float,
                                  weight_decay: float) -> float:
    """First order in lr*l2: lr^2*|g|^2 - 2*lr*l2*|w|^2 - 2*lr*g.w."""
    return lr * lr * gsq - 2.0 * lr * weight_decay * wsq - 2.0 * lr * gw


def growth_threshold_lr(gsq: float, gw: float) -> float | None:
    """Learning rate above which |w|^2 grows this step when l2 = 0.

    From the identity with weight_decay = 0: delta = lr^2*|g|^2 - 2*lr*g.w,
    positive for lr > 2*g.w/|g|^2. Only defined when g.w > 0 and |g| > 0;
    returns None otherwise (delta is already nonnegative for any lr).
    """
    if gw <= 0.0 or gsq <= 0.0:
        return None
    return 2.0 * gw / gsq
