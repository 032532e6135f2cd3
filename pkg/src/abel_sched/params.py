"""Named, ordered parameter tensors with per-layer norm instrumentation.

The total squared weight norm is the sum over layers of each tensor's
squared L2 norm. Layers carry two flags: ``l2_enabled`` (whether the L2
penalty acts on them) and ``scale_invariant`` (whether the network function
is unchanged under rescaling of that tensor, which forces g.w = 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GradSet = dict[str, np.ndarray]


@dataclass
class Layer:
    name: str
    value: np.ndarray
    l2_enabled: bool = True
    scale_invariant: bool = False


class ParamSet:
    """Ordered collection of named parameter tensors."""

    def __init__(self, layers: list[Layer]):
        names = [l.name for l in layers]
        if len(set(names)) != len(names):
            raise ValueError("duplicate layer names")
        self.layers = layers
        self._by_name = {l.name: l for l in layers}

    def __iter__(self):
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, name: str) -> Layer:
        return self._by_name[name]

    def names(self) -> list[str]:
        return [l.name for l in self.layers]

    def values(self) -> GradSet:
        return {l.name: l.value for l in self.layers}

    def copy(self) -> "ParamSet":
        return ParamSet([Layer(l.name, l.value.copy(), l.l2_enabled, l.scale_invariant)
                         for l in self.layers])

    def with_values(self, values: GradSet) -> "ParamSet":
        """New ParamSet with the same layer metadata and the given tensors."""
        if set(values) != set(self._by_name):
            raise ValueError("layer names do not match")
        out = []
        for l in self.layers:
            v = values[l.name]
            if v.shape != l.value.shape:
                raise ValueError(f"shape mismatch on layer {l.name!r}: "
                                 f"{v.shape} vs {l.value.shape}")
            out.append(Layer(l.name, v, l.l2_enabled, l.scale_invariant))
        return ParamSet(out)

    def scaled(self, alpha: float) -> "ParamSet":
        return self.with_values({l.name: l.value * alpha for l in self.layers})


def check_congruent(params: ParamSet, grads: GradSet) -> None:
    if set(grads) != set(params.names()):
        raise ValueError("gradient layer names do not match parameters")
    for layer in params:
        if grads[layer.name].shape != layer.value.shape:
            raise ValueError(f"gradient shape mismatch on layer {layer.name!r}")


def weight_norm_sq(params: ParamSet, include: str = "all") -> tuple[float, dict[str, float]]:
    """Total and per-layer squared L2 norms.

    ``include="l2_only"`` restricts to layers with the L2 penalty enabled.
    """
    if include not in ("all", "l2_only"):
        raise ValueError("include must be 'all' or 'l2_only'")
    per_layer: dict[str, float] = {}
    for layer in params:
        if include == "l2_only" and not layer.l2_enabled:
            continue
        v = layer.value
        per_layer[layer.name] = float(np.dot(v.ravel(), v.ravel()))
    return sum(per_layer.values()), per_layer


def inner_gw(params: ParamSet, grads: GradSet) -> tuple[float, dict[str, float]]:
    """Inner product g.w over all coordinates, with per-layer decomposition."""
    check_congruent(params, grads)
    per_layer = {
        layer.name: float(np.dot(grads[layer.name].ravel(), layer.value.ravel()))
        for layer in params
    }
    return sum(per_layer.values()), per_layer


def grad_norm_sq(grads: GradSet) -> float:
    return float(sum(np.dot(g.ravel(), g.ravel()) for g in grads.values()))


def angle_cos_sin(w_prev: ParamSet, w_next: ParamSet) -> tuple[float, float]:
    """Cosine and sine of the angle between two full parameter vectors."""
    if w_prev.names() != w_next.names():
        raise ValueError("parameter sets have different layers")
    dot = 0.0
    nsq_prev = 0.0
    nsq_next = 0.0
    for a, b in zip(w_prev, w_next):
        if a.value.shape != b.value.shape:
            raise ValueError(f"shape mismatch on layer {a.name!r}")
        dot += float(np.dot(a.value.ravel(), b.value.ravel()))
        nsq_prev += float(np.dot(a.value.ravel(), a.value.ravel()))
        nsq_next += float(np.dot(b.value.ravel(), b.value.ravel()))
    if nsq_prev == 0.0 or nsq_next == 0.0:
        raise ValueError("angle is undefined for a zero parameter vector")
    cos = dot / np.sqrt(nsq_prev * nsq_next)
    sin = np.sqrt(max(0.0, 1.0 - cos * cos))
    return float(cos), float(sin)
