"""Minimal feedforward classifiers with hand-written reverse-mode gradients.

Two families:

* ``mlp`` -- dense layers with relu or tanh. With ``normalize=True`` every
  dense layer divides its pre-activations by the L2 norm of the incoming
  weight rows and carries no bias, which makes the network function exactly
  invariant under rescaling of any weight tensor (and hence g.w = 0).
* ``conv`` -- two 3x3 valid convolutions, a 2x2 mean pool, and a dense
  readout; used to get per-layer norm heterogeneity on image-shaped inputs.

Gradients are of the bare loss only: the L2 term is applied by the
optimizer, never folded into these gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import GradSet, Layer, ParamSet

ACTIVATIONS = ("relu", "tanh")


class NumericError(ArithmeticError):
    """Raised when a forward/backward pass produces non-finite values."""


@dataclass(frozen=True)
class ModelArch:
    """Shape and flavour of a classifier network."""

    input_dim: int
    hidden: tuple[int, ...]
    classes: int
    kind: str = "mlp"
    activation: str = "relu"
    normalize: bool = False
    init_scale: float = 1.0
    input_shape: tuple[int, int, int] | None = None  # (channels, height, width), conv only

    def __post_init__(self) -> None:
        if self.kind not in ("mlp", "conv"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.hidden) < 1:
            raise ValueError("need at least one hidden layer")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be > 0")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.kind == "conv":
            if self.input_shape is None:
                raise ValueError("conv models need input_shape=(channels, height, width)")
            c, h, w = self.input_shape
            if c * h * w != self.input_dim:
                raise ValueError("input_shape does not multiply out to input_dim")
            if len(self.hidden) != 2:
                raise ValueError("conv models use exactly two conv layers (hidden = channel counts)")
            if h < 6 or w < 6:
                raise ValueError("conv input must be at least 6x6 for two 3x3 valid convolutions")
            if self.normalize:
                raise ValueError("normalize is only supported for mlp models")


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def loss_ce(logits: np.ndarray, labels: np.ndarray, label_smoothing: float = 0.0) -> float:
    """Mean cross-entropy against label-smoothed targets.

    Smoothed target puts 1 - s on the true class and s/(C-1) on each other.
    """
    loss, _ = _loss_and_dlogits(logits, labels, label_smoothing)
    return loss


def _loss_and_dlogits(
    logits: np.ndarray, labels: np.ndarray, label_smoothing: float
) -> tuple[float, np.ndarray]:
    if not 0.0 <= label_smoothing < 1.0:
        raise ValueError("label_smoothing must lie in [0, 1)")
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError("logits must be (batch, classes) and labels (batch,)")
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("labels out of range")
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + m
    logp = logits - lse

    s = label_smoothing
    q = np.full_like(logits, s / (c - 1) if c > 1 else 0.0)
    q[np.arange(n), labels] = 1.0 - s
    loss = float(-(q * logp).sum() / n)
    dlogits = (np.exp(logp) - q) / n
    return loss, dlogits


class Model:
    """Stateless network: parameters travel separately as a ParamSet."""

    def __init__(self, arch: ModelArch, dtype=np.float64):
        self.arch = arch
        self.dtype = dtype

    # -- initialization -----------------------------------------------------

    def init_params(self, seed: int, init_scale: float | None = None) -> ParamSet:
        """Fan-in-scaled uniform init times ``init_scale``; biases start at zero.

        Deterministic in (arch, seed, init_scale). The raw draws do not
        depend on init_scale, so scaling the init scales every weight
        tensor linearly.
        """
        scale = self.arch.init_scale if init_scale is None else init_scale
        if not scale > 0:
            raise ValueError("init_scale must be > 0")
        rng = np.random.default_rng(seed)
        layers: list[Layer] = []

        def weight(name: str, shape: tuple[int, ...], fan_in: int, invariant: bool) -> None:
            a = np.sqrt(3.0 / fan_in)
            w = rng.uniform(-a, a, size=shape).astype(self.dtype) * scale
            layers.append(Layer(name, w, l2_enabled=True, scale_invariant=invariant))

        def bias(name: str, n: int) -> None:
            layers.append(Layer(name, np.zeros(n, dtype=self.dtype),
                                l2_enabled=False, scale_invariant=False))

        arch = self.arch
        if arch.kind == "mlp":
            dims = (arch.input_dim, *arch.hidden, arch.classes)
            for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
                name = f"fc{i + 1}" if i < len(arch.hidden) else "out"
                weight(f"{name}.w", (d_out, d_in), d_in, invariant=arch.normalize)
                if not arch.normalize:
                    bias(f"{name}.b", d_out)
        else:
            c_in = arch.input_shape[0]
            c1, c2 = arch.hidden
            weight("conv1.w", (c1, c_in, 3, 3), c_in * 9, invariant=False)
            bias("conv1.b", c1)
            weight("conv2.w", (c2, c1, 3, 3), c1 * 9, invariant=False)
            bias("conv2.b", c2)
            d_flat = self._conv_flat_dim()
            weight("out.w", (arch.classes, d_flat), d_flat, invariant=False)
            bias("out.b", arch.classes)
        return ParamSet(layers)

    def _conv_flat_dim(self) -> int:
        _, h, w = self.arch.input_shape
        h2, w2 = (h - 4) // 2, (w - 4) // 2
        return self.arch.hidden[1] * h2 * w2

    # -- forward ------------------------------------------------------------

    def forward(self, params: ParamSet, x: np.ndarray) -> np.ndarray:
        """Logits for a (batch, input_dim) input."""
        logits, _ = self._forward_cached(params, x)
        return logits

    def _forward_cached(self, params: ParamSet, x: np.ndarray):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.arch.input_dim:
            raise ValueError(f"expected input of shape (batch, {self.arch.input_dim})")
        if self.arch.kind == "mlp":
            return self._forward_mlp(params, x)
        return self._forward_conv(params, x)

    def _forward_mlp(self, params: ParamSet, x: np.ndarray):
        arch = self.arch
        n_layers = len(arch.hidden) + 1
        cache = []
        h = x
        for i in range(n_layers):
            name = f"fc{i + 1}" if i < len(arch.hidden) else "out"
            w = params[f"{name}.w"].value
            if arch.normalize:
                rn = np.sqrt((w * w).sum(axis=1))
                w_hat = w / rn[:, None]
                z = h @ w_hat.T
                cache.append((name, h, z, rn, w_hat))
            else:
                z = h @ w.T + params[f"{name}.b"].value
                cache.append((name, h, z, None, None))
            h = _act(z, arch.activation) if i < n_layers - 1 else z
        return h, cache

    def _forward_conv(self, params: ParamSet, x: np.ndarray):
        arch = self.arch
        imgs = x.reshape(x.shape[0], *arch.input_shape)
        z1 = _conv_valid(imgs, params["conv1.w"].value, params["conv1.b"].value)
        a1 = _act(z1, arch.activation)
        z2 = _conv_valid(a1, params["conv2.w"].value, params["conv2.b"].value)
        a2 = _act(z2, arch.activation)
        pooled = _avgpool2(a2)
        flat = pooled.reshape(pooled.shape[0], -1)
        logits = flat @ params["out.w"].value.T + params["out.b"].value
        cache = (imgs, z1, a1, z2, a2, pooled.shape, flat)
        return logits, cache

    # -- loss and gradients ---------------------------------------------------

    def loss(self, params: ParamSet, x: np.ndarray, y: np.ndarray,
             label_smoothing: float = 0.0) -> float:
        return loss_ce(self.forward(params, x), y, label_smoothing)

    def loss_and_grad(
        self, params: ParamSet, x: np.ndarray, y: np.ndarray, label_smoothing: float = 0.0
    ) -> tuple[float, GradSet]:
        """Loss and exact gradients of the bare loss w.r.t. every tensor."""
        loss, grads, _ = self.train_step_stats(params, x, y, label_smoothing)
        return loss, grads

    def train_step_stats(
        self, params: ParamSet, x: np.ndarray, y: np.ndarray, label_smoothing: float = 0.0
    ) -> tuple[float, GradSet, float]:
        """Loss, gradients, and batch error rate from a single forward/backward."""
        # overflow here is handled: non-finite logits raise NumericError below
        with np.errstate(over="ignore", invalid="ignore"):
            logits, cache = self._forward_cached(params, x)
        if not np.all(np.isfinite(logits)):
            raise NumericError("non-finite activations in forward pass")
        y = np.asarray(y)
        loss, dlogits = _loss_and_dlogits(logits, y, label_smoothing)
        if self.arch.kind == "mlp":
            grads = self._backward_mlp(params, cache, dlogits)
        else:
            grads = self._backward_conv(params, cache, dlogits)
        error = float((logits.argmax(axis=1) != y).mean())
        return loss, grads, error

    def _backward_mlp(self, params: ParamSet, cache, dlogits: np.ndarray) -> GradSet:
        arch = self.arch
        grads: GradSet = {}
        dh = dlogits
        for i in reversed(range(len(cache))):
            name, h, z, rn, w_hat = cache[i]
            if i < len(cache) - 1:
                a = _act(z, arch.activation)
                dz = dh * _act_grad(z, a, arch.activation)
            else:
                dz = dh
            if arch.normalize:
                dw_hat = dz.T @ h
                # w_hat is w/|w_row|; pull the normalization back onto w
                proj = (dw_hat * w_hat).sum(axis=1, keepdims=True)
                grads[f"{name}.w"] = (dw_hat - proj * w_hat) / rn[:, None]
                dh = dz @ w_hat
            else:
                grads[f"{name}.w"] = dz.T @ h
                grads[f"{name}.b"] = dz.sum(axis=0)
                dh = dz @ params[f"{name}.w"].value
        return grads

    def _backward_conv(self, params: ParamSet, cache, dlogits: np.ndarray) -> GradSet:
        arch = self.arch
        imgs, z1, a1, z2, a2, pooled_shape, flat = cache
        grads: GradSet = {}
        grads["out.w"] = dlogits.T @ flat
        grads["out.b"] = dlogits.sum(axis=0)
        dpool = (dlogits @ params["out.w"].value).reshape(pooled_shape)
        da2 = _avgpool2_backward(dpool, a2.shape)
        dz2 = da2 * _act_grad(z2, a2, arch.activation)
        grads["conv2.w"], grads["conv2.b"], da1 = _conv_valid_backward(
            a1, params["conv2.w"].value, dz2)
        dz1 = da1 * _act_grad(z1, a1, arch.activation)
        grads["conv1.w"], grads["conv1.b"], _ = _conv_valid_backward(
            imgs, params["conv1.w"].value, dz1)
        return grads

    # -- evaluation -----------------------------------------------------------

    def error_rate(self, params: ParamSet, x: np.ndarray, y: np.ndarray,
                   batch_size: int = 1024) -> float:
        """Fraction of misclassified samples, evaluated in chunks."""
        wrong = 0
        for start in range(0, x.shape[0], batch_size):
            logits = self.forward(params, x[start:start + batch_size])
            wrong += int((logits.argmax(axis=1) != y[start:start + batch_size]).sum())
        return wrong / x.shape[0]


def _conv_valid(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 valid convolution; x is (batch, c_in, h, w), w is (c_out, c_in, 3, 3)."""
    oh, ow = x.shape[2] - 2, x.shape[3] - 2
    z = np.zeros((x.shape[0], w.shape[0], oh, ow), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            z += np.einsum("bchw,oc->bohw", x[:, :, di:di + oh, dj:dj + ow], w[:, :, di, dj],
                           optimize=True)
    return z + b[None, :, None, None]


def _conv_valid_backward(x: np.ndarray, w: np.ndarray, dz: np.ndarray):
    oh, ow = dz.shape[2], dz.shape[3]
    dw = np.zeros_like(w)
    dx = np.zeros_like(x)
    for di in range(3):
        for dj in range(3):
            patch = x[:, :, di:di + oh, dj:dj + ow]
            dw[:, :, di, dj] = np.einsum("bohw,bchw->oc", dz, patch, optimize=True)
            dx[:, :, di:di + oh, dj:dj + ow] += np.einsum("bohw,oc->bchw", dz, w[:, :, di, dj],
                                                          optimize=True)
    db = dz.sum(axis=(0, 2, 3))
    return dw, db, dx


def _avgpool2(x: np.ndarray) -> np.ndarray:
    """2x2 mean pool with stride 2; odd trailing rows/columns are dropped."""
    h2, w2 = x.shape[2] // 2, x.shape[3] // 2
    x = x[:, :, :2 * h2, :2 * w2]
    return 0.25 * (x[:, :, 0::2, 0::2] + x[:, :, 1::2, 0::2]
                   + x[:, :, 0::2, 1::2] + x[:, :, 1::2, 1::2])


def _avgpool2_backward(dz: np.ndarray, in_shape: tuple) -> np.ndarray:
    dx = np.zeros(in_shape, dtype=dz.dtype)
    h2, w2 = dz.shape[2], dz.shape[3]
    for oi in (0, 1):
        for oj in (0, 1):
            dx[:, :, oi:2 * h2:2, oj:2 * w2:2] += 0.25 * dz
    return dx
