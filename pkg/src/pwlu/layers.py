"""Minimal dense-tensor layers: linear, conv, fixed activations, and the PWLU bank.

Tensors are plain float64 numpy arrays.  Every layer caches what its own
backward pass needs; backward returns the input gradient and stores the
parameter gradients on the layer for the optimizer step.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError
from .kernel import PwluGrads, PwluParams, init_pwlu_relu
from .optim import sgd_momentum_step
from .stats import Reservoir, RunningStats, update_stats


class Layer:
    name = "layer"

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step(self, lr: float, momentum: float, weight_decay: float) -> None:
        """Apply one SGD-with-momentum update to this layer's parameters."""


class Dense(Layer):
    """Fully connected layer: y = x @ W + b."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str = "dense"):
        self.name = name
        self.weight = rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(in_dim, out_dim))
        self.bias = np.zeros(out_dim)
        self.v_weight = np.zeros_like(self.weight)
        self.v_bias = np.zeros_like(self.bias)
        self.g_weight = np.zeros_like(self.weight)
        self.g_bias = np.zeros_like(self.bias)
        self._x = None

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise ShapeMismatchError(
                f"{self.name}: expected (batch, {self.weight.shape[0]}), got {x.shape}"
            )
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad_out):
        self.g_weight = self._x.T @ grad_out
        self.g_bias = grad_out.sum(axis=0)
        return grad_out @ self.weight.T

    def step(self, lr, momentum, weight_decay):
        sgd_momentum_step(self.weight, self.g_weight, self.v_weight, lr, momentum, weight_decay)
        sgd_momentum_step(self.bias, self.g_bias, self.v_bias, lr, momentum, weight_decay)


class Conv2d(Layer):
    """2-D convolution (stride 1, symmetric zero padding) via im2col."""

    def __init__(self, in_ch: int, out_ch: int, ksize: int, rng: np.random.Generator,
                 padding: int = 0, name: str = "conv"):
        self.name = name
        self.ksize = ksize
        self.padding = padding
        fan_in = in_ch * ksize * ksize
        self.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, in_ch, ksize, ksize))
        self.bias = np.zeros(out_ch)
        self.v_weight = np.zeros_like(self.weight)
        self.v_bias = np.zeros_like(self.bias)
        self.g_weight = np.zeros_like(self.weight)
        self.g_bias = np.zeros_like(self.bias)
        self._cols = None
        self._x_shape = None

    def _im2col(self, x):
        b, c, h, w = x.shape
        k = self.ksize
        oh, ow = h - k + 1, w - k + 1
        windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        # (b, c, oh, ow, k, k) -> (b*oh*ow, c*k*k)
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * k * k)
        return cols, oh, ow

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.weight.shape[1]:
            raise ShapeMismatchError(
                f"{self.name}: expected (batch, {self.weight.shape[1]}, H, W), got {x.shape}"
            )
        if self.padding:
            p = self.padding
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        self._x_shape = x.shape
        cols, oh, ow = self._im2col(x)
        self._cols = cols
        w_flat = self.weight.reshape(self.weight.shape[0], -1)
        out = cols @ w_flat.T + self.bias
        return out.reshape(x.shape[0], oh, ow, -1).transpose(0, 3, 1, 2)

    def backward(self, grad_out):
        b, oc, oh, ow = grad_out.shape
        g_flat = grad_out.transpose(0, 2, 3, 1).reshape(-1, oc)
        w_flat = self.weight.reshape(oc, -1)
        self.g_weight = (g_flat.T @ self._cols).reshape(self.weight.shape)
        self.g_bias = g_flat.sum(axis=0)

        g_cols = g_flat @ w_flat
        k = self.ksize
        _, c, h, w = self._x_shape
        gx = np.zeros(self._x_shape)
        g_cols = g_cols.reshape(b, oh, ow, c, k, k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + oh, j:j + ow] += g_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if self.padding:
            p = self.padding
            gx = gx[:, :, p:-p, p:-p]
        return gx

    def step(self, lr, momentum, weight_decay):
        sgd_momentum_step(self.weight, self.g_weight, self.v_weight, lr, momentum, weight_decay)
        sgd_momentum_step(self.bias, self.g_bias, self.v_bias, lr, momentum, weight_decay)


class Relu(Layer):
    def __init__(self, name: str = "relu"):
        self.name = name
        self._mask = None

    def forward(self, x, training=False):
        self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, grad_out):
        return grad_out * self._mask


class Swish(Layer):
    """x * sigmoid(x), the fixed-shape baseline."""

    def __init__(self, name: str = "swish"):
        self.name = name
        self._x = None
        self._sig = None

    def forward(self, x, training=False):
        self._x = x
        self._sig = 1.0 / (1.0 + np.exp(-x))
        return x * self._sig

    def backward(self, grad_out):
        s = self._sig
        return grad_out * (s + self._x * s * (1.0 - s))


class PwluActivation(Layer):
    """A bank of piecewise linear units with running input statistics.

    granularity "channel" keeps one unit per channel (axis 1 of the input);
    "layer" shares a single unit across the whole tensor.  While `frozen`,
    the optimizer step leaves the unit parameters untouched (gradients still
    flow to earlier layers).  While `collecting`, each training forward
    updates the running mean/std and the reservoir sample of every unit.
    """

    def __init__(self, n_channels: int, n_intervals: int = 16, granularity: str = "channel",
                 half_width: float = 3.0, frozen: bool = False, collecting: bool = False,
                 lr_scale: float = 1.0, seed: int = 0, name: str = "pwlu"):
        if granularity not in ("channel", "layer"):
            raise ValueError(f"granularity must be 'channel' or 'layer', got {granularity!r}")
        self.name = name
        self.granularity = granularity
        self.n_channels = n_channels
        self.n_units = n_channels if granularity == "channel" else 1
        self.units = [init_pwlu_relu(n_intervals, half_width) for _ in range(self.n_units)]
        self.stats = [RunningStats() for _ in range(self.n_units)]
        self.reservoirs = [
            Reservoir(seed=seed * 100003 + u) for u in range(self.n_units)
        ]
        self.frozen = frozen
        self.collecting = collecting
        # Unit parameters share the network learning rate by default; the
        # multiplier is exposed because the right scale is data-dependent.
        self.lr_scale = lr_scale
        self._velocity = [
            {"b_l": 0.0, "b_r": 0.0, "y": np.zeros(n_intervals + 1), "k_l": 0.0, "k_r": 0.0}
            for _ in range(self.n_units)
        ]
        self._grads = [None] * self.n_units
        self._x = None

    def _unit_slice(self, x, u):
        if self.granularity == "layer":
            return x
        return x[:, u]

    def _to_columns(self, x):
        """Flatten to (elements, units): channel axis last, all else merged."""
        if self.granularity == "layer":
            return x.reshape(-1, 1)
        return np.moveaxis(x, 1, -1).reshape(-1, self.n_channels)

    def _from_columns(self, cols, like):
        if self.granularity == "layer":
            return cols.reshape(like.shape)
        moved_shape = like.shape[:1] + like.shape[2:] + (self.n_channels,)
        return np.moveaxis(cols.reshape(moved_shape), -1, 1)

    def _stacked(self):
        b_l = np.array([p.left_boundary for p in self.units])
        b_r = np.array([p.right_boundary for p in self.units])
        y = np.stack([p.y_points for p in self.units])
        k_l = np.array([p.left_slope for p in self.units])
        k_r = np.array([p.right_slope for p in self.units])
        return b_l, b_r, y, k_l, k_r

    def forward(self, x, training=False):
        if self.granularity == "channel" and (x.ndim < 2 or x.shape[1] != self.n_channels):
            raise ShapeMismatchError(
                f"{self.name}: expected channel axis of size {self.n_channels}, got {x.shape}"
            )
        self._x = x
        if training and self.collecting:
            for u in range(self.n_units):
                xs = self._unit_slice(x, u)
                self.stats[u] = update_stats(self.stats[u], xs)
                self.reservoirs[u].extend(xs)

        xc = self._to_columns(x)
        b_l, b_r, y, k_l, k_r = self._stacked()
        n = self.units[0].n_intervals
        d = (b_r - b_l) / n
        raw = (xc - b_l) / d
        # Non-finite inputs (diverged upstream weights) must not crash the
        # index gather; the output stays non-finite and the trainer's loss
        # check reports the offending layer.
        raw = np.where(np.isfinite(raw), raw, 0.0)
        idx = np.clip(np.floor(raw), 0, n - 1).astype(np.int64)
        cols = np.arange(self.n_units)
        y_lo = y[cols, idx]
        k_mid = (y[cols, idx + 1] - y_lo) / d
        b_idx = b_l + idx * d
        left = xc < b_l
        right = xc >= b_r
        out = np.where(
            left, (xc - b_l) * k_l + y[:, 0],
            np.where(right, (xc - b_r) * k_r + y[:, n], (xc - b_idx) * k_mid + y_lo),
        )
        return self._from_columns(out, x)

    def backward(self, grad_out):
        xc = self._to_columns(self._x)
        up = self._to_columns(grad_out)
        if xc.shape != up.shape:
            raise ShapeMismatchError(
                f"{self.name}: input shape {self._x.shape} != upstream {grad_out.shape}"
            )
        b_l, b_r, y, k_l, k_r = self._stacked()
        n = self.units[0].n_intervals
        units = self.n_units
        d = (b_r - b_l) / n
        width = b_r - b_l
        idx = np.clip(np.floor((xc - b_l) / d), 0, n - 1).astype(np.int64)
        cols = np.arange(units)
        k_mid = (y[cols, idx + 1] - y[cols, idx]) / d
        b_idx = b_l + idx * d
        left = xc < b_l
        right = xc >= b_r
        mid = ~(left | right)

        grad_in = up * np.where(left, k_l, np.where(right, k_r, k_mid))

        u_l = np.where(left, up, 0.0)
        u_r = np.where(right, up, 0.0)
        u_m = np.where(mid, up, 0.0)
        g_bl = (-k_l) * u_l.sum(axis=0) + (u_m * k_mid * (xc - b_r) / width).sum(axis=0)
        g_br = (-k_r) * u_r.sum(axis=0) + (u_m * k_mid * (b_l - xc) / width).sum(axis=0)
        g_kl = (u_l * (xc - b_l)).sum(axis=0)
        g_kr = (u_r * (xc - b_r)).sum(axis=0)

        g_y = np.zeros((units, n + 1))
        flat_lo = cols[None, :] * (n + 1) + idx
        # np.add.at keeps a fixed accumulation order, so runs are reproducible.
        np.add.at(g_y.ravel(), flat_lo.ravel(), (u_m * (b_idx + d - xc) / d).ravel())
        np.add.at(g_y.ravel(), (flat_lo + 1).ravel(), (u_m * (xc - b_idx) / d).ravel())
        g_y[:, 0] += u_l.sum(axis=0)
        g_y[:, n] += u_r.sum(axis=0)

        for u in range(units):
            self._grads[u] = PwluGrads(
                left_boundary=float(g_bl[u]),
                right_boundary=float(g_br[u]),
                y_points=g_y[u],
                left_slope=float(g_kl[u]),
                right_slope=float(g_kr[u]),
                input_grad=grad_in[:, u],
            )
        return self._from_columns(grad_in, grad_out)

    def step(self, lr, momentum, weight_decay):
        # Unit parameters never receive weight decay; decaying the heights
        # would bias every learned shape toward the zero function.
        if self.frozen:
            return
        lr = lr * self.lr_scale
        for u, params in enumerate(self.units):
            g = self._grads[u]
            if g is None:
                continue
            v = self._velocity[u]
            v["b_l"] = momentum * v["b_l"] + g.left_boundary
            v["b_r"] = momentum * v["b_r"] + g.right_boundary
            v["k_l"] = momentum * v["k_l"] + g.left_slope
            v["k_r"] = momentum * v["k_r"] + g.right_slope
            v["y"] = momentum * v["y"] + g.y_points
            b_l = params.left_boundary - lr * v["b_l"]
            b_r = params.right_boundary - lr * v["b_r"]
            # Keep the interval from collapsing under a large boundary step;
            # the floor is relative so it survives large magnitudes.
            min_width = max(1e-6, 1e-9 * (abs(b_l) + abs(b_r)))
            if b_r - b_l < min_width:
                center = 0.5 * (b_l + b_r)
                b_l, b_r = center - 0.5 * min_width, center + 0.5 * min_width
            self.units[u] = PwluParams(
                n_intervals=params.n_intervals,
                left_boundary=b_l,
                right_boundary=b_r,
                y_points=params.y_points - lr * v["y"],
                left_slope=params.left_slope - lr * v["k_l"],
                right_slope=params.right_slope - lr * v["k_r"],
            )


def softmax_xent_forward(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns (loss, probs); probs are cached by the caller for backward.
    """
    if logits.shape[0] != labels.shape[0]:
        raise ShapeMismatchError(f"{logits.shape[0]} logits rows vs {labels.shape[0]} labels")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = -np.log(probs[np.arange(n), labels] + 1e-300).mean()
    return float(loss), probs


def softmax_xent_backward(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    n = probs.shape[0]
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return grad / n


class Model:
    """A plain sequential stack with a softmax cross-entropy head."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def loss_and_backward(self, x, labels):
        logits = self.forward(x, training=True)
        loss, probs = softmax_xent_forward(logits, labels)
        grad = softmax_xent_backward(probs, labels)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return loss, logits

    def step(self, lr, momentum, weight_decay):
        for layer in self.layers:
            layer.step(lr, momentum, weight_decay)

    def predict(self, x):
        return self.forward(x, training=False).argmax(axis=1)

    def accuracy(self, x, labels):
        return float((self.predict(x) == labels).mean())

    def pwlu_layers(self) -> list[PwluActivation]:
        return [l for l in self.layers if isinstance(l, PwluActivation)]

    def first_nonfinite_layer(self, x) -> str | None:
        """Name of the first layer whose forward output is non-finite, if any."""
        for layer in self.layers:
            x = layer.forward(x, training=False)
            if not np.all(np.isfinite(x)):
                return layer.name
        return None


def build_mlp(widths: list[int], activation: str, rng: np.random.Generator,
              n_intervals: int = 16, granularity: str = "channel", half_width: float = 3.0,
              pwlu_frozen: bool = False, pwlu_collecting: bool = False,
              pwlu_lr_scale: float = 1.0, seed: int = 0) -> Model:
    """MLP with the chosen activation after every hidden linear layer."""
    layers: list[Layer] = []
    for i in range(len(widths) - 1):
        layers.append(Dense(widths[i], widths[i + 1], rng, name=f"dense{i}"))
        if i < len(widths) - 2:
            if activation == "relu":
                layers.append(Relu(name=f"relu{i}"))
            elif activation == "swish":
                layers.append(Swish(name=f"swish{i}"))
            elif activation == "pwlu":
                layers.append(
                    PwluActivation(
                        n_channels=widths[i + 1],
                        n_intervals=n_intervals,
                        granularity=granularity,
                        half_width=half_width,
                        frozen=pwlu_frozen,
                        collecting=pwlu_collecting,
                        lr_scale=pwlu_lr_scale,
                        seed=seed + i,
                        name=f"pwlu{i}",
                    )
                )
            else:
                raise ValueError(f"unknown activation {activation!r}")
    return Model(layers)
