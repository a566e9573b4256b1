"""Dense float64 layers with exact reverse-mode gradients.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Images are
``[C, H, W]``; there is no batch axis anywhere in this module. A network is
any object exposing ``layers`` (a sequence of layer specs) and ``params`` (one
list of arrays per layer); :class:`pmt.models.Model` is the usual one.

Conventions: convolution is cross-correlation, the ReLU derivative at 0 is 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from . import kernels

Tensor = np.ndarray

L2_EPS = 1e-12


class ShapeError(ValueError):
    """Raised when a tensor does not have the shape a layer expects."""

    def __init__(self, message, index=None, expected=None, actual=None):
        self.index = index
        self.expected = expected
        self.actual = actual
        where = f"layer {index}: " if index is not None else ""
        detail = ""
        if expected is not None or actual is not None:
            detail = f" (expected {expected}, got {actual})"
        super().__init__(f"{where}{message}{detail}")


# --------------------------------------------------------------------------
# layer vocabulary


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    padding: int = 0
    bias: bool = True

    def __post_init__(self):
        if min(self.in_ch, self.out_ch, self.kernel, self.stride) < 1:
            raise ValueError(f"Conv2d sizes must be positive: {self}")
        if not 0 <= self.padding < self.kernel:
            raise ValueError(f"Conv2d padding must be in [0, kernel): {self}")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass(frozen=True)
class AvgPool2d:
    kernel: int

    def __post_init__(self):
        if self.kernel < 1:
            raise ValueError(f"AvgPool2d kernel must be positive: {self}")


@dataclass(frozen=True)
class UpsampleNearest2x:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Linear:
    in_dim: int
    out_dim: int
    bias: bool = True

    def __post_init__(self):
        if min(self.in_dim, self.out_dim) < 1:
            raise ValueError(f"Linear sizes must be positive: {self}")


@dataclass(frozen=True)
class L2Normalize:
    pass


LayerSpec = Conv2d | ReLU | Sigmoid | AvgPool2d | UpsampleNearest2x | Flatten | Linear | L2Normalize

LAYER_TYPES = {
    cls.__name__: cls
    for cls in (Conv2d, ReLU, Sigmoid, AvgPool2d, UpsampleNearest2x, Flatten, Linear, L2Normalize)
}


def param_shapes(layer) -> list[tuple[int, ...]]:
    """Shapes of the parameter tensors a layer owns (weight first, then bias)."""
    if isinstance(layer, Conv2d):
        shapes = [(layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)]
        return shapes + [(layer.out_ch,)] if layer.bias else shapes
    if isinstance(layer, Linear):
        shapes = [(layer.out_dim, layer.in_dim)]
        return shapes + [(layer.out_dim,)] if layer.bias else shapes
    return []


def param_names(layer) -> list[str]:
    return ["weight", "bias"][: len(param_shapes(layer))]


def output_shape(layer, in_shape: Sequence[int], index=None) -> tuple[int, ...]:
    """Shape arithmetic for one layer; raises ShapeError on a mismatch."""
    in_shape = tuple(in_shape)
    if isinstance(layer, Conv2d):
        if len(in_shape) != 3 or in_shape[0] != layer.in_ch:
            raise ShapeError("Conv2d input", index, ("C=%d" % layer.in_ch, "H", "W"), in_shape)
        c, h, w = in_shape
        ho = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
        wo = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError("Conv2d input smaller than kernel", index, f">= {layer.kernel}", in_shape)
        return (layer.out_ch, ho, wo)
    if isinstance(layer, AvgPool2d):
        if len(in_shape) != 3 or in_shape[1] < layer.kernel or in_shape[2] < layer.kernel:
            raise ShapeError("AvgPool2d input", index, f"[C, >={layer.kernel}, >={layer.kernel}]", in_shape)
        return (in_shape[0], in_shape[1] // layer.kernel, in_shape[2] // layer.kernel)
    if isinstance(layer, UpsampleNearest2x):
        if len(in_shape) != 3:
            raise ShapeError("UpsampleNearest2x input", index, "[C, H, W]", in_shape)
        return (in_shape[0], 2 * in_shape[1], 2 * in_shape[2])
    if isinstance(layer, Flatten):
        return (int(np.prod(in_shape)),)
    if isinstance(layer, Linear):
        if in_shape != (layer.in_dim,):
            raise ShapeError("Linear input", index, (layer.in_dim,), in_shape)
        return (layer.out_dim,)
    if isinstance(layer, (ReLU, Sigmoid, L2Normalize)):
        return in_shape
    raise TypeError(f"unknown layer type {type(layer).__name__}")


def chain_shapes(layers, in_shape) -> list[tuple[int, ...]]:
    """Activation shapes for a layer stack, index 0 being the input."""
    shapes = [tuple(in_shape)]
    for i, layer in enumerate(layers):
        shapes.append(output_shape(layer, shapes[-1], i))
    return shapes


def _check_params(layer, params, index):
    expected = param_shapes(layer)
    if len(params) != len(expected):
        raise ShapeError("parameter count", index, len(expected), len(params))
    for p, s in zip(params, expected):
        if p.shape != s:
            raise ShapeError("parameter shape", index, s, p.shape)


def layer_forward(layer, params: Sequence[Tensor], x: Tensor, index=None) -> Tensor:
    """Apply one layer to a single (unbatched) input."""
    output_shape(layer, x.shape, index)
    _check_params(layer, params, index)
    if isinstance(layer, Conv2d):
        w = params[0]
        cols = kernels.im2col(np.ascontiguousarray(x), layer.kernel, layer.stride, layer.padding)
        _, ho, wo = output_shape(layer, x.shape, index)
        y = (w.reshape(layer.out_ch, -1) @ cols).reshape(layer.out_ch, ho, wo)
        if layer.bias:
            y += params[1][:, None, None]
        return y
    if isinstance(layer, ReLU):
        return np.maximum(x, 0.0)
    if isinstance(layer, Sigmoid):
        return expit(x)
    if isinstance(layer, AvgPool2d):
        k = layer.kernel
        c, h, w = x.shape
        ho, wo = h // k, w // k
        return x[:, : ho * k, : wo * k].reshape(c, ho, k, wo, k).mean(axis=(2, 4))
    if isinstance(layer, UpsampleNearest2x):
        return x.repeat(2, axis=1).repeat(2, axis=2)
    if isinstance(layer, Flatten):
        return x.reshape(-1).copy()
    if isinstance(layer, Linear):
        y = params[0] @ x
        if layer.bias:
            y = y + params[1]
        return y
    if isinstance(layer, L2Normalize):
        return x / max(float(np.linalg.norm(x)), L2_EPS)
    raise TypeError(f"unknown layer type {type(layer).__name__}")


def layer_backward(layer, params, x, y, grad_out, index=None):
    """Vector-Jacobian product of one layer.

    ``x`` and ``y`` are the layer's input and output from the forward pass.
    Returns ``(grad_input, [grad per parameter])``.
    """
    if grad_out.shape != y.shape:
        raise ShapeError("output gradient", index, y.shape, grad_out.shape)
    if isinstance(layer, Conv2d):
        w = params[0]
        wm = w.reshape(layer.out_ch, -1)
        g = grad_out.reshape(layer.out_ch, -1)
        cols = kernels.im2col(np.ascontiguousarray(x), layer.kernel, layer.stride, layer.padding)
        gw = (g @ cols.T).reshape(w.shape)
        gcols = np.ascontiguousarray(wm.T @ g)
        gx = kernels.col2im(gcols, x.shape[0], x.shape[1], x.shape[2], layer.kernel, layer.stride, layer.padding)
        grads = [gw, grad_out.sum(axis=(1, 2))] if layer.bias else [gw]
        return gx, grads
    if isinstance(layer, ReLU):
        return grad_out * (x > 0.0), []
    if isinstance(layer, Sigmoid):
        return grad_out * y * (1.0 - y), []
    if isinstance(layer, AvgPool2d):
        k = layer.kernel
        c, ho, wo = y.shape
        gx = np.zeros_like(x)
        gx[:, : ho * k, : wo * k] = (grad_out / (k * k)).repeat(k, axis=1).repeat(k, axis=2)
        return gx, []
    if isinstance(layer, UpsampleNearest2x):
        c, h, w = x.shape
        return grad_out.reshape(c, h, 2, w, 2).sum(axis=(2, 4)), []
    if isinstance(layer, Flatten):
        return grad_out.reshape(x.shape).copy(), []
    if isinstance(layer, Linear):
        gx = params[0].T @ grad_out
        gw = np.outer(grad_out, x)
        return gx, ([gw, grad_out.copy()] if layer.bias else [gw])
    if isinstance(layer, L2Normalize):
        n = float(np.linalg.norm(x))
        if n <= L2_EPS:
            return grad_out / L2_EPS, []
        return (grad_out - y * float(y @ grad_out)) / n, []
    raise TypeError(f"unknown layer type {type(layer).__name__}")


# --------------------------------------------------------------------------
# whole-network passes


def forward_collect(layers, params, x: Tensor) -> list[Tensor]:
    """Run a layer stack, keeping every intermediate activation."""
    acts = [x]
    for i, (layer, p) in enumerate(zip(layers, params)):
        acts.append(layer_forward(layer, p, acts[-1], i))
    if not np.isfinite(acts[-1]).all():
        raise FloatingPointError("non-finite network output")
    return acts


def backward(layers, params, acts, grad_out, need_param_grads=True):
    """Reverse pass over activations from :func:`forward_collect`.

    Returns ``(grad_input, param_grads)``; ``param_grads`` mirrors ``params``
    (empty lists when ``need_param_grads`` is false).
    """
    if len(acts) != len(layers) + 1:
        raise ShapeError("activation count does not match model", None, len(layers) + 1, len(acts))
    if grad_out.shape != acts[-1].shape:
        raise ShapeError("output gradient", len(layers) - 1, acts[-1].shape, grad_out.shape)
    g = grad_out
    param_grads: list[list[Tensor]] = [[] for _ in layers]
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        if not need_param_grads and isinstance(layer, Conv2d):
            # skip the weight product; only the input gradient is wanted
            wm = params[i][0].reshape(layer.out_ch, -1)
            x = acts[i]
            gcols = np.ascontiguousarray(wm.T @ g.reshape(layer.out_ch, -1))
            g = kernels.col2im(gcols, x.shape[0], x.shape[1], x.shape[2], layer.kernel, layer.stride, layer.padding)
            continue
        g, pg = layer_backward(layer, params[i], acts[i], acts[i + 1], g, i)
        if need_param_grads:
            param_grads[i] = pg
    return g, param_grads


def model_forward_collect(model, x: Tensor) -> list[Tensor]:
    return forward_collect(model.layers, model.params, x)


def model_forward(model, x: Tensor) -> Tensor:
    return model_forward_collect(model, x)[-1]


def model_backward(model, acts, output_grad, need_param_grads=True):
    return backward(model.layers, model.params, acts, output_grad, need_param_grads)


def softmax(logits: Tensor) -> Tensor:
    e = np.exp(logits - logits.max())
    return e / e.sum()


def softmax_cross_entropy(logits: Tensor, label: int) -> tuple[float, Tensor]:
    """Negative log-likelihood of ``label`` and its gradient w.r.t. the logits."""
    if logits.ndim != 1:
        raise ShapeError("logits must be rank-1", None, "(k,)", logits.shape)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    loss = float(log_z - shifted[label])
    grad = np.exp(shifted - log_z)
    grad[label] -= 1.0
    return loss, grad


# --------------------------------------------------------------------------
# scalar objectives on a network output, each returning (value, d value / d output)

Loss = Callable[[Tensor], tuple[float, Tensor]]


def feature_distance_loss(target: Tensor) -> Loss:
    """Squared euclidean distance to a fixed feature tensor."""

    def loss(out):
        d = out - target
        return float(np.sum(d * d)), 2.0 * d

    return loss


def l2_distance_loss(target: Tensor) -> Loss:
    """Plain (unsquared) euclidean distance, with a zero subgradient at the target."""

    def loss(out):
        d = out - target
        n = float(np.linalg.norm(d))
        return n, (d / n if n > 0.0 else np.zeros_like(d))

    return loss


def cross_entropy_loss(label: int) -> Loss:
    return lambda out: softmax_cross_entropy(out, label)


def quadratic_loss(out: Tensor) -> tuple[float, Tensor]:
    return 0.5 * float(np.sum(out * out)), out.copy()


def _relerr(a: float, n: float) -> float:
    return abs(a - n) / max(1e-12, abs(a) + abs(n))


def grad_check(model, x: Tensor, loss: Loss, h: float = 1e-5, max_probes: int | None = None, seed: int = 0) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Probes every input coordinate and every parameter coordinate, or a random
    subset of ``max_probes`` of each when given.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    layers, params = model.layers, model.params
    acts = forward_collect(layers, params, x)
    _, g_out = loss(acts[-1])
    gx, gparams = backward(layers, params, acts, g_out)
    rng = np.random.default_rng(seed)

    def objective(inp, prm):
        return loss(forward_collect(layers, prm, inp)[-1])[0]

    def pick(n):
        if max_probes is None or n <= max_probes:
            return range(n)
        return sorted(rng.choice(n, size=max_probes, replace=False))

    worst = 0.0
    xf = x.reshape(-1)
    for idx in pick(xf.size):
        xp, xm = xf.copy(), xf.copy()
        xp[idx] += h
        xm[idx] -= h
        num = (objective(xp.reshape(x.shape), params) - objective(xm.reshape(x.shape), params)) / (2 * h)
        worst = max(worst, _relerr(float(gx.reshape(-1)[idx]), num))
    for li, plist in enumerate(params):
        for pi, p in enumerate(plist):
            for idx in pick(p.size):
                trial = [list(q) for q in params]
                pp = p.reshape(-1).copy()
                pp[idx] += h
                trial[li][pi] = pp.reshape(p.shape)
                fp = objective(x, trial)
                pp[idx] -= 2 * h
                trial[li][pi] = pp.reshape(p.shape)
                fm = objective(x, trial)
                num = (fp - fm) / (2 * h)
                worst = max(worst, _relerr(float(gparams[li][pi].reshape(-1)[idx]), num))
    return worst


def relu_margin(model, x: Tensor) -> float:
    """Smallest |pre-activation| feeding any ReLU (inf if there are none)."""
    acts = model_forward_collect(model, x)
    margins = [np.abs(acts[i]).min() for i, layer in enumerate(model.layers) if isinstance(layer, ReLU)]
    return float(min(margins)) if margins else float("inf")


@dataclass
class Stack:
    """Bare layers + parameters, for ad-hoc networks outside :mod:`pmt.models`."""

    layers: list
    params: list
