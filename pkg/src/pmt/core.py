"""The obfuscation optimizer: single-model and multi-model PMT.

An obfuscated image starts from an unrelated initialization and is pushed by
normalized, kernel-smoothed gradient steps until its shallow-model features
line up with those of the original image.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from . import datagen, nn, rng
from .datagen import NoAugment, RandomNoise

# --------------------------------------------------------------------------
# smoothing kernels W


@dataclass(frozen=True)
class NoneKernel:
    pass


@dataclass(frozen=True)
class LinearKernel:
    k: int = 1


@dataclass(frozen=True)
class GaussianKernel:
    k: int = 1


KernelSpec = NoneKernel | LinearKernel | GaussianKernel


def make_kernel(spec) -> np.ndarray:
    """Normalized (2k+1)x(2k+1) smoothing matrix, indexed i, j in [-k, k]."""
    if isinstance(spec, NoneKernel) or spec is None:
        return np.ones((1, 1))
    if spec.k < 1:
        raise ValueError(f"kernel half-width must be >= 1, got {spec.k}")
    k = spec.k
    i = np.arange(-k, k + 1, dtype=np.float64)
    if isinstance(spec, LinearKernel):
        line = 1.0 - np.abs(i) / (k + 1)
        raw = np.outer(line, line)
    elif isinstance(spec, GaussianKernel):
        sigma = k / np.sqrt(3.0)
        raw = np.exp(-(i[:, None] ** 2 + i[None, :] ** 2) / (2.0 * sigma**2)) / (2.0 * np.pi * sigma**2)
    else:
        raise TypeError(f"unknown kernel {spec!r}")
    return raw / raw.sum()


def parse_kernel(name: str, k: int = 1):
    name = name.lower()
    if name == "none":
        return NoneKernel()
    if name == "linear":
        return LinearKernel(k)
    if name == "gaussian":
        return GaussianKernel(k)
    raise ValueError(f"unknown kernel {name!r}")


def smooth(grad: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-channel 'same' convolution with zero fill outside the image."""
    if w.shape == (1, 1):
        return grad * w[0, 0]
    return np.stack([ndimage.convolve(ch, w, mode="constant", cval=0.0) for ch in grad])


# --------------------------------------------------------------------------
# initialization


@dataclass(frozen=True)
class GaussianNoiseInit:
    mean: float = 0.5
    std: float = 0.25


@dataclass(frozen=True)
class RandomPermuteInit:
    pass


@dataclass(frozen=True)
class GaussianBlurInit:
    sigma: float = 4.0
    size: int = 13


@dataclass(frozen=True)
class CopyOriginalInit:
    pass


InitMode = GaussianNoiseInit | RandomPermuteInit | GaussianBlurInit | CopyOriginalInit


def parse_init(name: str):
    table = {
        "noise": GaussianNoiseInit(),
        "gaussian-noise": GaussianNoiseInit(),
        "permute": RandomPermuteInit(),
        "random-permute": RandomPermuteInit(),
        "blur": GaussianBlurInit(),
        "gaussian-blur": GaussianBlurInit(),
        "copy": CopyOriginalInit(),
    }
    try:
        return table[name.lower().replace("_", "-")]
    except KeyError:
        raise ValueError(f"unknown init mode {name!r}") from None


def blur_kernel(sigma: float, size: int) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    line = np.exp(-(r**2) / (2.0 * sigma**2))
    k = np.outer(line, line)
    return k / k.sum()


def init_obfuscation(x: np.ndarray, mode, seed: int) -> np.ndarray:
    if isinstance(mode, CopyOriginalInit):
        return x.copy()
    if isinstance(mode, GaussianNoiseInit):
        g = rng.stream(rng.PMT_INIT, seed)
        return np.clip(g.normal(mode.mean, mode.std, size=x.shape), 0.0, 1.0)
    if isinstance(mode, RandomPermuteInit):
        g = rng.stream(rng.PMT_INIT, seed)
        flat = x.reshape(-1)
        return flat[g.permutation(flat.size)].reshape(x.shape)
    if isinstance(mode, GaussianBlurInit):
        w = blur_kernel(mode.sigma, mode.size)
        return np.stack([ndimage.convolve(ch, w, mode="nearest") for ch in x])
    raise TypeError(f"unknown init mode {mode!r}")


# --------------------------------------------------------------------------
# layer aggregation

POOL_SIDE = 4


def _pool_matrix(n: int, out: int) -> np.ndarray:
    """Row i averages input cells [floor(i n / out), ceil((i + 1) n / out))."""
    p = np.zeros((out, n))
    for i in range(out):
        lo = (i * n) // out
        hi = -((-(i + 1) * n) // out)
        p[i, lo:hi] = 1.0 / (hi - lo)
    return p


def adaptive_pool(a: np.ndarray, side: int = POOL_SIDE) -> np.ndarray:
    ph, pw = _pool_matrix(a.shape[1], side), _pool_matrix(a.shape[2], side)
    return np.einsum("ih,chw,jw->cij", ph, a, pw)


def adaptive_pool_adjoint(g: np.ndarray, shape) -> np.ndarray:
    ph, pw = _pool_matrix(shape[1], g.shape[1]), _pool_matrix(shape[2], g.shape[2])
    return np.einsum("ih,cij,jw->chw", ph, g, pw)


def _check_layers(shallow, layers):
    n = len(shallow.layers)
    for l in layers:
        if not 0 <= l < n:
            raise ValueError(f"aggregation layer {l} outside shallow model (0..{n - 1})")


def aggregate_features(shallow, image: np.ndarray, layers: Sequence[int]) -> np.ndarray:
    """Concatenated 4x4 average-pooled outputs of the given shallow layers.

    An empty ``layers`` means the raw (unpooled) final shallow output.
    Layer ``l`` refers to the output of layer ``l`` (activation ``l + 1``).
    """
    return _features(shallow, image, tuple(layers))[0]


def _features(shallow, image, layers):
    if not layers:
        acts = nn.model_forward_collect(shallow, image)
        return acts[-1].reshape(-1), acts
    _check_layers(shallow, layers)
    depth = max(layers) + 1
    acts = nn.forward_collect(shallow.layers[:depth], shallow.params[:depth], image)
    for l in layers:
        if acts[l + 1].ndim != 3:
            raise ValueError(f"aggregation layer {l} does not produce a spatial map")
    return np.concatenate([adaptive_pool(acts[l + 1]).reshape(-1) for l in sorted(layers)]), acts


def _features_vjp(shallow, acts, layers, g):
    """Gradient w.r.t. the image of <g, features>."""
    if not layers:
        gx, _ = nn.backward(shallow.layers, shallow.params, acts, g.reshape(acts[-1].shape), need_param_grads=False)
        return gx
    layers = sorted(layers)
    depth = max(layers) + 1
    injected = {}
    off = 0
    for l in layers:
        c = acts[l + 1].shape[0]
        n = c * POOL_SIDE * POOL_SIDE
        injected[l] = adaptive_pool_adjoint(g[off : off + n].reshape(c, POOL_SIDE, POOL_SIDE), acts[l + 1].shape)
        off += n
    grad = np.zeros_like(acts[depth])
    for i in range(depth - 1, -1, -1):
        if i in injected:
            grad = grad + injected[i]
        sub = nn.Stack([shallow.layers[i]], [shallow.params[i]])
        grad, _ = nn.backward(sub.layers, sub.params, [acts[i], acts[i + 1]], grad, need_param_grads=False)
    return grad


# --------------------------------------------------------------------------
# the optimizer


@dataclass(frozen=True)
class PmtConfig:
    init: object = GaussianNoiseInit()
    iterations: int = 300
    step: float = 0.05
    augment: object = RandomNoise(0.1)
    aggregate_layers: tuple[int, ...] = (2, 5)
    kernel: object = GaussianKernel(1)
    clamp: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "aggregate_layers", tuple(self.aggregate_layers))
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.step > 0:
            raise ValueError("step must be > 0")


class Step(NamedTuple):
    delta: np.ndarray
    loss: float
    converged: bool


def objective_grad(shallow, x, xt, layers, draw=None):
    """J = sum (z - z~)^2 over aggregated features of T(x), T(x~), and dJ/dx~."""
    draw = draw or datagen.AugmentDraw()
    z, _ = _features(shallow, draw.apply(x), layers)
    txt = draw.apply(xt)
    zt, acts = _features(shallow, txt, layers)
    d = zt - z
    loss = float(np.sum(d * d))
    g = _features_vjp(shallow, acts, layers, 2.0 * d)
    return loss, draw.vjp(xt, g)


def _draw(config, shape, iteration):
    if isinstance(config.augment, NoAugment):
        return datagen.AugmentDraw()
    return datagen.draw_augmentation(config.augment, shape, (rng.PMT_STEP, config.seed, iteration))


def pmt_step(shallow, x, xt, config: PmtConfig, iteration: int, w=None) -> Step:
    """One perturbation: the L1-normalized gradient of J, smoothed by the kernel."""
    draw = _draw(config, x.shape, iteration)
    loss, grad = objective_grad(shallow, x, xt, config.aggregate_layers, draw)
    l1 = float(np.abs(grad).sum())
    if l1 < 1e-15:
        return Step(np.zeros_like(xt), loss, True)
    w = make_kernel(config.kernel) if w is None else w
    return Step(smooth(grad / l1, w), loss, False)


@dataclass
class Obfuscation:
    image: np.ndarray
    features: list  # shallow(image), one entry per shallow model
    losses: list = field(default_factory=list)  # summed J before each step

    @property
    def feature(self):
        return self.features[0]


def _apply_step(xt, delta, config):
    # alpha is the mean per-pixel step: a unit-L1 delta is rescaled by the pixel count
    xt = xt - config.step * delta.size * delta
    return np.clip(xt, 0.0, 1.0) if config.clamp else xt


def pmt_protect(x: np.ndarray, shallow, config: PmtConfig = PmtConfig()) -> Obfuscation:
    """Optimize an obfuscated image whose shallow features match those of ``x``."""
    return pmt_protect_multi(x, [shallow], config)


def pmt_protect_multi(x: np.ndarray, shallows: Sequence, config: PmtConfig = PmtConfig()) -> Obfuscation:
    """One obfuscated image aligned to several shallow models at once.

    Each model's gradient is L1-normalized and smoothed on its own; the sum is
    renormalized to unit L1 (a single model's step is left as is).
    """
    shallows = list(shallows)
    if not shallows:
        raise ValueError("need at least one shallow model")
    w = make_kernel(config.kernel)
    xt = init_obfuscation(x, config.init, config.seed)
    losses = []
    for i in range(config.iterations):
        steps = [pmt_step(s, x, xt, config, i, w) for s in shallows]
        losses.append(sum(st.loss for st in steps))
        if len(steps) == 1:
            delta = steps[0].delta
        else:
            delta = sum(st.delta for st in steps)
            l1 = float(np.abs(delta).sum())
            delta = delta / l1 if l1 >= 1e-15 else delta
        xt = _apply_step(xt, delta, config)
    return Obfuscation(xt, [nn.model_forward(s, xt) for s in shallows], losses)
