"""Adversary suite: feature inversion (optimization and decoder) and attribute estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import models, nn, rng
from .nn import Conv2d, ReLU, Sigmoid, UpsampleNearest2x


def total_variation(image: np.ndarray, beta: float = 2.0) -> float:
    return tv_value_grad(image, beta)[0]


def tv_value_grad(image: np.ndarray, beta: float = 2.0) -> tuple[float, np.ndarray]:
    """Total variation and its gradient.

    Each pixel contributes (d_left^2 + d_down^2)^(beta/2), where d_left is
    x[i, j-1] - x[i, j] and d_down is x[i+1, j] - x[i, j]; neighbours outside
    the image contribute nothing. Summed over channels.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    x = image if image.ndim == 3 else image[None]
    dl = np.zeros_like(x)
    dd = np.zeros_like(x)
    dl[:, :, 1:] = x[:, :, :-1] - x[:, :, 1:]
    dd[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
    s = dl * dl + dd * dd
    if beta == 2.0:
        value = float(s.sum())
        coef = np.ones_like(s)
    else:
        value = float(np.power(s, beta / 2.0).sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(s > 0, (beta / 2.0) * np.power(s, beta / 2.0 - 1.0), 0.0)
    # d s / d x via the two difference terms
    a = 2.0 * coef * dl
    b = 2.0 * coef * dd
    g = np.zeros_like(x)
    g[:, :, :-1] += a[:, :, 1:]
    g[:, :, 1:] -= a[:, :, 1:]
    g[:, 1:, :] += b[:, :-1, :]
    g[:, :-1, :] -= b[:, :-1, :]
    return value, g.reshape(image.shape)


def tv_loss(beta: float = 2.0):
    """TV as an output loss (for gradient checks on an identity network)."""
    return lambda out: tv_value_grad(out, beta)


# --------------------------------------------------------------------------
# white-box (optimization) reconstruction


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 500
    step: float = 1.0 / 255.0
    tv_weight: float = 1e-3
    tv_beta: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if self.tv_weight < 0:
            raise ValueError("tv_weight must be >= 0")
        if not self.tv_beta > 0:
            raise ValueError("tv_beta must be > 0")


def inversion_objective(shallow, xhat, z, tv_weight, tv_beta):
    """||E_c(xhat) - z||_2 + tv_weight * TV(xhat) and its gradient in xhat."""
    acts = nn.model_forward_collect(shallow, xhat)
    fval, fgrad = nn.l2_distance_loss(z)(acts[-1])
    gx, _ = nn.model_backward(shallow, acts, fgrad, need_param_grads=False)
    if tv_weight:
        tval, tgrad = tv_value_grad(xhat, tv_beta)
        return fval + tv_weight * tval, gx + tv_weight * tgrad
    return fval, gx


def whitebox_reconstruct(z: np.ndarray, shallow, cfg: AttackConfig = AttackConfig(), input_shape=(3, 32, 32)):
    """Invert shallow features by signed-gradient descent from uniform noise."""
    out_shape = nn.chain_shapes(shallow.layers, input_shape)[-1]
    if z.shape != out_shape:
        raise nn.ShapeError("feature shape", None, out_shape, z.shape)
    xhat = rng.stream(rng.ATTACK, cfg.seed).uniform(0.0, 1.0, size=input_shape)
    for _ in range(cfg.iterations):
        _, g = inversion_objective(shallow, xhat, z, cfg.tv_weight, cfg.tv_beta)
        xhat = np.clip(xhat - cfg.step * np.sign(g), 0.0, 1.0)
    return xhat


# --------------------------------------------------------------------------
# decoder (black-box) reconstruction


def decoder_spec(feature_shape=(32, 8, 8), out_channels=3) -> models.ModelSpec:
    c = feature_shape[0]
    layers = (
        Conv2d(c, 32, 3, 1, 1),
        ReLU(),
        UpsampleNearest2x(),
        Conv2d(32, 16, 3, 1, 1),
        ReLU(),
        UpsampleNearest2x(),
        Conv2d(16, out_channels, 3, 1, 1),
        Sigmoid(),
    )
    return models.ModelSpec(layers, feature_shape)


@dataclass(frozen=True)
class DecoderHyper:
    lr: float = 0.5
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    steps: int | None = None


def _mse_grad(model, sample):
    z, x = sample
    acts = nn.model_forward_collect(model, z)
    d = acts[-1] - x
    loss = float(np.mean(d * d))
    _, grads = nn.model_backward(model, acts, 2.0 * d / d.size)
    return loss, grads


def train_decoder(pairs: Sequence, spec: models.ModelSpec | None = None, hyper: DecoderHyper = DecoderHyper()):
    """Fit R(z) ~ x by mini-batch momentum descent on mean squared pixel error."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty training pairs")
    spec = spec or decoder_spec(pairs[0][0].shape)
    out_shape = spec.shapes()[-1]
    for z, x in pairs:
        if z.shape != spec.input_shape:
            raise nn.ShapeError("feature shape", 0, spec.input_shape, z.shape)
        if x.shape != out_shape:
            raise nn.ShapeError("image shape", len(spec.layers) - 1, out_shape, x.shape)
    model = models.build_model(spec, hyper.seed)
    return models.sgd_momentum(
        model, pairs, _mse_grad, hyper.lr, hyper.momentum, hyper.epochs, hyper.batch_size, hyper.seed, hyper.steps
    )


def modelbased_reconstruct(decoder, z: np.ndarray) -> np.ndarray:
    if z.shape != decoder.spec.input_shape:
        raise nn.ShapeError("feature shape", 0, decoder.spec.input_shape, z.shape)
    return nn.model_forward(decoder, z)


# --------------------------------------------------------------------------
# attribute estimation


def train_attribute_probe(images, tags, hyper: models.TrainHyper = models.TrainHyper()) -> models.Model:
    """Two-class classifier over the synthetic attribute tag."""
    if len(set(int(t) for t in tags)) < 2:
        raise ValueError("attribute probe needs both tag classes")
    return models.train_classifier(models.recognizer_spec(2), images, tags, hyper)


def attribute_estimate(probe, image: np.ndarray) -> np.ndarray:
    """Probability vector over attribute classes."""
    if image.shape != probe.spec.input_shape:
        raise nn.ShapeError("image shape", 0, probe.spec.input_shape, image.shape)
    return nn.softmax(nn.model_forward(probe, image))
