"""Image-quality, recognition and utility-privacy metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import core, models, nn, rng

SSIM_WINDOW = 7
PSNR_CAP = 100.0
DATA_RANGE = 1.0


def _check_same(a, b):
    if a.shape != b.shape:
        raise nn.ShapeError("images differ in shape", None, a.shape, b.shape)


def ssim(a: np.ndarray, b: np.ndarray, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all valid 7x7 uniform windows, averaged per channel.

    Window statistics use population (1/N) moments; C1 = (0.01 L)^2,
    C2 = (0.03 L)^2 with L = 1.
    """
    _check_same(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < window or a.shape[-2] < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} SSIM window")
    c1 = (0.01 * DATA_RANGE) ** 2
    c2 = (0.03 * DATA_RANGE) ** 2
    wa = sliding_window_view(a, (window, window), axis=(-2, -1))
    wb = sliding_window_view(b, (window, window), axis=(-2, -1))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(smap.mean(axis=(-2, -1)).mean())


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    _check_same(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(DATA_RANGE**2 / mse))


def cos_sim(u: np.ndarray, v: np.ndarray) -> float:
    u, v = np.ravel(u), np.ravel(v)
    if u.shape != v.shape:
        raise nn.ShapeError("vectors differ in length", None, u.shape, v.shape)
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def srra(originals: Sequence, reconstructions: Sequence, authorized, kappa: float = 0.2) -> float:
    """Share of reconstructions the authorized model still matches to their original."""
    if len(originals) != len(reconstructions):
        raise ValueError("originals and reconstructions differ in count")
    if not originals:
        raise ValueError("no images")
    hits = sum(
        cos_sim(models.embed(authorized, r), models.embed(authorized, x)) > kappa
        for x, r in zip(originals, reconstructions)
    )
    return hits / len(originals)


def verification_accuracy(
    model,
    pairs: Sequence,
    kappa: float = 0.2,
    protect: Callable[[np.ndarray], np.ndarray] | None = None,
    protected: Sequence | None = None,
) -> float:
    """Strict pair accuracy.

    A pair counts when the protected first image still matches its own
    original and its match decision against the second image equals the
    label. ``protected`` may hold precomputed protected first images;
    otherwise ``protect`` (identity by default) is applied.
    """
    if not pairs:
        raise ValueError("no verification pairs")
    if protected is None:
        protected = [protect(p.image1) if protect else p.image1 for p in pairs]
    if len(protected) != len(pairs):
        raise ValueError("protected images and pairs differ in count")
    ok = 0
    for p, xt in zip(pairs, protected):
        e = models.embed(model, xt)
        own = cos_sim(e, models.embed(model, p.image1)) > kappa
        match = cos_sim(e, models.embed(model, p.image2)) > kappa
        ok += int(own and match == bool(p.y))
    return ok / len(pairs)


def standard_verification_accuracy(model, pairs, kappa: float = 0.2) -> float:
    """Plain pair verification: cos(f(x1), f(x2)) > kappa compared with the label."""
    ok = sum(
        int((cos_sim(models.embed(model, p.image1), models.embed(model, p.image2)) > kappa) == bool(p.y))
        for p in pairs
    )
    return ok / len(pairs)


# --------------------------------------------------------------------------
# utility-privacy score

PROBE_SEED = 7777
PROBE_LAYERS = (2, 5, 8)  # outputs of the three pooled blocks


def perceptual_probe(seed: int = PROBE_SEED) -> models.Model:
    """Fixed, never-trained network standing in for a learned perceptual metric."""
    return models.build_model(models.recognizer_spec(), seed)


def probe_distance(probe, a: np.ndarray, b: np.ndarray, layers=PROBE_LAYERS) -> float:
    """Mean over probe layers of (1 - cos) between 4x4-pooled activations, clipped to [0, 1]."""
    depth = max(layers) + 1
    acts_a = nn.forward_collect(probe.layers[:depth], probe.params[:depth], a)
    acts_b = nn.forward_collect(probe.layers[:depth], probe.params[:depth], b)
    dists = []
    for l in layers:
        fa = core.adaptive_pool(acts_a[l + 1]).ravel()
        fb = core.adaptive_pool(acts_b[l + 1]).ravel()
        na, nb = np.linalg.norm(fa), np.linalg.norm(fb)
        c = float(fa @ fb / (na * nb)) if na > 0 and nb > 0 else (1.0 if na == nb else 0.0)
        dists.append(1.0 - c)
    return float(np.clip(np.mean(dists), 0.0, 1.0))


@dataclass(frozen=True)
class UpParams:
    sigma: float = 0.1
    kappa: float = 0.5
    trials: int = 8
    probe_seed: int = PROBE_SEED
    probe_layers: tuple[int, ...] = PROBE_LAYERS
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not -1 < self.kappa < 1:
            raise ValueError("kappa must lie in (-1, 1)")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def _noisy(x, sigma, *keys):
    if sigma == 0:
        return x
    return np.clip(x + rng.stream(rng.UP_NOISE, *keys).normal(0.0, sigma, size=x.shape), 0.0, 1.0)


def up_metric(X: Sequence, Xt: Sequence, authorized, params: UpParams = UpParams(), probe=None):
    """Return (utility, privacy, utility + privacy).

    Both sets get independent clamped Gaussian noise per trial. Utility is the
    authorized match rate at ``kappa``; privacy is the probe distance.
    """
    if len(X) != len(Xt):
        raise ValueError("X and Xt differ in count")
    if not X:
        raise ValueError("no images")
    probe = probe or perceptual_probe(params.probe_seed)
    util = priv = 0.0
    for i, (x, xt) in enumerate(zip(X, Xt)):
        for t in range(params.trials):
            xn = _noisy(x, params.sigma, params.seed, i, t, 0)
            xtn = _noisy(xt, params.sigma, params.seed, i, t, 1)
            util += cos_sim(models.embed(authorized, xtn), models.embed(authorized, xn)) > params.kappa
            priv += probe_distance(probe, xn, xtn, params.probe_layers)
    n = len(X) * params.trials
    return util / n, priv / n, (util + priv) / n


def attribute_cos_sim(probe, x: np.ndarray, xt: np.ndarray) -> float:
    from .attacks import attribute_estimate

    return cos_sim(attribute_estimate(probe, xt), attribute_estimate(probe, x))
