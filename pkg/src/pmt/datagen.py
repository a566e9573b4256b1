"""Procedural face-like images, verification pairs, augmentations and PPM I/O."""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np

from . import rng

SIZE = 32
CHANNELS = 3

SKIN_BASE = np.array([0.62, 0.62, 0.62])
SKIN_SPREAD = 0.1
BG_BASE = np.array([0.5, 0.5, 0.5])
BG_SPREAD = 0.15


@dataclass(frozen=True)
class IdentityParams:
    face_cx: float
    face_cy: float
    face_ax: float
    face_ay: float
    skin: tuple[float, float, float]
    eye_sep: float
    eye_y: float
    mouth_w: float
    mouth_curv: float
    bg_top: tuple[float, float, float]
    bg_bottom: tuple[float, float, float]
    tag: int


def gen_identity(identity_seed: int) -> IdentityParams:
    g = rng.stream(rng.IDENTITY, identity_seed)
    u = g.uniform
    return IdentityParams(
        face_cx=u(0.46, 0.54),
        face_cy=u(0.48, 0.56),
        face_ax=u(0.24, 0.34),
        face_ay=u(0.30, 0.38),
        skin=tuple(SKIN_BASE + u(-SKIN_SPREAD, SKIN_SPREAD, 3)),
        eye_sep=u(0.16, 0.30),
        eye_y=u(-0.16, -0.04),
        mouth_w=u(0.12, 0.30),
        mouth_curv=u(-0.06, 0.06),
        bg_top=tuple(BG_BASE + u(-BG_SPREAD, BG_SPREAD, 3)),
        bg_bottom=tuple(BG_BASE + u(-BG_SPREAD, BG_SPREAD, 3)),
        tag=int(g.integers(0, 2)),
    )


def _coverage(signed_dist):
    """Anti-aliased inside fraction from a signed distance in pixels (negative inside)."""
    return np.clip(0.5 - signed_dist, 0.0, 1.0)


def render_face(ident: IdentityParams, variation_seed: int) -> np.ndarray:
    """Render one 3x32x32 view of an identity.

    The variation seed jitters brightness (+-0.1), each feature's position
    (+-1 px) and adds pixel noise (sigma 0.02).
    """
    g = rng.stream(rng.RENDER, hash_identity(ident), variation_seed)
    bright = g.uniform(-0.1, 0.1)
    jit = g.uniform(-1.0, 1.0, size=(4, 2))  # face, eyes, mouth, accessory

    n = SIZE
    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    t = (yy / n)[None]
    img = (1 - t) * np.array(ident.bg_top)[:, None, None] + t * np.array(ident.bg_bottom)[:, None, None]

    def paint(cover, color):
        nonlocal img
        color = np.asarray(color, dtype=np.float64)[:, None, None]
        img = img * (1 - cover) + color * cover

    # face ellipse
    cx = ident.face_cx * n + jit[0, 0]
    cy = ident.face_cy * n + jit[0, 1]
    ax, ay = ident.face_ax * n, ident.face_ay * n
    r = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
    paint(_coverage((r - 1.0) * min(ax, ay)), ident.skin)

    # eyes
    ex = cx + jit[1, 0]
    ey = cy + ident.eye_y * n + jit[1, 1]
    half = ident.eye_sep * n / 2
    eye_color = 0.15 * np.array(ident.skin)
    for sx in (-half, half):
        d = np.sqrt((xx - (ex + sx)) ** 2 + (yy - ey) ** 2)
        paint(_coverage(d - 1.6), eye_color)

    # mouth: a curved stroke
    mx = cx + jit[2, 0]
    my = cy + 0.45 * ay + jit[2, 1]
    mw = ident.mouth_w * n / 2
    u = np.clip((xx - mx) / mw, -1.0, 1.0)
    curve_y = my + ident.mouth_curv * n * (1 - u**2)
    inside_x = _coverage(np.abs(xx - mx) - mw)
    paint(inside_x * _coverage(np.abs(yy - curve_y) - 0.8), (0.55, 0.1, 0.12))

    # accessory marking the private attribute: a dark bar across the eye line
    if ident.tag == 1:
        gx = ex + jit[3, 0] * 0.5
        gy = ey + jit[3, 1] * 0.5
        bar = _coverage(np.maximum(np.abs(xx - gx) - (half + 3.0), np.abs(yy - gy) - 1.2))
        paint(bar, (0.05, 0.05, 0.25))

    img = img + bright + g.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def hash_identity(ident: IdentityParams) -> int:
    """Stable 64-bit key for an identity record (so renders depend only on its fields)."""
    flat = []
    for v in astuple(ident):
        flat.extend(v if isinstance(v, tuple) else (v,))
    raw = np.asarray(flat, dtype=np.float64).tobytes()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


# --------------------------------------------------------------------------
# datasets and pairs


@dataclass(frozen=True)
class VerificationPair:
    image1: np.ndarray
    image2: np.ndarray
    y: int
    key1: tuple[int, int] = (0, 0)  # (identity seed, variation seed)
    key2: tuple[int, int] = (0, 0)


def render_set(identity_seeds: Sequence[int], variations: Sequence[int]):
    """All renders of the given identities; labels are positions in ``identity_seeds``."""
    images, labels = [], []
    for label, s in enumerate(identity_seeds):
        ident = gen_identity(s)
        for v in variations:
            images.append(render_face(ident, v))
            labels.append(label)
    return images, labels


def make_pairs(identity_seeds: Sequence[int], renders: int, count: int, pair_seed: int, variation_base: int = 0):
    """``count // 2`` same-identity and ``count // 2`` different-identity pairs.

    Views are drawn from variation seeds ``variation_base .. variation_base +
    renders - 1``. Positive pairs always use two different views.
    """
    identity_seeds = list(identity_seeds)
    if len(identity_seeds) < 2:
        raise ValueError("need at least two identities")
    if count < 0 or count % 2:
        raise ValueError(f"pair count must be even and non-negative, got {count}")
    if renders < 2 and count > 0:
        raise ValueError("positive pairs need at least two renders per identity")
    g = rng.stream(rng.PAIRS, pair_seed)
    idents = {s: gen_identity(s) for s in identity_seeds}
    cache = {}

    def view(s, v):
        if (s, v) not in cache:
            cache[(s, v)] = render_face(idents[s], v)
        return cache[(s, v)]

    pairs = []
    m = count // 2
    for _ in range(m):
        s = identity_seeds[g.integers(len(identity_seeds))]
        v1, v2 = g.choice(renders, size=2, replace=False) + variation_base
        pairs.append(VerificationPair(view(s, v1), view(s, v2), 1, (s, int(v1)), (s, int(v2))))
    for _ in range(m):
        i, j = g.choice(len(identity_seeds), size=2, replace=False)
        s1, s2 = identity_seeds[i], identity_seeds[j]
        v1, v2 = g.integers(renders, size=2) + variation_base
        pairs.append(VerificationPair(view(s1, v1), view(s2, v2), 0, (s1, int(v1)), (s2, int(v2))))
    order = g.permutation(len(pairs))
    return [pairs[k] for k in order]


# --------------------------------------------------------------------------
# augmentation T(.)


@dataclass(frozen=True)
class NoAugment:
    pass


@dataclass(frozen=True)
class RandomNoise:
    sigma: float = 0.1

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class RandomAffine:
    max_rotation: float = 10.0  # degrees
    max_translation: float = 2.0  # pixels
    scale_range: tuple[float, float] = (0.95, 1.05)

    def __post_init__(self):
        lo, hi = self.scale_range
        if not lo <= 1.0 <= hi:
            raise ValueError("scale range must contain 1")


@dataclass(frozen=True)
class Mix:
    affine: RandomAffine = RandomAffine()
    noise: RandomNoise = RandomNoise()


AugmentMode = NoAugment | RandomNoise | RandomAffine | Mix


class Warp:
    """Bilinear resampling with edge clamping, as a linear map with an adjoint."""

    def __init__(self, shape, angle_deg, tx, ty, scale):
        _, h, w = shape
        self.shape = tuple(shape)
        theta = np.deg2rad(angle_deg)
        c, s = np.cos(theta), np.sin(theta)
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        # inverse mapping: output pixel -> source coordinate
        dx, dy = xx - cx - tx, yy - cy - ty
        sx = (c * dx + s * dy) / scale + cx
        sy = (-s * dx + c * dy) / scale + cy
        sx = np.clip(sx, 0.0, w - 1.0)
        sy = np.clip(sy, 0.0, h - 1.0)
        x0 = np.minimum(np.floor(sx).astype(np.int64), w - 1)
        y0 = np.minimum(np.floor(sy).astype(np.int64), h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx, fy = sx - x0, sy - y0
        self.idx = [(y0 * w + x0).ravel(), (y0 * w + x1).ravel(), (y1 * w + x0).ravel(), (y1 * w + x1).ravel()]
        self.wts = [((1 - fy) * (1 - fx)).ravel(), ((1 - fy) * fx).ravel(), (fy * (1 - fx)).ravel(), (fy * fx).ravel()]

    def apply(self, x):
        c, h, w = x.shape
        flat = x.reshape(c, h * w)
        out = np.zeros((c, h * w))
        for idx, wt in zip(self.idx, self.wts):
            out += flat[:, idx] * wt
        return out.reshape(x.shape)

    def adjoint(self, g):
        c, h, w = g.shape
        gf = g.reshape(c, h * w)
        out = np.zeros((c, h * w))
        for idx, wt in zip(self.idx, self.wts):
            for ch in range(c):
                out[ch] += np.bincount(idx, weights=gf[ch] * wt, minlength=h * w)
        return out.reshape(g.shape)


class AugmentDraw:
    """One sampled augmentation; ``apply`` is T(x), ``vjp`` back-propagates through it."""

    def __init__(self, warp=None, noise=None):
        self.warp = warp
        self.noise = noise

    def apply(self, x):
        y = self.warp.apply(x) if self.warp is not None else x
        if self.noise is not None:
            y = np.clip(y + self.noise, 0.0, 1.0)
        return y

    def vjp(self, x, g):
        if self.noise is not None:
            pre = (self.warp.apply(x) if self.warp is not None else x) + self.noise
            g = g * ((pre > 0.0) & (pre < 1.0))
        if self.warp is not None:
            g = self.warp.adjoint(g)
        return g


def draw_augmentation(mode, shape, draw_seed) -> AugmentDraw:
    """Sample one augmentation; ``draw_seed`` is an int or a tuple of ints."""
    if isinstance(mode, NoAugment) or mode is None:
        return AugmentDraw()
    keys = draw_seed if isinstance(draw_seed, tuple) else (draw_seed,)
    g = rng.stream(rng.AUGMENT, *keys)
    if isinstance(mode, RandomNoise):
        return AugmentDraw(noise=g.normal(0.0, mode.sigma, size=shape) if mode.sigma > 0 else None)
    if isinstance(mode, RandomAffine):
        return AugmentDraw(warp=_draw_warp(mode, shape, g))
    if isinstance(mode, Mix):
        warp = _draw_warp(mode.affine, shape, g)
        noise = g.normal(0.0, mode.noise.sigma, size=shape) if mode.noise.sigma > 0 else None
        return AugmentDraw(warp=warp, noise=noise)
    raise TypeError(f"unknown augmentation mode {mode!r}")


def _draw_warp(mode: RandomAffine, shape, g):
    angle = g.uniform(-mode.max_rotation, mode.max_rotation)
    tx, ty = g.uniform(-mode.max_translation, mode.max_translation, size=2)
    scale = g.uniform(*mode.scale_range)
    return Warp(shape, angle, tx, ty, scale)


def augment(image: np.ndarray, mode, draw_seed: int) -> np.ndarray:
    if isinstance(mode, NoAugment) or mode is None:
        return image.copy()
    return draw_augmentation(mode, image.shape, draw_seed).apply(image)


def parse_augment(name: str, sigma: float = 0.1):
    name = name.lower().replace("_", "-")
    if name == "none":
        return NoAugment()
    if name in ("noise", "random-noise"):
        return RandomNoise(sigma)
    if name in ("affine", "random-affine"):
        return RandomAffine()
    if name == "mix":
        return Mix(RandomAffine(), RandomNoise(sigma))
    raise ValueError(f"unknown augmentation {name!r}")


# --------------------------------------------------------------------------
# PPM (P6) images


class PPMError(ValueError):
    pass


def ppm_encode(image: np.ndarray) -> bytes:
    if image.ndim != 3 or image.shape[0] != 3:
        raise PPMError(f"PPM needs a 3-channel image, got shape {image.shape}")
    _, h, w = image.shape
    q = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + q.transpose(1, 2, 0).tobytes()


_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def ppm_decode(data: bytes) -> np.ndarray:
    if data[:2] != b"P6":
        raise PPMError(f"bad magic: {data[:2]!r}")
    m = _HEADER.match(data)
    if m is None:
        raise PPMError("could not parse PPM dimensions")
    w, h, maxval = (int(v) for v in m.groups())
    if maxval != 255:
        raise PPMError(f"unsupported maxval {maxval}")
    payload = data[m.end() :]
    if len(payload) < 3 * w * h:
        raise PPMError(f"truncated payload: {len(payload)} < {3 * w * h} bytes")
    arr = np.frombuffer(payload[: 3 * w * h], dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_ppm(path, image):
    with open(path, "wb") as fh:
        fh.write(ppm_encode(image))


def read_ppm(path):
    with open(path, "rb") as fh:
        return ppm_decode(fh.read())


def export_dataset(directory, identity_seeds, variations):
    """Write ``<id>_<variation>.ppm`` for every render."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for s in identity_seeds:
        ident = gen_identity(s)
        for v in variations:
            path = os.path.join(directory, f"{s}_{v}.ppm")
            write_ppm(path, render_face(ident, v))
            paths.append(path)
    return paths


def import_dataset(directory):
    """Read a ``<id>_<variation>.ppm`` directory into {(id, variation): image}."""
    out = {}
    for name in sorted(os.listdir(directory)):
        m = re.fullmatch(r"(\d+)_(\d+)\.ppm", name)
        if m:
            out[(int(m.group(1)), int(m.group(2)))] = read_ppm(os.path.join(directory, name))
    return out
