"""Toy recognizer construction, training, embedding, splitting and weight files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn, rng
from .nn import AvgPool2d, Conv2d, Flatten, L2Normalize, Linear, ReLU


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    input_shape: tuple[int, ...]
    embed_dim: int | None = None
    n_classes: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        shapes = nn.chain_shapes(self.layers, self.input_shape)
        if self.n_classes is not None:
            head = self.layers[-1] if self.layers else None
            if not isinstance(head, Linear) or head.out_dim != self.n_classes:
                raise ValueError("classifier head must be a final Linear layer with n_classes outputs")
        if self.embed_dim is not None and shapes[self.embed_depth] != (self.embed_dim,):
            raise ValueError(f"embedding shape {shapes[self.embed_depth]} != ({self.embed_dim},)")

    @property
    def embed_depth(self) -> int:
        """Number of layers in the embedding path (everything but the head)."""
        return len(self.layers) - (1 if self.n_classes is not None else 0)

    def shapes(self):
        return nn.chain_shapes(self.layers, self.input_shape)


def recognizer_spec(n_classes=None, widths=(16, 32, 64), embed_dim=64, input_shape=(3, 32, 32)) -> ModelSpec:
    """Conv(k3,p1)+ReLU+AvgPool2 blocks, Flatten, Linear, L2Normalize, optional head."""
    layers = []
    c = input_shape[0]
    for w in widths:
        layers += [Conv2d(c, w, 3, 1, 1), ReLU(), AvgPool2d(2)]
        c = w
    side = input_shape[1] // 2 ** len(widths)
    layers += [Flatten(), Linear(c * side * side, embed_dim), L2Normalize()]
    if n_classes is not None:
        layers.append(Linear(embed_dim, n_classes))
    return ModelSpec(tuple(layers), input_shape, embed_dim, n_classes)


UNAUTHORIZED_WIDTHS = (8, 24, 48)
UNAUTHORIZED_EMBED = 32
DEFAULT_SPLIT = 6  # end of block 2


@dataclass
class Model:
    spec: ModelSpec
    params: list
    seed: int = 0
    history: tuple = field(default=(), compare=False)

    @property
    def layers(self):
        return self.spec.layers

    def tensors(self):
        """(name, array) pairs in serialization order."""
        for i, (layer, plist) in enumerate(zip(self.layers, self.params)):
            for name, p in zip(nn.param_names(layer), plist):
                yield f"layer{i}.{name}", p

    def n_params(self) -> int:
        return sum(p.size for _, p in self.tensors())

    def equals(self, other) -> bool:
        """Bit-exact parameter equality."""
        a, b = list(self.tensors()), list(other.tensors())
        return len(a) == len(b) and all(
            na == nb and pa.shape == pb.shape and pa.tobytes() == pb.tobytes() for (na, pa), (nb, pb) in zip(a, b)
        )


def build_model(spec: ModelSpec, seed: int) -> Model:
    """Weights uniform in +-sqrt(6 / fan_in), drawn from a stream keyed by (seed, layer); zero biases."""
    params = []
    for i, layer in enumerate(spec.layers):
        shapes = nn.param_shapes(layer)
        if not shapes:
            params.append([])
            continue
        wshape = shapes[0]
        fan_in = int(np.prod(wshape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        w = rng.stream(rng.INIT_WEIGHTS, seed, i).uniform(-bound, bound, size=wshape)
        params.append([w] + [np.zeros(s) for s in shapes[1:]])
    return Model(spec, params, seed)


def copy_model(model: Model) -> Model:
    return Model(model.spec, [[p.copy() for p in plist] for plist in model.params], model.seed, model.history)


# --------------------------------------------------------------------------
# forward helpers


def embed(model, image: np.ndarray) -> np.ndarray:
    """Unit-norm embedding: the forward pass without the classifier head."""
    spec = model.spec
    if image.shape != spec.input_shape:
        raise nn.ShapeError("image shape", 0, spec.input_shape, image.shape)
    depth = spec.embed_depth
    return nn.forward_collect(spec.layers[:depth], model.params[:depth], image)[-1]


def logits(model, image):
    return nn.model_forward(model, image)


@dataclass
class SplitModel:
    model: Model
    s: int

    @property
    def shallow(self) -> nn.Stack:
        return nn.Stack(list(self.model.layers[: self.s]), self.model.params[: self.s])

    @property
    def server(self) -> nn.Stack:
        return nn.Stack(list(self.model.layers[self.s :]), self.model.params[self.s :])

    def shallow_forward(self, x):
        return nn.model_forward(self.shallow, x)

    def server_forward(self, z):
        return nn.model_forward(self.server, z)

    def server_embed(self, z):
        """Embedding from shallow features (server layers minus the head)."""
        depth = self.model.spec.embed_depth - self.s
        return nn.forward_collect(self.model.layers[self.s :][:depth], self.model.params[self.s :][:depth], z)[-1]


def split_model(model: Model, s: int) -> SplitModel:
    if not 0 < s < len(model.layers):
        raise ValueError(f"split index {s} outside (0, {len(model.layers)})")
    return SplitModel(model, s)


# --------------------------------------------------------------------------
# weight file format (.pmtw)

MAGIC = b"PMTW"
VERSION = 1


class WeightFormatError(ValueError):
    pass


class BadMagicError(WeightFormatError):
    def __init__(self, got):
        super().__init__(f"bad magic: {got!r}")


class VersionError(WeightFormatError):
    def __init__(self, got):
        super().__init__(f"version mismatch: expected {VERSION}, got {got}")


class TensorMismatchError(WeightFormatError):
    pass


class TruncatedStreamError(WeightFormatError):
    def __init__(self, what):
        super().__init__(f"truncated stream while reading {what}")


def serialize_tensors(named: Sequence[tuple[str, np.ndarray]]) -> bytes:
    named = list(named)
    out = [MAGIC, struct.pack("<II", VERSION, len(named))]
    for name, arr in named:
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    return b"".join(out)


def deserialize_tensors(data: bytes) -> list[tuple[str, np.ndarray]]:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedStreamError(what)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    magic = data[:4]
    if magic != MAGIC:
        raise BadMagicError(magic)
    pos = 4
    (version,) = struct.unpack("<I", take(4, "header"))
    if version != VERSION:
        raise VersionError(version)
    (count,) = struct.unpack("<I", take(4, "header"))
    tensors = []
    for t in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"tensor #{t} name length"))
        name = take(nlen, f"tensor #{t} name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"tensor {name!r} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"tensor {name!r} dims"))
        n = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(take(8 * n, f"tensor {name!r}"), dtype="<f8").astype(np.float64)
        tensors.append((name, values.reshape(dims)))
    if pos != len(data):
        raise WeightFormatError(f"{len(data) - pos} trailing bytes after last tensor")
    return tensors


def serialize_weights(model: Model) -> bytes:
    return serialize_tensors(model.tensors())


def deserialize_weights(data: bytes, spec: ModelSpec, seed: int = 0) -> Model:
    tensors = deserialize_tensors(data)
    expected = [
        (f"layer{i}.{name}", shape)
        for i, layer in enumerate(spec.layers)
        for name, shape in zip(nn.param_names(layer), nn.param_shapes(layer))
    ]
    if len(tensors) != len(expected):
        raise TensorMismatchError(f"tensor count: expected {len(expected)}, got {len(tensors)}")
    found = iter(tensors)
    params = []
    for i, layer in enumerate(spec.layers):
        plist = []
        for name, shape in zip(nn.param_names(layer), nn.param_shapes(layer)):
            got_name, arr = next(found)
            if got_name != f"layer{i}.{name}":
                raise TensorMismatchError(f"tensor name: expected layer{i}.{name}, got {got_name}")
            if arr.shape != shape:
                raise TensorMismatchError(f"tensor {got_name} shape: expected {shape}, got {arr.shape}")
            plist.append(arr)
        params.append(plist)
    return Model(spec, params, seed)


def save_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_weights(model))


def load_model(path, spec: ModelSpec) -> Model:
    with open(path, "rb") as fh:
        return deserialize_weights(fh.read(), spec)


# --------------------------------------------------------------------------
# training

# (model, sample) -> (loss, param_grads)
GradFn = Callable[[Model, object], tuple[float, list]]


def sgd_momentum(
    model: Model,
    samples: Sequence,
    grad_fn: GradFn,
    lr: float,
    momentum: float,
    epochs: int,
    batch_size: int,
    seed: int,
    steps: int | None = None,
) -> Model:
    """Mini-batch gradient descent with heavy-ball momentum (v <- mu v + g; p <- p - lr v).

    Trains a copy of ``model``. Shuffling uses a stream keyed by (seed, epoch).
    If ``steps`` is given, training stops after that many updates. The
    returned model's ``history`` holds the mean loss of each epoch.
    """
    if not samples:
        raise ValueError("empty training set")
    model = copy_model(model)
    velocity = [[np.zeros_like(p) for p in plist] for plist in model.params]
    history = []
    n_steps = 0
    epoch = 0
    while epoch < epochs or (steps is not None and n_steps < steps):
        order = rng.stream(rng.SHUFFLE, seed, epoch).permutation(len(samples))
        total = 0.0
        seen = 0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            acc = None
            for j in batch:
                loss, grads = grad_fn(model, samples[j])
                total += loss
                seen += 1
                if acc is None:
                    acc = [[g.copy() for g in glist] for glist in grads]
                else:
                    for alist, glist in zip(acc, grads):
                        for a, g in zip(alist, glist):
                            a += g
            scale = 1.0 / len(batch)
            for plist, vlist, alist in zip(model.params, velocity, acc):
                for p, v, a in zip(plist, vlist, alist):
                    v *= momentum
                    v += a * scale
                    p -= lr * v
            n_steps += 1
            if steps is not None and n_steps >= steps:
                break
        history.append(total / seen)
        epoch += 1
        if steps is not None and n_steps >= steps:
            break
    model.history = tuple(history)
    return model


def classification_grad(model: Model, sample) -> tuple[float, list]:
    image, label = sample
    acts = nn.model_forward_collect(model, image)
    loss, g = nn.softmax_cross_entropy(acts[-1], int(label))
    _, grads = nn.model_backward(model, acts, g)
    return loss, grads


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    steps: int | None = None


def train_classifier(spec: ModelSpec, images, labels, hyper: TrainHyper = TrainHyper(), init_seed=None) -> Model:
    if len(images) == 0:
        raise ValueError("empty dataset")
    if len(images) != len(labels):
        raise ValueError("images and labels differ in length")
    if spec.n_classes is None or spec.n_classes < max(int(y) for y in labels) + 1:
        raise ValueError(f"classifier head size {spec.n_classes} cannot cover labels")
    model = build_model(spec, hyper.seed if init_seed is None else init_seed)
    samples = list(zip(images, labels))
    return sgd_momentum(
        model, samples, classification_grad, hyper.lr, hyper.momentum, hyper.epochs, hyper.batch_size, hyper.seed, hyper.steps
    )


def train_recognizer(spec: ModelSpec, images, labels, hyper: TrainHyper = TrainHyper(), init_seed=None) -> Model:
    """Train a face-ID classifier on labeled renders; the head count must equal the identity count."""
    n_ids = len(set(int(y) for y in labels))
    if n_ids < 2:
        raise ValueError("need at least two identities")
    if spec.n_classes != n_ids:
        raise ValueError(f"head size {spec.n_classes} != identity count {n_ids}")
    return train_classifier(spec, images, labels, hyper, init_seed)
