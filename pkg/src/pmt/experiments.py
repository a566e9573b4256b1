"""Config-driven experiment suite with deterministic CSV reports.

An experiment is a function of an ``ExperimentConfig`` only: datasets,
models, obfuscations and attacks are all derived from the master seed, so a
rerun reproduces the CSV byte for byte.
"""

from __future__ import annotations

import hashlib
import math
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from . import attacks, core, datagen, metrics, models, nn, rng


class HarnessError(Exception):
    exit_code = 1


class UnknownExperimentError(HarnessError):
    exit_code = 2


class OutputError(HarnessError):
    exit_code = 3


class ConfigError(HarnessError):
    exit_code = 4


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ModelEntry:
    name: str
    widths: tuple[int, ...] = (16, 32, 64)
    embed_dim: int = 64
    seed: int = 0


DEFAULT_AUTHORIZED = (ModelEntry("A1", seed=1), ModelEntry("A2", seed=2))
DEFAULT_UNAUTHORIZED = (
    ModelEntry("U1", models.UNAUTHORIZED_WIDTHS, models.UNAUTHORIZED_EMBED, seed=3),
    ModelEntry("U2", models.UNAUTHORIZED_WIDTHS, models.UNAUTHORIZED_EMBED, seed=4),
)
TEST_VARIATION_BASE = 1000  # verification pairs use views never seen in training


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "exp-abuse"
    seed: int = 0
    output_dir: str = "out"
    identities: int = 16
    renders: int = 20
    pairs: int = 100
    eval_images: int = 50
    recon_images: int = 20
    attacker_identities: int = 40
    attacker_renders: int = 10
    split: int = models.DEFAULT_SPLIT
    kappa: float = 0.2
    noise_sigma: float = 0.3
    robust_sigmas: tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
    export_images: int = 2
    workers: int = 1
    models_dir: str | None = None
    authorized: tuple[ModelEntry, ...] = DEFAULT_AUTHORIZED
    unauthorized: tuple[ModelEntry, ...] = DEFAULT_UNAUTHORIZED
    pmt: core.PmtConfig = core.PmtConfig()
    attack: attacks.AttackConfig = attacks.AttackConfig()
    up: metrics.UpParams = metrics.UpParams()
    train: models.TrainHyper = models.TrainHyper()
    decoder: attacks.DecoderHyper = attacks.DecoderHyper()

    def model_entries(self):
        return self.authorized + self.unauthorized

    def entry(self, name: str) -> ModelEntry:
        for e in self.model_entries():
            if e.name == name:
                return e
        raise ConfigError(f"unknown model {name!r}")

    def validate(self) -> "ExperimentConfig":
        if self.identities < 2:
            raise ConfigError("identities must be >= 2")
        if self.renders < 2:
            raise ConfigError("renders must be >= 2")
        if self.pairs < 2 or self.pairs % 2:
            raise ConfigError("pairs must be a positive even number")
        for key in ("eval_images", "recon_images"):
            v = getattr(self, key)
            if not 1 <= v <= self.pairs:
                raise ConfigError(f"{key} must lie in [1, pairs]")
        if self.attacker_identities < 2 or self.attacker_renders < 1:
            raise ConfigError("attacker data needs >= 2 identities and >= 1 render")
        if not -1 < self.kappa < 1:
            raise ConfigError("kappa must lie in (-1, 1)")
        if self.noise_sigma < 0 or any(s < 0 for s in self.robust_sigmas):
            raise ConfigError("noise levels must be >= 0")
        if self.workers < 1 or self.export_images < 0:
            raise ConfigError("workers must be >= 1 and export_images >= 0")
        if not self.authorized or not self.unauthorized:
            raise ConfigError("need at least one authorized and one unauthorized model")
        names = [e.name for e in self.model_entries()]
        if len(set(names)) != len(names):
            raise ConfigError("model names must be unique")
        for e in self.model_entries():
            try:
                spec = _spec(self, e)
            except ValueError as err:
                raise ConfigError(f"model {e.name}: {err}") from None
            if not 0 < self.split < spec.embed_depth:
                raise ConfigError(f"split {self.split} outside the embedding path of {e.name}")
        if self.name not in EXPERIMENTS:
            raise UnknownExperimentError(f"unknown experiment {self.name!r}; known: {', '.join(EXPERIMENTS)}")
        return self


def _spec(cfg, entry):
    return models.recognizer_spec(cfg.identities, tuple(entry.widths), entry.embed_dim)


def _pmt_from_dict(d: dict, base: core.PmtConfig) -> core.PmtConfig:
    d = dict(d)
    kw = {}
    sigma = d.pop("augment_sigma", None)
    kernel_k = d.pop("kernel_k", None)
    if "init" in d:
        kw["init"] = core.parse_init(d.pop("init"))
    if "augment" in d:
        kw["augment"] = datagen.parse_augment(d.pop("augment"), 0.1 if sigma is None else sigma)
    elif sigma is not None:
        kw["augment"] = replace(base.augment, sigma=sigma) if isinstance(base.augment, datagen.RandomNoise) else base.augment
    if "kernel" in d:
        kw["kernel"] = core.parse_kernel(d.pop("kernel"), 1 if kernel_k is None else kernel_k)
    elif kernel_k is not None:
        kw["kernel"] = core.parse_kernel(type(base.kernel).__name__.replace("Kernel", ""), kernel_k)
    for key in ("iterations", "step", "clamp"):
        if key in d:
            kw[key] = d.pop(key)
    if "aggregate_layers" in d:
        kw["aggregate_layers"] = tuple(int(v) for v in d.pop("aggregate_layers"))
    if d:
        raise ConfigError(f"unknown pmt keys: {sorted(d)}")
    return replace(base, **kw)


def _dataclass_from_dict(cls, d: dict, base):
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(extra)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return replace(base, **kw)


def _entries(items) -> tuple[ModelEntry, ...]:
    out = []
    for item in items:
        if not isinstance(item, dict) or "name" not in item:
            raise ConfigError("model entries need at least a name")
        out.append(_dataclass_from_dict(ModelEntry, item, ModelEntry(item["name"])))
    return tuple(out)


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build and validate a config from a JSON-style dict (missing keys keep defaults)."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    d = dict(d)
    base = ExperimentConfig()
    kw = {}
    try:
        if "pmt" in d:
            kw["pmt"] = _pmt_from_dict(d.pop("pmt"), base.pmt)
        for key, cls in (("attack", attacks.AttackConfig), ("up", metrics.UpParams), ("train", models.TrainHyper),
                         ("decoder", attacks.DecoderHyper)):
            if key in d:
                kw[key] = _dataclass_from_dict(cls, d.pop(key), getattr(base, key))
        for key in ("authorized", "unauthorized"):
            if key in d:
                kw[key] = _entries(d.pop(key))
        known = {f.name for f in fields(ExperimentConfig)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        for k, v in d.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        cfg = replace(base, **kw)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    return cfg.validate()


# --------------------------------------------------------------------------
# reports

ID_COLUMNS = ("experiment", "order", "setting", "model", "n")
METRIC_COLUMNS = ("acc", "ssim", "psnr", "cos", "srra", "up_utility", "up_privacy", "up_total", "attr_cossim", "attr_acc")
COLUMNS = ID_COLUMNS + METRIC_COLUMNS
RATES = ("acc", "srra", "up_utility", "up_privacy", "attr_acc")


@dataclass(frozen=True)
class MetricReport:
    """One CSV row: an experiment setting evaluated on one model."""

    experiment: str
    order: int
    setting: str
    model: str
    n: int
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.values.items():
            if k not in METRIC_COLUMNS:
                raise ValueError(f"unknown metric {k!r}")
            if not math.isfinite(v):
                raise ValueError(f"metric {k} is not finite: {v}")
            if k in RATES and not 0.0 <= v <= 1.0:
                raise ValueError(f"rate {k} outside [0, 1]: {v}")

    def cells(self) -> list[str]:
        head = [self.experiment, str(self.order), self.setting, self.model, str(self.n)]
        return head + [format_value(self.values[k]) if k in self.values else "" for k in METRIC_COLUMNS]


def format_value(v: float) -> str:
    """Six significant digits, positional notation."""
    v = float(v)
    if v == 0.0:
        return "0"
    return np.format_float_positional(v, precision=6, unique=False, fractional=False, trim="-")


def render_report(reports) -> str:
    rows = sorted(reports, key=lambda r: r.order)
    lines = [",".join(COLUMNS)] + [",".join(_csv_cell(c) for c in r.cells()) for r in rows]
    return "\n".join(lines) + "\n"


def _csv_cell(s: str) -> str:
    return f'"{s}"' if ("," in s or '"' in s) else s


def emit_report(reports, path) -> str:
    """Write the CSV; returns the path."""
    reports = list(reports)
    if not reports:
        raise ValueError("empty report set")
    text = render_report(reports)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as err:
        raise OutputError(f"cannot write {path}: {err}") from None
    return str(path)


# --------------------------------------------------------------------------
# shared state for one run


def _protect_job(job):
    x, shallows, config = job
    return core.pmt_protect_multi(x, shallows, config).image


def _whitebox_job(job):
    z, shallow, cfg = job
    return attacks.whitebox_reconstruct(z, shallow, cfg)


def _digest(images) -> str:
    h = hashlib.blake2b(digest_size=16)
    for x in images:
        h.update(np.ascontiguousarray(x).tobytes())
    return h.hexdigest()


def _pmap(fn, jobs, workers):
    """Order-preserving map; results never depend on scheduling."""
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


class Lab:
    """Lazily built datasets, models and memoized obfuscations for one config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._models = {}
        self._memo = {}

    def _seed(self, *keys) -> int:
        return rng.derive_seed(rng.EXPERIMENT, self.cfg.seed, *keys)

    def _cached(self, key, build):
        if key not in self._memo:
            self._memo[key] = build()
        return self._memo[key]

    # data
    @property
    def victim_ids(self):
        return [self._seed(0, i) for i in range(self.cfg.identities)]

    @property
    def attacker_ids(self):
        return [self._seed(2, i) for i in range(self.cfg.attacker_identities)]

    def train_set(self):
        return self._cached("train", lambda: datagen.render_set(self.victim_ids, range(self.cfg.renders)))

    def pairs(self):
        return self._cached(
            "pairs",
            lambda: datagen.make_pairs(self.victim_ids, self.cfg.renders, self.cfg.pairs, self._seed(1), TEST_VARIATION_BASE),
        )

    def attacker_set(self):
        return self._cached("attacker", lambda: datagen.render_set(self.attacker_ids, range(self.cfg.attacker_renders)))

    def tags(self, pairs):
        return [datagen.gen_identity(p.key1[0]).tag for p in pairs]

    # models
    def model(self, name: str) -> models.Model:
        if name not in self._models:
            entry = self.cfg.entry(name)
            spec = _spec(self.cfg, entry)
            if self.cfg.models_dir:
                path = os.path.join(self.cfg.models_dir, f"{name}.pmtw")
                try:
                    self._models[name] = models.load_model(path, spec)
                except OSError as err:
                    raise ConfigError(f"cannot read model {path}: {err}") from None
            else:
                images, labels = self.train_set()
                hyper = replace(self.cfg.train, seed=self._seed(3, entry.seed))
                self._models[name] = models.train_recognizer(spec, images, labels, hyper)
        return self._models[name]

    def shallow(self, name: str) -> nn.Stack:
        return models.split_model(self.model(name), self.cfg.split).shallow

    def decoder(self, name: str):
        def build():
            sh = self.shallow(name)
            images, _ = self.attacker_set()
            data = [(nn.model_forward(sh, x), x) for x in images]
            return attacks.train_decoder(data, hyper=replace(self.cfg.decoder, seed=self._seed(5)))

        return self._cached(("decoder", name), build)

    def attribute_probe(self):
        def build():
            images, labels = self.attacker_set()
            tags = [datagen.gen_identity(self.attacker_ids[l]).tag for l in labels]
            return attacks.train_attribute_probe(images, tags, replace(self.cfg.train, seed=self._seed(6)))

        return self._cached("probe", build)

    # transformations
    def protect(self, images, names, config: core.PmtConfig | None = None):
        """PMT each image against the named shallow models; image i always uses PMT seed i."""
        config = config or self.cfg.pmt
        names = tuple(names)
        key = ("pmt", _digest(images), names, config)

        def build():
            shallows = [self.shallow(n) for n in names]
            jobs = [(x, shallows, replace(config, seed=self._seed(4, i))) for i, x in enumerate(images)]
            return _pmap(_protect_job, jobs, self.cfg.workers)

        return self._cached(key, build)

    def noisy(self, images):
        return [
            np.clip(x + rng.stream(rng.NOISE_BASELINE, self.cfg.seed, i).normal(0.0, self.cfg.noise_sigma, x.shape), 0.0, 1.0)
            for i, x in enumerate(images)
        ]

    def whitebox(self, name, feats):
        sh = self.shallow(name)
        jobs = [(z, sh, replace(self.cfg.attack, seed=self._seed(7, i))) for i, z in enumerate(feats)]
        return _pmap(_whitebox_job, jobs, self.cfg.workers)

    # evaluation
    def accuracy(self, name, pairs, protected):
        return metrics.verification_accuracy(self.model(name), pairs, self.cfg.kappa, protected=protected)

    def up(self, name, X, Xt, sigma=None):
        params = self.cfg.up if sigma is None else replace(self.cfg.up, sigma=sigma)
        params = replace(params, seed=self._seed(8, params.seed))
        return metrics.up_metric(X, Xt, self.model(name), params)

    def export(self, experiment, label, images):
        d = os.path.join(self.cfg.output_dir, experiment)
        try:
            os.makedirs(d, exist_ok=True)
            for i, img in enumerate(images[: self.cfg.export_images]):
                datagen.write_ppm(os.path.join(d, f"{label}_{i}.ppm"), img)
        except OSError as err:
            raise OutputError(f"cannot write exports to {d}: {err}") from None


# --------------------------------------------------------------------------
# experiments

EXPERIMENTS: dict[str, Callable[[Lab], list]] = {}


def register(name):
    def deco(fn):
        EXPERIMENTS[name] = fn
        return fn

    return deco


class _Rows:
    def __init__(self, experiment):
        self.experiment = experiment
        self.rows = []

    def add(self, setting, model, n, **values):
        self.rows.append(MetricReport(self.experiment, len(self.rows), setting, model, n, values))


def _image_quality(X, Xt):
    return dict(ssim=float(np.mean([metrics.ssim(a, b) for a, b in zip(Xt, X)])),
                psnr=float(np.mean([metrics.psnr(a, b) for a, b in zip(Xt, X)])))


def _eval_set(lab):
    pairs = lab.pairs()[: lab.cfg.eval_images]
    return pairs, [p.image1 for p in pairs]


def _clean_rows(lab, rows, pairs, X, names):
    for m in names:
        rows.add("clean", m, len(pairs), acc=lab.accuracy(m, pairs, X))


def _sweep(lab, name, variants):
    """Shared body of the single-model PMT sweeps: accuracy per model plus image quality."""
    rows = _Rows(name)
    pairs, X = _eval_set(lab)
    a = lab.cfg.authorized[0].name
    evaluated = [a] + [e.name for e in lab.cfg.unauthorized]
    _clean_rows(lab, rows, pairs, X, evaluated)
    lab.export(name, "original", X)
    for setting, config, extra in variants:
        Xt = lab.protect(X, (a,), config)
        lab.export(name, setting.replace(",", "_").replace("=", "-"), Xt)
        quality = _image_quality(X, Xt)
        for m in evaluated:
            rows.add(setting, m, len(pairs), acc=lab.accuracy(m, pairs, Xt), **quality)
        if extra:
            extra(rows, setting, a, X, Xt)
    return rows.rows


@register("exp-init")
def exp_init(lab):
    base = lab.cfg.pmt
    variants = [(f"init={n}", replace(base, init=core.parse_init(n)), None) for n in ("noise", "permute", "blur")]
    return _sweep(lab, "exp-init", variants)


@register("exp-augment")
def exp_augment(lab):
    base = lab.cfg.pmt
    sigma = base.augment.sigma if isinstance(base.augment, datagen.RandomNoise) else 0.1
    layers = base.aggregate_layers or (2, 5)
    variants = []
    for aug in ("none", "noise", "affine", "mix"):
        for agg, ls in (("on", layers), ("off", ())):
            cfg = replace(base, augment=datagen.parse_augment(aug, sigma), aggregate_layers=ls)
            variants.append((f"augment={aug},aggregate={agg}", cfg, None))
    return _sweep(lab, "exp-augment", variants)


@register("exp-kernel")
def exp_kernel(lab):
    base = lab.cfg.pmt

    def up_rows(rows, setting, a, X, Xt):
        for s in lab.cfg.robust_sigmas:
            u, p, t = lab.up(a, X, Xt, s)
            rows.add(f"{setting},sigma={s:g}", a, len(X), up_utility=u, up_privacy=p, up_total=t)

    kernels = [("none", 0)] + [(kind, k) for kind in ("linear", "gaussian") for k in (1, 2, 3)]
    variants = [(f"kernel={kind},k={k}", replace(base, kernel=core.parse_kernel(kind, max(k, 1))), up_rows)
                for kind, k in kernels]
    return _sweep(lab, "exp-kernel", variants)


@register("exp-recon")
def exp_recon(lab):
    rows = _Rows("exp-recon")
    cfg = lab.cfg
    a = cfg.authorized[0].name
    auth, sh = lab.model(a), lab.shallow(a)
    pairs, X = _eval_set(lab)
    Xr = X[: cfg.recon_images]
    inputs = {"clean": Xr, "noise": lab.noisy(X)[: cfg.recon_images], "pmt": lab.protect(X, (a,))[: cfg.recon_images]}
    dec = lab.decoder(a)
    lab.export("exp-recon", "original", Xr)
    for kind, imgs in inputs.items():
        feats = [nn.model_forward(sh, x) for x in imgs]
        for attack, recon in (("whitebox", lab.whitebox(a, feats)),
                              ("decoder", [attacks.modelbased_reconstruct(dec, z) for z in feats])):
            lab.export("exp-recon", f"{attack}-{kind}", recon)
            cos = float(np.mean([metrics.cos_sim(models.embed(auth, r), models.embed(auth, x)) for r, x in zip(recon, Xr)]))
            rows.add(f"{attack}/{kind}", a, len(Xr), cos=cos, srra=metrics.srra(Xr, recon, auth, cfg.kappa),
                     **_image_quality(Xr, recon))
    # attribute estimation runs on the uploaded images themselves
    probe = lab.attribute_probe()
    tags = lab.tags(pairs)
    for kind, imgs in (("clean", X), ("noise", lab.noisy(X)), ("pmt", lab.protect(X, (a,)))):
        acc = float(np.mean([int(np.argmax(attacks.attribute_estimate(probe, x))) == t for x, t in zip(imgs, tags)]))
        cs = float(np.mean([metrics.attribute_cos_sim(probe, x, xt) for x, xt in zip(X, imgs)]))
        rows.add(f"attribute/{kind}", "probe", len(X), attr_acc=acc, attr_cossim=cs)
    return rows.rows


@register("exp-abuse")
def exp_abuse(lab):
    rows = _Rows("exp-abuse")
    pairs = lab.pairs()
    X = [p.image1 for p in pairs]
    names = [e.name for e in lab.cfg.model_entries()]
    _clean_rows(lab, rows, pairs, X, names)
    lab.export("exp-abuse", "original", X)
    for a in lab.cfg.authorized:
        Xt = lab.protect(X, (a.name,))
        lab.export("exp-abuse", f"pmt-{a.name}", Xt)
        for m in names:
            rows.add(f"pmt[{a.name}]", m, len(pairs), acc=lab.accuracy(m, pairs, Xt))
    return rows.rows


@register("exp-scale")
def exp_scale(lab):
    rows = _Rows("exp-scale")
    pairs, X = _eval_set(lab)
    names = [e.name for e in lab.cfg.model_entries()]
    auth = [e.name for e in lab.cfg.authorized]
    subsets = [(n,) for n in auth] + ([tuple(auth)] if len(auth) > 1 else [])
    _clean_rows(lab, rows, pairs, X, names)
    for sub in subsets:
        Xt = lab.protect(X, sub)
        label = "+".join(sub)
        lab.export("exp-scale", f"mr-pmt-{label}", Xt)
        for m in names:
            rows.add(f"mr-pmt[{label}]", m, len(pairs), acc=lab.accuracy(m, pairs, Xt))
    return rows.rows


@register("exp-robust")
def exp_robust(lab):
    rows = _Rows("exp-robust")
    _, X = _eval_set(lab)
    a = lab.cfg.authorized[0].name
    Xt = lab.protect(X, (a,))
    lab.export("exp-robust", "original", X)
    lab.export("exp-robust", f"pmt-{a}", Xt)
    for s in lab.cfg.robust_sigmas:
        for label, other in (("original", X), ("protected", Xt)):
            u, p, t = lab.up(a, X, other, s)
            rows.add(f"{label},sigma={s:g}", a, len(X), up_utility=u, up_privacy=p, up_total=t)
    return rows.rows


@register("exp-ablation")
def exp_ablation(lab):
    rows = _Rows("exp-ablation")
    base = lab.cfg.pmt
    pairs, X = _eval_set(lab)
    a = lab.cfg.authorized[0].name
    unauth = [e.name for e in lab.cfg.unauthorized]
    aug_on = base.augment if not isinstance(base.augment, datagen.NoAugment) else datagen.RandomNoise(0.1)
    ker_on = base.kernel if not isinstance(base.kernel, core.NoneKernel) else core.GaussianKernel(1)
    agg_on = base.aggregate_layers or (2, 5)
    for aug in (False, True):
        for ker in (False, True):
            for agg in (False, True):
                cfg = replace(base, augment=aug_on if aug else datagen.NoAugment(),
                              kernel=ker_on if ker else core.NoneKernel(), aggregate_layers=agg_on if agg else ())
                onoff = lambda b: "on" if b else "off"
                setting = f"augment={onoff(aug)},kernel={onoff(ker)},aggregate={onoff(agg)}"
                Xt = lab.protect(X, (a,), cfg)
                lab.export("exp-ablation", setting.replace(",", "_").replace("=", "-"), Xt)
                u, p, t = lab.up(a, X, Xt)
                rows.add(setting, a, len(pairs), acc=lab.accuracy(a, pairs, Xt), up_utility=u, up_privacy=p, up_total=t)
                for m in unauth:
                    rows.add(setting, m, len(pairs), acc=lab.accuracy(m, pairs, Xt))
    return rows.rows


def run_experiment(cfg: ExperimentConfig, lab: Lab | None = None) -> tuple[list[MetricReport], str]:
    """Run one registered experiment; writes ``<output_dir>/<name>.csv`` and PPM exports."""
    if cfg.name not in EXPERIMENTS:
        raise UnknownExperimentError(f"unknown experiment {cfg.name!r}; known: {', '.join(EXPERIMENTS)}")
    cfg.validate()
    try:
        os.makedirs(cfg.output_dir, exist_ok=True)
    except OSError as err:
        raise OutputError(f"cannot create {cfg.output_dir}: {err}") from None
    if not os.access(cfg.output_dir, os.W_OK):
        raise OutputError(f"output directory {cfg.output_dir} is not writable")
    lab = lab if lab is not None and lab.cfg == cfg else _share(lab, cfg)
    reports = EXPERIMENTS[cfg.name](lab)
    path = emit_report(reports, os.path.join(cfg.output_dir, f"{cfg.name}.csv"))
    return reports, path


def _share(lab, cfg):
    """A Lab for ``cfg`` that reuses another Lab's memo when only name/output differ."""
    new = Lab(cfg)
    if lab is not None and replace(lab.cfg, name=cfg.name, output_dir=cfg.output_dir) == cfg:
        new._models, new._memo = lab._models, lab._memo
    return new
