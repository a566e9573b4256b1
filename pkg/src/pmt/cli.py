"""Command-line front end.

Every subcommand reads an optional JSON config (``--config``) whose top-level
keys are overridden by flags (``--seed``, ``--output-dir``, ``--workers`` and
generic ``--set key=<json>``). Exit codes: 0 success, 2 unknown experiment,
3 unwritable output, 4 config violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import attacks, core, datagen, experiments, metrics, models, nn
from .experiments import ConfigError, HarnessError, Lab, OutputError, TEST_VARIATION_BASE


def _load_config(args, name=None) -> experiments.ExperimentConfig:
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {args.config}: {err}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            raw[key] = json.loads(value)
        except json.JSONDecodeError:
            raw[key] = value
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.output_dir is not None:
        raw["output_dir"] = args.output_dir
    if args.workers is not None:
        raw["workers"] = args.workers
    if name is not None:
        raw["name"] = name
    return experiments.config_from_dict(raw)


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as err:
        raise OutputError(f"cannot create {path}: {err}") from None
    if not os.access(path, os.W_OK):
        raise OutputError(f"{path} is not writable")
    return path


def _write(path, writer):
    try:
        writer(path)
    except OSError as err:
        raise OutputError(f"cannot write {path}: {err}") from None
    return path


def _read_image(path):
    try:
        img = datagen.read_ppm(path)
    except (OSError, datagen.PPMError) as err:
        raise ConfigError(f"cannot read image {path}: {err}") from None
    if img.shape != (3, datagen.SIZE, datagen.SIZE):
        raise ConfigError(f"image {path} has shape {img.shape}, expected (3, {datagen.SIZE}, {datagen.SIZE})")
    return img


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    cfg = _load_config(args)
    lab = Lab(cfg)
    root = _ensure_dir(os.path.join(cfg.output_dir, "data"))
    try:
        train = datagen.export_dataset(os.path.join(root, "train"), lab.victim_ids, range(cfg.renders))
        test = datagen.export_dataset(
            os.path.join(root, "test"), lab.victim_ids, range(TEST_VARIATION_BASE, TEST_VARIATION_BASE + cfg.renders)
        )
    except OSError as err:
        raise OutputError(str(err)) from None
    print(f"wrote {len(train)} training and {len(test)} test images under {root}")


def cmd_train(args):
    cfg = _load_config(args)
    lab = Lab(replace(cfg, models_dir=None))
    out = _ensure_dir(os.path.join(cfg.output_dir, "models"))
    names = args.model or [e.name for e in cfg.model_entries()]
    for name in names:
        m = lab.model(name)
        path = _write(os.path.join(out, f"{name}.pmtw"), lambda p: models.save_model(m, p))
        print(f"{name}: {m.n_params()} parameters, final loss {m.history[-1]:.6g} -> {path}")


def _shallows(lab, names):
    return [lab.shallow(n) for n in names]


def cmd_protect(args):
    cfg = _load_config(args)
    lab = Lab(cfg)
    names = args.model or [cfg.authorized[0].name]
    x = _read_image(args.input)
    result = core.pmt_protect_multi(x, _shallows(lab, names), replace(cfg.pmt, seed=cfg.seed))
    _write(args.output, lambda p: datagen.write_ppm(p, result.image))
    if args.features:
        named = [(f"feature.{n}", z) for n, z in zip(names, result.features)]
        _write(args.features, lambda p: open(p, "wb").write(models.serialize_tensors(named)))
    print(f"ssim(obfuscated, original) = {metrics.ssim(result.image, x):.6g}; final loss {result.losses[-1]:.6g}"
          if result.losses else "no iterations run")


def _read_feature(path):
    try:
        with open(path, "rb") as fh:
            tensors = models.deserialize_tensors(fh.read())
    except (OSError, models.WeightFormatError) as err:
        raise ConfigError(f"cannot read features {path}: {err}") from None
    if not tensors:
        raise ConfigError(f"{path} holds no tensors")
    return tensors[0][1]


def cmd_attack(args):
    cfg = _load_config(args)
    lab = Lab(cfg)
    name = args.model or cfg.authorized[0].name
    if args.features:
        z = _read_feature(args.features)
    elif args.input:
        z = nn.model_forward(lab.shallow(name), _read_image(args.input))
    else:
        raise ConfigError("attack needs --features or --input")
    try:
        if args.method == "whitebox":
            recon = attacks.whitebox_reconstruct(z, lab.shallow(name), replace(cfg.attack, seed=cfg.seed))
        else:
            recon = attacks.modelbased_reconstruct(lab.decoder(name), z)
    except nn.ShapeError as err:
        raise ConfigError(str(err)) from None
    _write(args.output, lambda p: datagen.write_ppm(p, recon))
    print(f"wrote {args.output}")


def cmd_eval(args):
    cfg = _load_config(args)
    a, b = _read_image(args.original), _read_image(args.candidate)
    values = {"ssim": metrics.ssim(b, a), "psnr": metrics.psnr(b, a)}
    if args.model:
        m = Lab(cfg).model(args.model)
        values["cos"] = metrics.cos_sim(models.embed(m, b), models.embed(m, a))
    for k, v in values.items():
        print(f"{k},{experiments.format_value(v)}")


def cmd_exp(args):
    cfg = _load_config(args, name=args.name)
    _, path = experiments.run_experiment(cfg)
    print(path)


def cmd_report(args):
    cfg = _load_config(args)
    paths = [os.path.join(cfg.output_dir, f"{n}.csv") for n in experiments.EXPERIMENTS]
    paths = [p for p in paths if os.path.exists(p)]
    if not paths:
        raise ConfigError(f"no experiment CSVs in {cfg.output_dir}")
    header = ",".join(experiments.COLUMNS)
    body = []
    for p in paths:
        with open(p) as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != header:
            raise ConfigError(f"{p} does not have the report header")
        body.extend(lines[1:])
    text = "\n".join([header] + body) + "\n"
    _write(os.path.join(cfg.output_dir, "report.csv"), lambda p: open(p, "w").write(text))
    sys.stdout.write(text)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--workers", type=int)
    common.add_argument("--set", action="append", metavar="KEY=JSON", help="override a top-level config key")

    p = argparse.ArgumentParser(prog="pmt", description="Privacy-preserving feature obfuscation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="export the synthetic dataset as PPM files").set_defaults(
        fn=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train recognizers and save .pmtw weights")
    s.add_argument("--model", action="append", help="model name (repeatable; default all)")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("protect", parents=[common], help="obfuscate one PPM image")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--model", action="append", help="authorized model (repeatable for multi-model)")
    s.add_argument("--features", help="also write the shallow features as a tensor file")
    s.set_defaults(fn=cmd_protect)

    s = sub.add_parser("attack", parents=[common], help="reconstruct an image from shallow features")
    s.add_argument("--method", choices=("whitebox", "decoder"), default="whitebox")
    s.add_argument("--features", help="tensor file written by protect")
    s.add_argument("--input", help="image whose features are attacked")
    s.add_argument("--model")
    s.add_argument("--output", required=True)
    s.set_defaults(fn=cmd_attack)

    s = sub.add_parser("eval", parents=[common], help="compare two PPM images")
    s.add_argument("--original", required=True)
    s.add_argument("--candidate", required=True)
    s.add_argument("--model", help="also report embedding cosine under this model")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("exp", parents=[common], help="run a registered experiment")
    s.add_argument("name")
    s.set_defaults(fn=cmd_exp)

    sub.add_parser("report", parents=[common], help="merge experiment CSVs into report.csv").set_defaults(
        fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except HarnessError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
