"""Command-line entry point: ``latentmorph {train,eval,refine,morph,gradcheck}``.

Config files are TOML.  Top-level keys describe the run, ``[train]`` holds
:class:`TrainConfig` fields and ``[morph]`` holds :class:`MorphConfig` fields::

    target = "eight"            # preset name, or mixture_file = "mix.json"
    n_data = 512
    n_samples = 1000
    checkpoint = "run/checkpoint.lmck"
    seed = 0

    [train]
    iterations = 5000

    [morph]
    functional = "kl"
    steps = 30

Exit codes: 0 success, 1 usage or config error, 2 runtime or numeric error.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import gradcheck
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, LatentMorphError, TrainingDiverged
from .evaluation import eval_model
from .morphing import FUNCTIONALS, MorphConfig, morph
from .plugplay import (
    default_init_points,
    draw_latents,
    kernel_from_discriminator,
    refine,
    write_samples,
)
from .targets import GaussianMixture2D, mode_coverage, preset, sample_mixture
from .training import TrainConfig, train, write_metrics

log = logging.getLogger("latentmorph")

CHECKPOINT_NAME = "checkpoint.lmck"


@dataclass
class RunConfig:
    command: str
    out: str = "out"
    seed: int = 0
    target: str = "eight"
    mixture_file: str = None
    n_data: int = 512
    n_samples: int = 1000
    checkpoint: str = None
    train: TrainConfig = field(default_factory=TrainConfig)
    morph: MorphConfig = field(default_factory=MorphConfig)

    def mixture(self):
        if self.mixture_file is not None:
            if not os.path.isfile(self.mixture_file):
                raise ConfigError(f"mixture file not found: {self.mixture_file}")
            return GaussianMixture2D.from_file(self.mixture_file)
        return preset(self.target)

    def dataset(self):
        return sample_mixture(self.mixture(), self.n_data, np.random.default_rng([self.seed, 3]))


TOP_KEYS = {"target", "mixture_file", "n_data", "n_samples", "checkpoint", "seed", "out"}
MORPH_KEYS = {f.name for f in fields(MorphConfig)}


def _check_keys(table, allowed, where):
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown config key {where}{key!r}")


def read_config_file(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}")
    _check_keys(raw, TOP_KEYS | {"train", "morph"}, "")
    for name in ("train", "morph"):
        if name in raw and not isinstance(raw[name], dict):
            raise ConfigError(f"config key {name!r} must be a table")
    _check_keys(raw.get("train", {}), TrainConfig.field_names(), "train.")
    _check_keys(raw.get("morph", {}), MORPH_KEYS, "morph.")
    return raw


def build_config(args):
    raw = read_config_file(args.config) if args.config else {}
    top = {k: v for k, v in raw.items() if k in TOP_KEYS}
    if args.seed is not None:
        top["seed"] = args.seed
    if args.out is not None:
        top["out"] = args.out
    if getattr(args, "checkpoint", None) is not None:
        top["checkpoint"] = args.checkpoint
    seed = int(top.get("seed", 0))
    tcfg = dict(raw.get("train", {}))
    mcfg = dict(raw.get("morph", {}))
    if args.seed is not None or "seed" not in tcfg:
        tcfg["seed"] = seed
    if args.seed is not None or "seed" not in mcfg:
        mcfg["seed"] = seed
    if args.steps is not None:
        mcfg["steps"] = args.steps
    if args.functional is not None:
        mcfg["functional"] = args.functional
    try:
        return RunConfig(command=args.command, train=TrainConfig(**tcfg), morph=MorphConfig(**mcfg), **top)
    except TypeError as exc:
        raise ConfigError(str(exc))


def _need_checkpoint(cfg):
    if cfg.checkpoint is None:
        raise ConfigError("this command needs a checkpoint (config key 'checkpoint' or --checkpoint)")
    if not os.path.isfile(cfg.checkpoint):
        raise ConfigError(f"checkpoint not found: {cfg.checkpoint}")
    return load_checkpoint(cfg.checkpoint)


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    try:
        result = train(cfg.train, cfg.dataset())
    except TrainingDiverged as exc:
        save_checkpoint(exc.checkpoint, os.path.join(cfg.out, "last_good.lmck"))
        raise
    ckpt = result.checkpoint
    ckpt.metadata["target"] = cfg.mixture().to_dict()
    save_checkpoint(ckpt, os.path.join(cfg.out, CHECKPOINT_NAME))
    write_metrics(result.metrics, os.path.join(cfg.out, "metrics.csv"))
    print(f"trained {cfg.train.iterations} iterations -> {os.path.join(cfg.out, CHECKPOINT_NAME)}")
    return 0


def cmd_eval(cfg):
    ckpt = _need_checkpoint(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    report = eval_model(ckpt, cfg.mixture(), cfg.morph, n=cfg.n_samples, seed=cfg.seed, data=cfg.dataset())
    report.write(cfg.out)
    for steps in report.steps:
        c = report.coverage[steps]
        print(f"steps={steps}: modes {c.modes_captured}/{len(c.per_mode_fraction)}, "
              f"high quality {c.high_quality_fraction:.3f}, mmd2 {report.mmd2[steps]:.4g}")
    return 0


def cmd_refine(cfg):
    ckpt = _need_checkpoint(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    mix, data = cfg.mixture(), cfg.dataset()
    z = draw_latents(cfg.n_samples, ckpt.latent_dim, [cfg.seed, 4])
    before = ckpt.generator.apply(z) if ckpt.generator is not None else None
    after, _ = refine(ckpt, cfg.morph, data, cfg.n_samples, latents=z)
    write_samples(after, os.path.join(cfg.out, "refined_samples.csv"))
    cov = {"before": mode_coverage(before, mix).to_dict(), "after": mode_coverage(after, mix).to_dict()}
    _write_json(cov, os.path.join(cfg.out, "refine_coverage.json"))
    print(f"modes {cov['before']['modes_captured']} -> {cov['after']['modes_captured']}")
    return 0


def cmd_morph(cfg):
    ckpt = _need_checkpoint(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    mcfg = MorphConfig(**dict(asdict(cfg.morph), record=True))
    data = cfg.dataset()
    rng = np.random.default_rng(mcfg.seed)
    if ckpt.generator is None:
        start = default_init_points(cfg.n_samples, seed=[cfg.seed, 5])
    else:
        start = draw_latents(cfg.n_samples, ckpt.latent_dim, [cfg.seed, 4])
    kernel = kernel_from_discriminator(ckpt.features)
    _, traj = morph(start, mcfg, ckpt.generator, kernel, data, rng=rng)
    traj.write_csv(os.path.join(cfg.out, "trajectory.csv"))
    traj.write_diagnostics(os.path.join(cfg.out, "diagnostics.json"))
    print(f"morphed {cfg.n_samples} particles for {mcfg.steps} steps")
    return 0


def cmd_gradcheck(cfg=None):
    results = gradcheck.run_all()
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return 2
    print(f"all {len(results)} checks passed")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "refine": cmd_refine,
    "morph": cmd_morph,
    "gradcheck": cmd_gradcheck,
}


def make_parser():
    parser = argparse.ArgumentParser(prog="latentmorph", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "gradcheck":
            continue
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--steps", type=int, help="morph step override")
        p.add_argument("--functional", choices=FUNCTIONALS, help="morph functional override")
        if name != "train":
            p.add_argument("--checkpoint", help="checkpoint file to read")
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck()
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LatentMorphError, ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
