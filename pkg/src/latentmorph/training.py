"""Alternating kernel / generator training."""

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import losses
from .checkpoint import Checkpoint
from .divergences import FDivergence
from .errors import ConfigError, TrainingDiverged
from .morphing import MorphConfig, morph, parse_functional
from .networks import DeepKernel, MlpParams, MlpSpec, feature_spec, generator_spec
from .targets import Dataset

log = logging.getLogger(__name__)

# fp: grad L_kde + beta * grad D_f;  divergence: beta * grad D_f alone;
# mmd_critic: ascend MMD^2 between generated and real samples (GAN-style baseline)
KERNEL_LOSSES = ("fp", "divergence", "mmd_critic")

METRIC_FIELDS = ("iter", "loss_kde", "kl_grad_norm", "mmd2", "gen_grad_norm", "wallclock_ms")


@dataclass
class TrainConfig:
    batch_size: int = 128
    kernel_lr: float = 1e-4
    generator_lr: float = 5e-3
    alpha: float = 1.0
    beta: float = 1.0
    morph_steps: int = 5
    morph_functional: str = "kl"
    morph_step_size: float = 0.05
    iterations: int = 3000
    kernel_divergence: str = "kl"
    kernel_loss: str = "fp"
    generator_loss: str = "mmd"
    latent_dim: int = 2
    data_dim: int = 2
    hidden: int = 16
    depth: int = 2
    feature_dim: int = 16
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    variational_lr: float = 1e-3
    seed: int = 0
    timing: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        for name in ("kernel_lr", "generator_lr", "morph_step_size", "variational_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("alpha", "beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.morph_steps < 0 or self.iterations < 0:
            raise ConfigError("morph_steps and iterations must be >= 0")
        self.morph_functional = parse_functional(self.morph_functional)
        self.kernel_divergence = FDivergence.parse(self.kernel_divergence).value
        if self.kernel_loss not in KERNEL_LOSSES:
            raise ConfigError(f"kernel_loss must be one of {list(KERNEL_LOSSES)}, got {self.kernel_loss!r}")
        if self.generator_loss not in ("mmd", "nll"):
            raise ConfigError(f"generator_loss must be 'mmd' or 'nll', got {self.generator_loss!r}")

    @classmethod
    def field_names(cls):
        return {f.name for f in fields(cls)}


BASELINE = dict(kernel_loss="divergence", morph_steps=0, generator_lr=1e-3)


def baseline_config(**overrides):
    """Handicapped GAN-style baseline: MMD generator loss, no morphing, no L_kde.

    The kernel still learns from the divergence term so a trained kernel exists
    for plug-and-play refinement; the generator runs 5x slower than the full method.
    """
    return TrainConfig(**dict(BASELINE, **overrides))


class Adam:
    """Adam over a list of ``[W, b]`` layers."""

    def __init__(self, lr, beta1=0.5, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, layers, grads):
        flat_p = [a for layer in layers for a in layer]
        flat_g = [a for layer in grads for a in layer]
        if self.m is None:
            self.m = [np.zeros_like(p) for p in flat_p]
            self.v = [np.zeros_like(p) for p in flat_p]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = []
        for i, (p, g) in enumerate(zip(flat_p, flat_g)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            out.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return [[out[2 * i], out[2 * i + 1]] for i in range(len(layers))]


def init_checkpoint(config):
    rng = np.random.default_rng([config.seed, 0])
    gen = MlpParams.init(
        generator_spec(config.latent_dim, config.data_dim, config.hidden, config.depth), rng
    )
    feat = MlpParams.init(
        feature_spec(config.data_dim, config.feature_dim, config.hidden, config.depth), rng
    )
    return Checkpoint(gen, feat, config.latent_dim, {"iterations": 0, "seed": config.seed, "config": asdict(config)})


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list


def _finite(*values):
    return all(math.isfinite(v) for v in values)


def train(config, data, checkpoint=None, callback=None):
    """Train generator and kernel on ``data`` (array or :class:`Dataset`).

    Per iteration: uniform latents, optional morphing, one kernel step, one
    generator step.  Deterministic given ``config.seed``.
    """
    dataset = data if isinstance(data, Dataset) else Dataset(data)
    ckpt = init_checkpoint(config) if checkpoint is None else checkpoint.copy()
    if config.iterations == 0:
        return TrainResult(ckpt, [])
    if len(dataset) < config.batch_size:
        raise ConfigError(
            f"dataset has {len(dataset)} points, fewer than batch_size {config.batch_size}"
        )
    rng = np.random.default_rng([config.seed, 1])
    gen, feat = ckpt.generator, ckpt.features
    opt_k = Adam(config.kernel_lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    opt_g = Adam(config.generator_lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    morph_cfg = MorphConfig(
        functional=config.morph_functional,
        step_size=config.morph_step_size,
        steps=config.morph_steps,
    )
    kind = FDivergence.parse(config.kernel_divergence)
    vnet = None
    if config.kernel_loss != "mmd_critic" and kind is not FDivergence.KL and config.beta > 0:
        vspec = MlpSpec((config.data_dim, config.hidden, 1), ("tanh",))
        vnet = MlpParams.init(vspec, np.random.default_rng([config.seed, 2]))
    n = config.batch_size
    points = dataset.points
    metrics = []
    t0 = time.perf_counter()

    for it in range(1, config.iterations + 1):
        z = rng.uniform(-1.0, 1.0, size=(n, config.latent_dim))
        pick = rng.choice(len(points), size=min(2 * n, len(points)), replace=False)
        ref_batch = points[pick[:n]]
        real_batch = points[pick[n:]] if len(pick) >= 2 * n else points[pick[:n]]
        kernel = DeepKernel(feat)
        if config.morph_steps > 0:
            z, _ = morph(z, morph_cfg, gen, kernel, dataset, rng=rng, diagnostics=False)

        if config.kernel_loss != "mmd_critic":
            v_fn = None
            if vnet is not None:
                xg = gen.apply(z)
                vnet = losses.variational_step(kind, vnet, (real_batch, xg), config.variational_lr)
                v_fn = lambda zz, _v=vnet: _v.apply(gen.apply(zz))
            k_grads, loss_kde, div_norm = losses.combined_kernel_grad(
                z, real_batch, ref_batch, gen, kernel, config.alpha, config.beta, kind, v_fn,
                with_kde=config.kernel_loss == "fp",
            )
        else:
            # critic ascends MMD^2 between generated and real samples
            xg = gen.apply(z)

            def critic(layers):
                fx = losses.mlp_forward(feat.spec, layers, xg)
                fy = losses.mlp_forward(feat.spec, layers, ref_batch)
                return -losses.mmd2_tensor(fx, fy)

            _, (k_grads,) = losses.ad.value_and_grad(critic, feat.layers)
            loss_kde, div_norm = float("nan"), losses.grad_norm(k_grads)
        feat = feat.with_layers(opt_k.step(feat.layers, k_grads))
        kernel = DeepKernel(feat)

        if config.generator_loss == "mmd":
            mmd2, g_grads = losses.generator_grad(z, ref_batch, gen, kernel)
            mmd2 += float(np.exp(-losses.ad.sqdist(kernel.features.apply(ref_batch), kernel.features.apply(ref_batch)).data).mean())
        else:
            g_grads = losses.nll_generator_grad(z, ref_batch, gen, kernel)
            mmd2 = losses.mmd2_vstat(gen.apply(z), ref_batch, kernel)
        gen_norm = losses.grad_norm(g_grads)
        new_gen = gen.with_layers(opt_g.step(gen.layers, g_grads))

        row = {
            "iter": it,
            "loss_kde": loss_kde,
            "kl_grad_norm": div_norm,
            "mmd2": mmd2,
            "gen_grad_norm": gen_norm,
            "wallclock_ms": (time.perf_counter() - t0) * 1000.0 if config.timing else None,
        }
        values = [v for k, v in row.items() if k in ("kl_grad_norm", "mmd2", "gen_grad_norm")]
        if config.kernel_loss == "fp":
            values.append(loss_kde)
        if not _finite(*values) or not np.all(np.isfinite(feat.flat())) or not np.all(np.isfinite(new_gen.flat())):
            ckpt.metadata["iterations"] = it - 1
            raise TrainingDiverged(it, ckpt)
        gen = new_gen
        metrics.append(row)
        ckpt = Checkpoint(gen, feat, config.latent_dim, dict(ckpt.metadata, iterations=it))
        if callback is not None:
            callback(it, ckpt, row)
    return TrainResult(ckpt, metrics)


def write_metrics(metrics, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for row in metrics:
            w.writerow(["" if row[k] is None else (row[k] if k == "iter" else repr(float(row[k]))) for k in METRIC_FIELDS])
