"""Latent-distribution morphing with interacting particles.

Every rule moves a particle down the gradient of a scalar potential built from
two kernel sums evaluated at g(z):

    data sum  S_q(z) = sum_i K(g(z), x'_i)
    peer sum  S_r(z) = sum_{i != self} K(g(z), g(z_i))

========  ==========================================================
langevin  -log S_q                       (plus N(0, 2*lambda) noise)
kl        -log S_q + log S_r
rkl       -S_q / S_r
sh        -sqrt(S_q / S_r)
js        -1/2 * (log(S_r + alpha * S_q) - log(2 * S_r))
========  ==========================================================

Both sums are accumulated in log space.  Peers are a frozen snapshot of the
pre-step configuration, so all particles move simultaneously.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .divergences import FDivergence, f_value
from .errors import ConfigError, NumericError, PreconditionError
from .networks import generate

FUNCTIONALS = ("langevin", "kl", "rkl", "js", "sh")


def _rule_langevin(lq, lr, alpha):
    return -lq


def _rule_kl(lq, lr, alpha):
    return lr - lq


def _rule_rkl(lq, lr, alpha):
    return -ad.exp(lq - lr)


def _rule_sh(lq, lr, alpha):
    return -ad.exp(0.5 * (lq - lr))


def _rule_js(lq, lr, alpha):
    mixed = ad.logsumexp(ad.stack([lr, lq + math.log(alpha)], axis=-1), axis=-1)
    return -0.5 * (mixed - (lr + math.log(2.0)))


# Potential of each particle given log S_q, log S_r (per-particle vectors).
RULES = {
    "langevin": _rule_langevin,
    "kl": _rule_kl,
    "rkl": _rule_rkl,
    "sh": _rule_sh,
    "js": _rule_js,
}


def parse_functional(name):
    name = str(name.value if isinstance(name, FDivergence) else name).lower()
    if name not in FUNCTIONALS:
        raise ConfigError(f"unknown functional {name!r}; expected one of {list(FUNCTIONALS)}")
    return name


@dataclass
class MorphConfig:
    functional: str = "kl"
    step_size: float = 0.05
    steps: int = 30
    seed: int = 0
    js_alpha: float = 1.0
    noise_scale: float = 1.0
    clip_norm: float = 10.0
    batch_size: int = 512
    record: bool = False

    def __post_init__(self):
        self.functional = parse_functional(self.functional)
        if not self.step_size > 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ConfigError(f"steps must be a non-negative integer, got {self.steps}")
        self.steps = int(self.steps)
        if not self.js_alpha > 0:
            raise ConfigError(f"js_alpha must be > 0, got {self.js_alpha}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class Trajectory:
    snapshots: list = field(default_factory=list)
    divergence: list = field(default_factory=list)
    mean_grad_norm: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            dim = self.snapshots[0].shape[1] if self.snapshots else 0
            w.writerow(["step", "particle"] + [f"dim{k}" for k in range(dim)])
            for step, snap in enumerate(self.snapshots):
                for i, row in enumerate(snap):
                    w.writerow([step, i] + [repr(float(v)) for v in row])

    def write_diagnostics(self, path):
        with open(path, "w") as fh:
            json.dump(
                {"divergence": self.divergence, "mean_grad_norm": self.mean_grad_norm},
                fh,
                indent=2,
            )
            fh.write("\n")


def _check_data(data_batch):
    data_batch = np.asarray(data_batch, dtype=np.float64)
    if data_batch.ndim != 2 or data_batch.shape[0] == 0:
        raise PreconditionError("data batch must be a non-empty [m, d] array")
    return data_batch


def log_kernel_sums(z, kernel, generator, data_batch, peers=None, with_peers=True):
    """Per-particle (log S_q, log S_r) as tensors; differentiable w.r.t. ``z``.

    With ``peers=None`` the peer set is ``z`` itself minus the particle.
    """
    feat = kernel.embed(generate(generator, z))
    data_feat = kernel.embed(data_batch).data
    log_q = ad.logsumexp(-ad.sqdist(feat, data_feat), axis=1)
    if not with_peers:
        return log_q, None
    if peers is None:
        n = feat.shape[0]
        if n < 2:
            raise PreconditionError("interacting rules need at least 2 particles")
        peer_feat = feat.data
        mask = ~np.eye(n, dtype=bool)
    else:
        peers = np.asarray(peers, dtype=np.float64)
        if peers.ndim != 2 or peers.shape[0] == 0:
            raise PreconditionError("interacting rules need at least one peer")
        peer_feat = kernel.embed(generate(generator, peers)).data
        mask = None
    log_r = ad.logsumexp(-ad.sqdist(feat, peer_feat), axis=1, mask=mask)
    return log_q, log_r


def particle_potentials(functional, z, kernel, generator, data_batch, peers=None, js_alpha=1.0):
    functional = parse_functional(functional)
    log_q, log_r = log_kernel_sums(
        z, kernel, generator, data_batch, peers, with_peers=functional != "langevin"
    )
    return RULES[functional](log_q, log_r, js_alpha)


def update_gradients(functional, particles, data_batch, generator, kernel, js_alpha=1.0, peers=None):
    """Gradient of each particle's potential w.r.t. that particle, shape [n, d].

    Unclipped; :func:`morph_step` applies the norm clip.
    """
    functional = parse_functional(functional)
    data_batch = _check_data(data_batch)
    particles = np.asarray(particles, dtype=np.float64)
    with ad.Tape() as tape:
        z = tape.watch(particles)
        pot = particle_potentials(functional, z, kernel, generator, data_batch, peers, js_alpha)
        total = pot.sum()
    grads = ad.backward(tape, total)[z]
    bad = ~np.isfinite(grads).all(axis=1)
    if bad.any() or not np.all(np.isfinite(pot.data)):
        idx = int(np.flatnonzero(bad)[0]) if bad.any() else int(np.flatnonzero(~np.isfinite(pot.data))[0])
        raise NumericError(
            f"{functional} update is non-finite for particle {idx} "
            f"(potential={pot.data[idx]!r}); kernel sums vanished or overflowed"
        )
    return grads


def update_gradient(functional, z, peers, data_batch, generator, kernel, js_alpha=1.0):
    """Update direction for a single particle ``z`` against explicit ``peers``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return update_gradients(functional, z, data_batch, generator, kernel, js_alpha, peers=peers)[0]


def clip_rows(v, max_norm):
    if max_norm is None:
        return v
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    scale = np.where(norms > max_norm, max_norm / np.maximum(norms, 1e-300), 1.0)
    return v * scale


def morph_step(particles, config, generator, kernel, data_batch, rng=None, grads=None):
    """One synchronous step z <- z - lambda * grad (Langevin adds sqrt(2 lambda) noise)."""
    particles = np.asarray(particles, dtype=np.float64)
    if grads is None:
        grads = update_gradients(
            config.functional, particles, data_batch, generator, kernel, config.js_alpha
        )
    out = particles - config.step_size * clip_rows(grads, config.clip_norm)
    if config.functional == "langevin" and config.noise_scale:
        if rng is None:
            raise PreconditionError("Langevin steps need an rng")
        noise = rng.standard_normal(particles.shape)
        out = out + config.noise_scale * math.sqrt(2.0 * config.step_size) * noise
    return out


def divergence_estimate(functional, particles, reference_batch, generator, kernel):
    """Plug-in D_f(r || q) = mean_j (q_j / r_j) f(r_j / q_j) from kernel density estimates.

    r_j is the leave-one-out mean kernel over peers, q_j the mean kernel over the
    reference data batch.  Langevin reports the KL estimate.
    """
    functional = parse_functional(functional)
    n, m = len(particles), len(reference_batch)
    log_q, log_r = log_kernel_sums(particles, kernel, generator, reference_batch)
    log_u = (log_r.data - math.log(n - 1)) - (log_q.data - math.log(m))
    if functional in ("langevin", "kl"):
        return float(np.mean(log_u))
    log_u = np.clip(log_u, -700.0, 700.0)
    u = np.exp(log_u)
    return float(np.mean(f_value(functional, u) / u))


def as_sampler(data, batch_size=512):
    """Turn an array, a Dataset-like object or a callable into ``rng -> batch``."""
    if callable(data) and not hasattr(data, "batch"):
        return data
    if hasattr(data, "batch"):
        return data.batch
    points = _check_data(data)

    def sample(rng):
        if len(points) <= batch_size:
            return points
        idx = rng.choice(len(points), size=batch_size, replace=False)
        return points[np.sort(idx)]

    return sample


def morph(particles, config, generator, kernel, data, rng=None, diagnostics=True):
    """Run ``config.steps`` morph steps, drawing a fresh data batch each step.

    Returns the final particles and a :class:`Trajectory`.  The divergence
    diagnostic is always measured against the first batch drawn, so it is
    comparable across steps.
    """
    particles = np.array(particles, dtype=np.float64)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    sampler = as_sampler(data, config.batch_size)
    traj = Trajectory()
    if config.record:
        traj.snapshots.append(particles.copy())
    reference = None
    interacting = config.functional != "langevin" or diagnostics
    if interacting and len(particles) < 2:
        raise PreconditionError("morphing needs at least 2 particles")

    for step in range(config.steps + 1):
        batch = _check_data(sampler(rng)) if step < config.steps or diagnostics else None
        if reference is None:
            reference = batch
        grads = None
        if step < config.steps or diagnostics:
            try:
                grads = update_gradients(
                    config.functional, particles, batch, generator, kernel, config.js_alpha
                )
            except NumericError as exc:
                raise NumericError(f"morph step {step}: {exc}") from exc
        if diagnostics:
            traj.divergence.append(
                divergence_estimate(config.functional, particles, reference, generator, kernel)
            )
            traj.mean_grad_norm.append(float(np.mean(np.linalg.norm(grads, axis=1))))
        if step == config.steps:
            break
        particles = morph_step(particles, config, generator, kernel, batch, rng, grads=grads)
        if config.record:
            traj.snapshots.append(particles.copy())
    return particles, traj


def config_dict(config):
    return asdict(config)
