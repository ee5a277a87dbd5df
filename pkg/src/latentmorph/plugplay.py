"""Test-time refinement of frozen checkpoints and the generator-free EBM variant."""

import csv

import numpy as np

from .errors import PreconditionError
from .morphing import morph
from .networks import DeepKernel


def kernel_from_discriminator(d):
    """Kernel exp(-||d(x) - d(y)||^2) from any data-space network, scalar outputs included."""
    return DeepKernel(d)


def draw_latents(n, latent_dim, seed):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(int(n), int(latent_dim)))


def refine(ckpt, morph_config, data, n, seed=None, latents=None):
    """Morph ``n`` uniform latents with the checkpoint's kernel and return g(z).

    Nothing in ``ckpt`` is modified.  Returns ``(samples, trajectory)``.
    """
    if ckpt.generator is None:
        raise PreconditionError("refine needs a checkpoint with a generator")
    seed = morph_config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    z = draw_latents(n, ckpt.latent_dim, rng) if latents is None else np.array(latents, dtype=np.float64)
    kernel = kernel_from_discriminator(ckpt.features)
    z, traj = morph(z, morph_config, ckpt.generator, kernel, data, rng=rng, diagnostics=False)
    return ckpt.generator.apply(z), traj


def default_init_points(n, bounds=((-3.0, 3.0), (-3.0, 3.0)), seed=0):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo = np.array([b[0] for b in bounds], dtype=np.float64)
    hi = np.array([b[1] for b in bounds], dtype=np.float64)
    return lo + (hi - lo) * rng.uniform(size=(int(n), len(bounds)))


def ebm_morph(feature_net, data, init_points, morph_config, rng=None, diagnostics=False):
    """Morph data-space particles under E(x) = -log mean K(x, x'), i.e. g = identity."""
    kernel = kernel_from_discriminator(feature_net)
    points, _ = morph(
        init_points, morph_config, None, kernel, data, rng=rng, diagnostics=diagnostics
    )
    return points


def write_samples(samples, path):
    samples = np.asarray(samples, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["particle"] + [f"dim{k}" for k in range(samples.shape[1])])
        for i, row in enumerate(samples):
            w.writerow([i] + [repr(float(v)) for v in row])
