"""Finite-difference and conjugate oracles, runnable as one report.

The reference potentials here are written with plain numpy loops and do not
touch the autodiff tape, so they check both the calculus and the rule table.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses
from .divergences import FDivergence, f_conjugate, numeric_conjugate, f_value
from .morphing import FUNCTIONALS, update_gradients
from .networks import DeepKernel, MlpParams, MlpSpec, mlp_forward

KINK_MARGIN = 1e-3


def naive_mlp(params, x):
    h = np.asarray(x, dtype=np.float64)
    n = len(params.layers)
    for i, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if i < n - 1:
            h = np.tanh(h) if params.spec.activations[i] == "tanh" else np.maximum(h, 0.0)
    return h


def relu_margin(params, x):
    """Smallest |pre-activation| feeding a relu; finite differences are unreliable near 0."""
    h = np.asarray(x, dtype=np.float64)
    margin = np.inf
    for i, (w, b) in enumerate(params.layers[:-1]):
        pre = h @ w + b
        if params.spec.activations[i] == "relu":
            margin = min(margin, float(np.min(np.abs(pre))))
            h = np.maximum(pre, 0.0)
        else:
            h = np.tanh(pre)
    return margin


def naive_kernel(features, x, y):
    fx = naive_mlp(features, x[None, :])[0]
    fy = naive_mlp(features, y[None, :])[0]
    return math.exp(-math.fsum((fx - fy) ** 2))


def reference_potential(functional, z, peers, data, generator, features, js_alpha=1.0):
    """Scalar potential of one particle, straight from the rule table."""
    gz = z[None, :] if generator is None else naive_mlp(generator, z[None, :])
    gz = gz[0]
    s_q = math.fsum(naive_kernel(features, gz, x) for x in data)
    if functional == "langevin":
        return -math.log(s_q)
    gp = peers if generator is None else naive_mlp(generator, peers)
    s_r = math.fsum(naive_kernel(features, gz, p) for p in gp)
    if functional == "kl":
        return -math.log(s_q) + math.log(s_r)
    if functional == "rkl":
        return -s_q / s_r
    if functional == "sh":
        return -math.sqrt(s_q / s_r)
    if functional == "js":
        return -0.5 * (math.log(s_r + js_alpha * s_q) - math.log(2.0 * s_r))
    raise ValueError(functional)


def random_instance(rng, n=4, m=4, d=2, hidden=8, feat=4):
    """Random nets, latents and data, redrawn until no relu sits at a kink."""
    while True:
        gen = MlpParams.init(MlpSpec((d, hidden, d), ("tanh",)), rng)
        features = MlpParams.init(MlpSpec((d, hidden, feat), ("relu",)), rng)
        z = rng.uniform(-1.0, 1.0, size=(n, d))
        data = rng.normal(size=(m, d))
        if relu_margin(features, np.vstack([naive_mlp(gen, z), data])) > KINK_MARGIN:
            return z, data, gen, features


def rule_fd_error(functional, rng, h=1e-5, **shape):
    """Max relative error over particles between update_gradients and FD of the reference potential."""
    z, data, gen, features = random_instance(rng, **shape)
    grads = update_gradients(functional, z, data, gen, DeepKernel(features))
    worst = 0.0
    for j in range(len(z)):
        peers = np.delete(z, j, axis=0)
        fd = ad.finite_diff(
            lambda p: reference_potential(functional, p, peers, data, gen, features), z[j], h
        )
        worst = max(worst, ad.rel_error(grads[j], fd))
    return worst


def conjugate_error(kind, rng, count=50):
    kind = FDivergence.parse(kind)
    lo, hi = {
        FDivergence.KL: (-5.0, 5.0),
        FDivergence.REVERSE_KL: (-5.0, -0.01),
        FDivergence.JENSEN_SHANNON: (-5.0, math.log(2.0) - 0.01),
        FDivergence.SQUARED_HELLINGER: (-5.0, 0.9),
    }[kind]
    ts = rng.uniform(lo, hi, size=count)
    return max(abs(f_conjugate(kind, t) - numeric_conjugate(kind, t)) for t in ts)


def _flat_layers(layers):
    return np.concatenate([a.reshape(-1) for layer in layers for a in layer])


def _fd_over_params(params, scalar_of_params, h=1e-5):
    base = params.flat()
    return ad.finite_diff(lambda v: scalar_of_params(params.from_flat(v)), base, h)


def kl_cross_check_error(rng):
    """kl_kernel_grad (per-sample route) vs autodiff of the scalar estimator."""
    z, data, gen, features = random_instance(rng, n=6, m=12)
    kernel = DeepKernel(features)
    real, ref = data[:5], data[5:]
    a = _flat_layers(losses.kl_kernel_grad(z, real, ref, gen, kernel))
    _, g = losses.kl_estimator_grad(z, real, ref, gen, kernel)
    return ad.rel_error(a, _flat_layers(g))


def loss_kde_fd_error(rng):
    z, data, gen, features = random_instance(rng, n=5, m=5)
    kernel = DeepKernel(features)
    _, g = losses.loss_kde_grad(z, data, gen, kernel, 0.7)
    fd = _fd_over_params(features, lambda p: losses.loss_kde(z, data, gen, DeepKernel(p), 0.7))
    return ad.rel_error(_flat_layers(g), fd)


def generator_fd_error(rng):
    z, data, gen, features = random_instance(rng, n=5, m=6)
    kernel = DeepKernel(features)
    _, g = losses.generator_grad(z, data, gen, kernel)
    fd = _fd_over_params(gen, lambda p: losses.mmd2_vstat(p.apply(z), data, kernel))
    return ad.rel_error(_flat_layers(g), fd)


def nll_fd_error(rng):
    z, data, gen, features = random_instance(rng, n=5, m=6)
    kernel = DeepKernel(features)
    g = losses.nll_generator_grad(z, data, gen, kernel)
    fd = _fd_over_params(
        gen, lambda p: float(losses.nll_generator_loss(z, data, p, kernel).data)
    )
    return ad.rel_error(_flat_layers(g), fd)


def mlp_fd_error(rng):
    while True:
        params = MlpParams.init(MlpSpec((3, 8, 8, 1), ("tanh", "relu")), rng)
        x = rng.normal(size=(4, 3))
        if relu_margin(params, x) > KINK_MARGIN:
            break
    _, (g,) = ad.value_and_grad(lambda layers: _mlp_sum(params.spec, layers, x), params.layers)
    fd = _fd_over_params(params, lambda p: float(p.apply(x).sum()))
    return ad.rel_error(_flat_layers(g), fd)


def _mlp_sum(spec, layers, x):
    return mlp_forward(spec, layers, x).sum()


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self):
        return math.isfinite(self.max_error) and self.max_error <= self.tolerance

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28s} max_rel_err={self.max_error:.3e}  tol={self.tolerance:.0e}"


def run_all(instances=20, seed=0):
    """Run every oracle; returns a list of :class:`CheckResult`."""
    results = []

    def run(name, tol, fn, count=instances):
        rng = np.random.default_rng(seed)
        try:
            err = max(fn(rng) for _ in range(count))
        except Exception as exc:  # a crash is a failed check, reported by name
            err = float("inf")
            name = f"{name} ({type(exc).__name__}: {exc})"
        results.append(CheckResult(name, err, tol))

    run("mlp_backward", 1e-4, mlp_fd_error)
    for functional in FUNCTIONALS:
        run(f"rule_{functional}", 1e-4, lambda rng, f=functional: rule_fd_error(f, rng))
    run("loss_kde_phi", 1e-4, loss_kde_fd_error)
    run("kl_kernel_grad_vs_autodiff", 1e-6, kl_cross_check_error)
    run("generator_grad_theta", 1e-4, generator_fd_error)
    run("nll_generator_grad_theta", 1e-4, nll_fd_error)
    for kind in FDivergence:
        run(f"conjugate_{kind.value}", 1e-4, lambda rng, k=kind: conjugate_error(k, rng), count=1)
    run(
        "f_of_one_is_zero",
        0.0,
        lambda rng: max(abs(f_value(k, 1.0)) for k in FDivergence),
        count=1,
    )
    return results
