"""Kernel and generator objectives.

Feature-network parameters (phi) and generator parameters (theta) are passed as
lists of ``[W, b]`` layers so they can be watched on a tape.  Gradients come back
in the same layout.
"""

import logging
import math

import numpy as np

from . import autodiff as ad
from .divergences import FDivergence, f_conjugate
from .errors import DomainError, NumericError, PreconditionError
from .networks import generate, mlp_forward

log = logging.getLogger(__name__)


def _batch(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise PreconditionError(f"{name} must be a non-empty [n, d] batch")
    return x


def _kernel_matrix(fa, fb):
    return ad.exp(-ad.sqdist(fa, fb))


def _log_mean_kernel(fa, fb):
    """Row-wise log mean_j K(a_i, b_j) via log-sum-exp."""
    return ad.logsumexp(-ad.sqdist(fa, fb), axis=1) - math.log(fb.shape[0])


def _feat(kernel, x, phi_layers=None):
    return mlp_forward(kernel.features.spec, kernel.features.layers if phi_layers is None else phi_layers, x)


def _gen(generator, z, theta_layers=None):
    if generator is None:
        return ad.as_tensor(z)
    return mlp_forward(generator.spec, generator.layers if theta_layers is None else theta_layers, z)


# -- leave-one-out KDE ----------------------------------------------------------


def kde_values(particles, generator, kernel):
    """r~(z_j) = sum_{i != j} K(g(z_j), g(z_i)) / (n - 1) for every particle."""
    particles = _batch(particles, "particles")
    n = len(particles)
    if n < 2:
        raise PreconditionError("leave-one-out KDE needs at least 2 particles")
    f = _feat(kernel, generate(generator, particles).data).data
    k = np.exp(-ad.sqdist(f, f).data)
    np.fill_diagonal(k, 0.0)
    return k.sum(axis=1) / (n - 1)


def kde(j, particles, generator, kernel):
    return float(kde_values(particles, generator, kernel)[j])


def loss_kde_tensor(feat_gen, feat_data, alpha):
    """Shape term mean_j (r~_j - 1/n)^2 plus alpha * mean K(generated, real)."""
    n = feat_gen.shape[0]
    if n < 2:
        raise PreconditionError("L_kde needs at least 2 particles")
    off = 1.0 - np.eye(n)
    r = (_kernel_matrix(feat_gen, feat_gen) * off).sum(axis=1) / float(n - 1)
    shape_term = ((r - 1.0 / n) ** 2).mean()
    if alpha == 0:
        return shape_term
    return shape_term + alpha * _kernel_matrix(feat_gen, feat_data).mean()


def loss_kde(particles, data_batch, generator, kernel, alpha, phi_layers=None):
    particles = _batch(particles, "particles")
    data_batch = _batch(data_batch, "data batch")
    x = generate(generator, particles).data
    out = loss_kde_tensor(_feat(kernel, x, phi_layers), _feat(kernel, data_batch, phi_layers), alpha)
    return float(out.data)


def loss_kde_grad(particles, data_batch, generator, kernel, alpha):
    """(L_kde, dL_kde/dphi)."""
    particles = _batch(particles, "particles")
    data_batch = _batch(data_batch, "data batch")
    x = generate(generator, particles).data

    def fn(layers):
        return loss_kde_tensor(_feat(kernel, x, layers), _feat(kernel, data_batch, layers), alpha)

    value, (grads,) = ad.value_and_grad(fn, kernel.features.layers)
    return value, grads


# -- KL kernel gradient ------------------------------------------------------------


def kl_estimator_tensor(feat_real, feat_ref, feat_gen):
    """-mean_x log mean_x' K(x, x') + mean_z log mean_x' K(g(z), x')."""
    return -_log_mean_kernel(feat_real, feat_ref).mean() + _log_mean_kernel(feat_gen, feat_ref).mean()


def kl_estimator(latents, real_batch, ref_batch, generator, kernel, phi_layers=None):
    xg = generate(generator, _batch(latents, "latent batch")).data
    return float(
        kl_estimator_tensor(
            _feat(kernel, _batch(real_batch, "real batch"), phi_layers),
            _feat(kernel, _batch(ref_batch, "reference batch"), phi_layers),
            _feat(kernel, xg, phi_layers),
        ).data
    )


def _log_mean_cotangents(fa, fb, coef):
    """Cotangents of sum_i coef_i * log mean_j K(a_i, b_j) w.r.t. the features fa, fb.

    With softmax weights w_ij = K_ij / sum_j K_ij and d_ij = fa_i - fb_j:
    d/dfa_i = -2 coef_i sum_j w_ij d_ij,  d/dfb_j = 2 sum_i coef_i w_ij d_ij.
    """
    logits = -ad.sqdist(fa, fb).data
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    cw = coef[:, None] * w
    ga = -2.0 * (fa * cw.sum(axis=1, keepdims=True) - cw @ fb)
    gb = 2.0 * (cw.T @ fa - fb * cw.sum(axis=0)[:, None])
    return ga, gb


def kl_kernel_grad(latents, real_batch, ref_batch, generator, kernel):
    """Two-term Monte-Carlo KL gradient over phi.

    -mean_x grad log mean_x' K(x, x')  +  mean_z grad log mean_x' K(g(z), x')

    ``real_batch`` plays x, ``ref_batch`` plays x'.  Each term is assembled from
    per-sample softmax weights in feature space and pulled back through the
    feature network, independently of differentiating the scalar estimator.
    """
    real = _batch(real_batch, "real batch")
    ref = _batch(ref_batch, "reference batch")
    xg = generate(generator, _batch(latents, "latent batch")).data
    with ad.Tape() as tape:
        layers = [[tape.watch(w), tape.watch(b)] for w, b in kernel.features.layers]
        f_real = _feat(kernel, real, layers)
        f_ref = _feat(kernel, ref, layers)
        f_gen = _feat(kernel, xg, layers)
    c_real = np.full(len(real), -1.0 / len(real))
    c_gen = np.full(len(xg), 1.0 / len(xg))
    g_real, g_ref1 = _log_mean_cotangents(f_real.data, f_ref.data, c_real)
    g_gen, g_ref2 = _log_mean_cotangents(f_gen.data, f_ref.data, c_gen)
    # pull back each feature block with its own seed
    grads_acc = [[np.zeros_like(w), np.zeros_like(b)] for w, b in kernel.features.layers]
    for tensor, seed in ((f_real, g_real), (f_ref, g_ref1 + g_ref2), (f_gen, g_gen)):
        grads = ad.backward(tape, tensor, seed)
        for acc, layer in zip(grads_acc, layers):
            acc[0] = acc[0] + grads[layer[0]]
            acc[1] = acc[1] + grads[layer[1]]
    return grads_acc


def kl_estimator_grad(latents, real_batch, ref_batch, generator, kernel):
    """(L_hat, dL_hat/dphi) by differentiating the scalar estimator directly."""
    real = _batch(real_batch, "real batch")
    ref = _batch(ref_batch, "reference batch")
    xg = generate(generator, _batch(latents, "latent batch")).data

    def fn(layers):
        return kl_estimator_tensor(_feat(kernel, real, layers), _feat(kernel, ref, layers), _feat(kernel, xg, layers))

    value, (grads,) = ad.value_and_grad(fn, kernel.features.layers)
    return value, grads


# -- general f-divergence kernel gradient -------------------------------------------


def _v_values(v, latents):
    if callable(v) and not hasattr(v, "spec"):
        return np.asarray(v(latents), dtype=np.float64).reshape(-1)
    return v.apply(latents).reshape(-1)


def _weighted_mean(x, weights):
    if weights is None:
        return x.mean()
    return (x * weights).sum()


def general_f_surrogate(kind, latents, ref_batch, generator, kernel, v, weights=None, phi_layers=None):
    """Scalar whose phi-gradient is the general f-divergence kernel gradient.

    -E_q[f*(v) * l] + E_q[f*(v)] * E_q[l],   l(z) = log mean_x' K(g(z), x')

    with f*(v) treated as a constant.  ``weights`` (summing to one) replace the
    plain Monte-Carlo mean, e.g. for quadrature on a grid.
    """
    kind = FDivergence.parse(kind)
    latents = _batch(latents, "latent batch")
    ref = _batch(ref_batch, "reference batch")
    t = _v_values(v, latents)
    try:
        c = np.asarray(f_conjugate(kind, t), dtype=np.float64).reshape(-1)
    except DomainError as exc:
        raise DomainError(f"variational function left the conjugate domain: {exc}") from exc
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    # exact zero when c is constant: subtract c[0] before averaging
    shift = c - c[0]
    c_bar = c[0] + (shift.mean() if weights is None else float((shift * weights).sum()))
    centered = c - c_bar
    xg = generate(generator, latents).data
    ell = _log_mean_kernel(_feat(kernel, xg, phi_layers), _feat(kernel, ref, phi_layers))
    return -_weighted_mean(ell * centered, weights)


def general_f_kernel_grad(kind, latents, ref_batch, generator, kernel, v, weights=None):
    _, (grads,) = ad.value_and_grad(
        lambda layers: general_f_surrogate(kind, latents, ref_batch, generator, kernel, v, weights, layers),
        kernel.features.layers,
    )
    return grads


def conjugate_tensor(kind, t):
    kind = FDivergence.parse(kind)
    if kind is FDivergence.KL:
        return ad.exp(t - 1.0)
    if kind is FDivergence.REVERSE_KL:
        return -1.0 - ad.log(-t)
    if kind is FDivergence.JENSEN_SHANNON:
        return -ad.log(2.0 - ad.exp(t))
    return t / (1.0 - t)


def clamp_to_domain(kind, t, margin=1e-6):
    """Clamp a tensor into the conjugate domain interior; clamped entries get no gradient."""
    kind = FDivergence.parse(kind)
    bound = kind.conjugate_bound
    if not math.isfinite(bound):
        return t, 0
    cap = bound - margin
    over = t.data > cap
    count = int(over.sum())
    if count == 0:
        return t, 0
    keep = (~over).astype(np.float64)
    return t * keep + cap * over.astype(np.float64), count


def variational_objective_tensor(kind, v_p, v_q, weights_p=None, weights_q=None):
    """E_p[v] - E_q[f*(v)] from v evaluated on p-samples and q-samples."""
    return _weighted_mean(v_p, weights_p) - _weighted_mean(conjugate_tensor(kind, v_q), weights_q)


def variational_objective(kind, v, latents_p, latents_q, weights_p=None, weights_q=None):
    vp = ad.as_tensor(_v_values(v, latents_p))
    vq, _ = clamp_to_domain(kind, ad.as_tensor(_v_values(v, latents_q)))
    return float(variational_objective_tensor(kind, vp, vq, weights_p, weights_q).data)


def variational_step(kind, v, latent_batches, lr):
    """One gradient-ascent step on E_p[v] - E_q[f*(v)] w.r.t. the parameters of ``v``.

    ``latent_batches`` is ``(samples from p, samples from q)``.
    """
    zp, zq = (_batch(b, "latent batch") for b in latent_batches)
    clamped = []

    def fn(layers):
        vp = mlp_forward(v.spec, layers, zp).reshape(-1)
        vq, count = clamp_to_domain(kind, mlp_forward(v.spec, layers, zq).reshape(-1))
        clamped.append(count)
        return variational_objective_tensor(kind, vp, vq)

    _, (grads,) = ad.value_and_grad(fn, v.layers)
    if clamped and clamped[0]:
        log.warning("clamped %d variational outputs into the %s conjugate domain", clamped[0], kind)
    return v.with_layers([[w + lr * gw, b + lr * gb] for (w, b), (gw, gb) in zip(v.layers, grads)])


# -- combined kernel gradient ---------------------------------------------------------


def add_grads(a, b, scale=1.0):
    return [[wa + scale * wb, ba + scale * bb] for (wa, ba), (wb, bb) in zip(a, b)]


def grad_norm(grads):
    return float(math.sqrt(sum(float(np.sum(g * g)) for layer in grads for g in layer)))


def combined_kernel_grad(
    latents,
    real_batch,
    ref_batch,
    generator,
    kernel,
    alpha,
    beta,
    kind="kl",
    v=None,
    with_kde=True,
):
    """grad L_kde + beta * grad D_f.  Returns (grads, L_kde value, divergence-gradient norm).

    The divergence path defaults to KL; other kinds need a variational function ``v``.
    ``with_kde=False`` drops L_kde altogether (its value is then reported as nan).
    """
    kind = FDivergence.parse(kind)
    if with_kde:
        value, g_kde = loss_kde_grad(latents, ref_batch, generator, kernel, alpha)
    else:
        value = float("nan")
        g_kde = [[np.zeros_like(w), np.zeros_like(b)] for w, b in kernel.features.layers]
    if beta == 0:
        return g_kde, value, 0.0
    if kind is FDivergence.KL and v is None:
        g_div = kl_kernel_grad(latents, real_batch, ref_batch, generator, kernel)
    else:
        if v is None:
            raise PreconditionError(f"{kind.value} kernel gradient needs a variational function")
        g_div = general_f_kernel_grad(kind, latents, ref_batch, generator, kernel, v)
    return add_grads(g_kde, g_div, beta), value, grad_norm(g_div)


# -- MMD and generator gradients --------------------------------------------------------


def mmd2_tensor(fx, fy, include_yy=True):
    out = _kernel_matrix(fx, fx).mean() - 2.0 * _kernel_matrix(fx, fy).mean()
    if include_yy:
        out = out + _kernel_matrix(fy, fy).mean()
    return out


def mmd2_vstat(X, Y, kernel):
    """Biased (V-statistic) squared MMD under the deep kernel."""
    X = _batch(X, "X")
    Y = _batch(Y, "Y")
    fx = kernel.features.apply(X)
    fy = kernel.features.apply(Y)
    kxx = np.exp(-ad.sqdist(fx, fx).data).mean()
    kxy = np.exp(-ad.sqdist(fx, fy).data).mean()
    kyy = np.exp(-ad.sqdist(fy, fy).data).mean()
    return float(kxx - 2.0 * kxy + kyy)


def generator_objective(latents, data_batch, generator, kernel, theta_layers=None):
    fy = _feat(kernel, data_batch).data
    return mmd2_tensor(_feat(kernel, _gen(generator, latents, theta_layers)), fy, include_yy=False)


def generator_grad(latents, data_batch, generator, kernel):
    """d MMD^2(g(Z), X) / d theta with the kernel frozen. Returns (MMD^2 without the X-X term, grads)."""
    latents = _batch(latents, "latent batch")
    data_batch = _batch(data_batch, "data batch")
    fy = _feat(kernel, data_batch).data

    def fn(layers):
        return mmd2_tensor(_feat(kernel, mlp_forward(generator.spec, layers, latents)), fy, include_yy=False)

    value, (grads,) = ad.value_and_grad(fn, generator.layers)
    return value, grads


def nll_generator_loss(latents, data_batch, generator, kernel, theta_layers=None):
    """-mean_x log mean_z K(g(z), x) + mean_z log mean_z' K(g(z), g(z'))."""
    latents = _batch(latents, "latent batch")
    fx = _feat(kernel, _batch(data_batch, "data batch")).data
    fg = _feat(kernel, _gen(generator, latents, theta_layers))
    return -_log_mean_kernel(ad.as_tensor(fx), fg).mean() + _log_mean_kernel(fg, fg).mean()


def nll_generator_grad(latents, data_batch, generator, kernel):
    """Negative-log-likelihood form of the generator gradient.

    -E_x[E_z grad K(g(z), x) / E_z K(g(z), x)] + E_z[E_z' grad K(g(z), g(z')) / E_z' K(g(z), g(z'))]

    Built from kernel ratios with frozen denominators.
    """
    latents = _batch(latents, "latent batch")
    data_batch = _batch(data_batch, "data batch")
    fx = _feat(kernel, data_batch).data

    def fn(layers):
        fg = _feat(kernel, mlp_forward(generator.spec, layers, latents))
        k_xg = _kernel_matrix(ad.as_tensor(fx), fg)
        k_gg = _kernel_matrix(fg, fg)
        den_x = k_xg.data.sum(axis=1, keepdims=True)
        den_g = k_gg.data.sum(axis=1, keepdims=True)
        if np.any(den_x <= 1e-300) or np.any(den_g <= 1e-300):
            raise NumericError("kernel denominators vanished in the NLL generator gradient")
        return -(k_xg / den_x).sum(axis=1).mean() + (k_gg / den_g).sum(axis=1).mean()

    _, (grads,) = ad.value_and_grad(fn, generator.layers)
    return grads
