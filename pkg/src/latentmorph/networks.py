"""Generator and feature MLPs, and the deep kernel exp(-||f(x) - f(y)||^2)."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``(in, hidden..., out)`` and one activation per hidden layer."""

    widths: tuple
    activations: tuple

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.widths) < 2:
            raise ConfigError(f"an MLP needs at least 2 widths, got {self.widths}")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"layer widths must be positive, got {self.widths}")
        if len(self.activations) != len(self.widths) - 2:
            raise ConfigError(
                f"{len(self.widths) - 2} hidden layers need as many activations, "
                f"got {self.activations}"
            )
        for kind in self.activations:
            if kind not in ad.ACTIVATIONS:
                raise ConfigError(f"unknown activation {kind!r}")

    @property
    def in_dim(self):
        return self.widths[0]

    @property
    def out_dim(self):
        return self.widths[-1]

    def to_dict(self):
        return {"widths": list(self.widths), "activations": list(self.activations)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["widths"]), tuple(d["activations"]))


def generator_spec(latent_dim=2, data_dim=2, hidden=16, depth=2):
    return MlpSpec((latent_dim,) + (hidden,) * depth + (data_dim,), ("tanh",) * depth)


def feature_spec(data_dim=2, feature_dim=16, hidden=16, depth=2):
    return MlpSpec((data_dim,) + (hidden,) * depth + (feature_dim,), ("relu",) * depth)


def mlp_forward(spec, layers, x):
    """Run the MLP on a batch ``x`` of shape [batch, in]. ``layers`` may hold arrays or tensors."""
    h = ad.as_tensor(x)
    if h.ndim != 2 or h.shape[1] != spec.in_dim:
        raise DimensionError(f"input shape {h.shape} does not match MLP input width {spec.in_dim}")
    n = len(layers)
    for i, (w, b) in enumerate(layers):
        h = ad.linear(w, b, h)
        if i < n - 1:
            h = ad.activation(spec.activations[i], h)
    return h


class MlpParams:
    """Weights and biases for an :class:`MlpSpec`. Treated as an immutable snapshot."""

    def __init__(self, spec, layers):
        self.spec = spec
        self.layers = [[np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)] for w, b in layers]
        if len(self.layers) != len(spec.widths) - 1:
            raise DimensionError(
                f"{len(spec.widths) - 1} layers expected, got {len(self.layers)}"
            )
        for i, (w, b) in enumerate(self.layers):
            expect = (spec.widths[i], spec.widths[i + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise DimensionError(
                    f"layer {i}: weight {w.shape} / bias {b.shape} do not match {expect}"
                )

    @classmethod
    def init(cls, spec, rng):
        """Uniform init in +-sqrt(1/fan_in)."""
        layers = []
        for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=(fan_out,))
            layers.append([w, b])
        return cls(spec, layers)

    @classmethod
    def identity(cls, dim):
        return cls(MlpSpec((dim, dim), ()), [[np.eye(dim), np.zeros(dim)]])

    def __call__(self, x):
        return mlp_forward(self.spec, self.layers, x)

    def apply(self, x):
        """Forward pass on plain arrays; returns an ndarray."""
        return self(np.atleast_2d(np.asarray(x, dtype=np.float64))).data

    def arrays(self):
        return [a for layer in self.layers for a in layer]

    def flat(self):
        return np.concatenate([a.reshape(-1) for a in self.arrays()])

    @property
    def num_params(self):
        return sum(a.size for a in self.arrays())

    def from_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_params:
            raise DimensionError(f"expected {self.num_params} values, got {vec.size}")
        layers, pos = [], 0
        for w, b in self.layers:
            nw = vec[pos:pos + w.size].reshape(w.shape)
            pos += w.size
            nb = vec[pos:pos + b.size].reshape(b.shape)
            pos += b.size
            layers.append([nw, nb])
        return MlpParams(self.spec, layers)

    def with_layers(self, layers):
        return MlpParams(self.spec, layers)

    def copy(self):
        return MlpParams(self.spec, [[w.copy(), b.copy()] for w, b in self.layers])

    def equals(self, other):
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


def generate(theta, z):
    """x = g_theta(z). ``theta=None`` is the identity map (generator-free mode)."""
    if theta is None:
        return ad.as_tensor(z)
    return theta(z)


class DeepKernel:
    """K(x, y) = exp(-||f(x) - f(y)||^2) with a learned feature map f.

    No bandwidth: the feature network absorbs any scaling.
    """

    def __init__(self, features):
        self.features = features

    @property
    def data_dim(self):
        return self.features.spec.in_dim

    def embed(self, x, layers=None):
        layers = self.features.layers if layers is None else layers
        return mlp_forward(self.features.spec, layers, x)

    def __call__(self, x, y):
        return kernel_eval(self.features, x, y)

    def gram(self, X, Y):
        return gram(self.features, X, Y)


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionError(f"points of shape {x.shape} do not live in a {dim}-d data space")
    return x


def kernel_eval(phi, x, y):
    """Scalar kernel value between two data points."""
    x = _as_batch(x, phi.spec.in_dim)
    y = _as_batch(y, phi.spec.in_dim)
    fx = phi.apply(x)
    fy = phi.apply(y)
    d = ad.sqdist(fx, fy).data
    return float(np.exp(-d[0, 0]))


def gram(phi, X, Y):
    """Matrix of kernel values G[i, j] = K(X[i], Y[j])."""
    X = _as_batch(X, phi.spec.in_dim)
    Y = _as_batch(Y, phi.spec.in_dim)
    fx = np.vstack([phi.apply(x[None, :]) for x in X])
    fy = np.vstack([phi.apply(y[None, :]) for y in Y])
    return np.exp(-ad.sqdist(fx, fy).data)


def log_gram(feat_a, feat_b):
    """Tensor of log-kernel values -||fa_i - fb_j||^2 from precomputed features."""
    return -ad.sqdist(feat_a, feat_b)
