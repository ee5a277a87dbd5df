import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentmorph import autodiff as ad
from latentmorph.errors import ConfigError, DimensionError
from latentmorph.gradcheck import KINK_MARGIN, relu_margin
from latentmorph.networks import (
    DeepKernel,
    MlpParams,
    MlpSpec,
    feature_spec,
    generate,
    generator_spec,
    gram,
    kernel_eval,
)


def random_features(rng, out=4, hidden=8, d=2):
    return MlpParams.init(MlpSpec((d, hidden, out), ("relu",)), rng)


def test_spec_validation():
    with pytest.raises(ConfigError):
        MlpSpec((2,), ())
    with pytest.raises(ConfigError):
        MlpSpec((2, 0, 2), ("tanh",))
    with pytest.raises(ConfigError):
        MlpSpec((2, 4, 2), ())
    with pytest.raises(ConfigError):
        MlpSpec((2, 4, 2), ("sigmoid",))
    assert MlpSpec.from_dict(generator_spec().to_dict()) == generator_spec()


def test_default_specs():
    g, f = generator_spec(), feature_spec()
    assert g.widths == (2, 16, 16, 2) and g.activations == ("tanh", "tanh")
    assert f.widths == (2, 16, 16, 16) and f.activations == ("relu", "relu")


def test_init_uniform_bounds():
    params = MlpParams.init(MlpSpec((9, 25, 4), ("tanh",)), np.random.default_rng(0))
    for (w, b), fan_in in zip(params.layers, (9, 25)):
        bound = math.sqrt(1.0 / fan_in)
        assert np.all(np.abs(w) <= bound) and np.all(np.abs(b) <= bound)


def test_generate_identity_and_zero_weights():
    ident = MlpParams(MlpSpec((2, 2), ()), [[np.eye(2), np.zeros(2)]])
    assert np.array_equal(ident.apply(np.array([[0.3, -0.7]])), [[0.3, -0.7]])
    zero = MlpParams(MlpSpec((2, 3, 2), ("tanh",)), [[np.zeros((2, 3)), np.zeros(3)], [np.zeros((3, 2)), np.array([1.5, -2.0])]])
    assert np.array_equal(zero.apply(np.random.default_rng(0).normal(size=(5, 2))), np.tile([1.5, -2.0], (5, 1)))
    assert np.array_equal(generate(None, np.ones((2, 2))).data, np.ones((2, 2)))


def test_generate_dimension_error():
    g = MlpParams.init(generator_spec(), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        g.apply(np.zeros((3, 5)))


def test_generate_latent_jacobian_matches_fd():
    rng = np.random.default_rng(4)
    for _ in range(20):
        g = MlpParams.init(generator_spec(), rng)
        z = rng.uniform(-1, 1, size=(3, 2))
        w = rng.normal(size=(3, 2))
        _, (gz,) = ad.value_and_grad(lambda t: (g(t) * w).sum(), z)
        fd = ad.finite_diff(lambda t: float((g.apply(t) * w).sum()), z)
        assert ad.rel_error(gz, fd) <= 1e-4


def test_kernel_hand_values():
    ident = MlpParams(MlpSpec((1, 1), ()), [[np.eye(1), np.zeros(1)]])
    assert abs(kernel_eval(ident, [0.0], [1.0]) - 0.36787944117144233) <= 1e-15
    f = random_features(np.random.default_rng(1))
    x = np.array([0.2, -0.4])
    assert kernel_eval(f, x, x) == 1.0


def test_gram_single_point():
    f = random_features(np.random.default_rng(0))
    assert np.array_equal(gram(f, [[1.0, 2.0]], [[1.0, 2.0]]), [[1.0]])


def test_gram_matches_pairwise_bit_identical():
    rng = np.random.default_rng(5)
    f = random_features(rng, out=16, hidden=16)
    X, Y = rng.normal(size=(6, 2)), rng.normal(size=(4, 2))
    G = gram(f, X, Y)
    for i in range(6):
        for j in range(4):
            assert G[i, j] == kernel_eval(f, X[i], Y[j])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 16))
def test_kernel_invariants(seed, n):
    rng = np.random.default_rng(seed)
    f = random_features(rng, out=int(rng.integers(1, 17)), hidden=16)
    X = rng.normal(size=(n, 2)) * 2
    G = gram(f, X, X)
    assert np.all(np.diag(G) == 1.0)
    assert np.array_equal(G, G.T)
    assert np.all(G > 0) and np.all(G <= 1)
    assert np.linalg.eigvalsh(G).min() >= -1e-8 * n


def test_kernel_grads_match_fd():
    rng = np.random.default_rng(6)
    checked = 0
    while checked < 20:
        f = random_features(rng)
        x, y = rng.normal(size=(1, 2)), rng.normal(size=(1, 2))
        if relu_margin(f, np.vstack([x, y])) < KINK_MARGIN:
            continue
        k = DeepKernel(f)

        def scalar(layers, a, b):
            return ad.exp(-ad.sqdist(k.embed(a, layers), k.embed(b, layers))).sum()

        _, (gl, gx, gy) = ad.value_and_grad(scalar, f.layers, x, y)
        flat = np.concatenate([a.ravel() for layer in gl for a in layer])
        fd_phi = ad.finite_diff(lambda v: kernel_eval(f.from_flat(v), x, y), f.flat())
        fd_x = ad.finite_diff(lambda v: kernel_eval(f, v, y), x)
        fd_y = ad.finite_diff(lambda v: kernel_eval(f, x, v), y)
        assert ad.rel_error(flat, fd_phi) <= 1e-4
        assert ad.rel_error(gx, fd_x) <= 1e-4
        assert ad.rel_error(gy, fd_y) <= 1e-4
        checked += 1


def test_params_flat_roundtrip_and_copy():
    p = MlpParams.init(generator_spec(), np.random.default_rng(0))
    q = p.from_flat(p.flat())
    assert q.equals(p)
    c = p.copy()
    c.layers[0][0][0, 0] += 1.0
    assert not c.equals(p)
