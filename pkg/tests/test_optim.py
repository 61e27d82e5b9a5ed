import numpy as np
import pytest
from hypothesis import given, strategies as st

from repeatlab.errors import ConfigurationError, NumericalError
from repeatlab.model import InitScheme, MlpParams, init_mlp
from repeatlab.optim import AdamState, OptimConfig, adamw_step, sgd_step


def _one(w):
    return MlpParams([np.array([[float(w)]])])


def test_sgd_examples():
    p = init_mlp(3, [4, 1], InitScheme(seed=0))
    before = p.copy()
    sgd_step(p, [np.zeros_like(W) for W in p.layers], OptimConfig(lr=0.3))
    assert all(np.array_equal(a, b) for a, b in zip(p.layers, before.layers))
    q = _one(2.0)
    sgd_step(q, [np.array([[0.5]])], OptimConfig(lr=1.0))
    assert q.layers[0][0, 0] == 1.5
    p = init_mlp(3, [4, 1], InitScheme(seed=0))
    before = p.copy()
    g = [np.ones_like(W) for W in p.layers]
    sgd_step(p, g, OptimConfig(lr=1.0, layer_lrs=[2, 0]))
    assert np.allclose(p.layers[0], before.layers[0] - 2)
    assert np.array_equal(p.layers[1], before.layers[1])


@given(st.integers(0, 10 ** 6), st.floats(1e-3, 1.0))
def test_sgd_linear_and_layer_lr_path(seed, lr):
    rng = np.random.default_rng(seed)
    base = init_mlp(3, [4, 1], InitScheme(seed=seed))
    g1 = [rng.standard_normal(W.shape) for W in base.layers]
    g2 = [rng.standard_normal(W.shape) for W in base.layers]
    a = sgd_step(sgd_step(base.copy(), g1, OptimConfig(lr=lr)), g2, OptimConfig(lr=lr))
    b = sgd_step(base.copy(), [x + y for x, y in zip(g1, g2)], OptimConfig(lr=lr))
    assert all(np.allclose(x, y, atol=1e-12) for x, y in zip(a.layers, b.layers))
    c = sgd_step(base.copy(), g1, OptimConfig(lr=lr))
    d = sgd_step(base.copy(), g1, OptimConfig(lr=lr, layer_lrs=[lr, lr]))
    assert all(np.array_equal(x, y) for x, y in zip(c.layers, d.layers))


def test_adamw_examples():
    p = init_mlp(3, [4, 1], InitScheme(seed=1))
    before = p.copy()
    cfg = OptimConfig("adamw", lr=0.01)
    st_ = AdamState.zeros_like(p)
    adamw_step(st_, p, [np.full_like(W, 0.7) for W in p.layers], cfg)
    for W, B in zip(p.layers, before.layers):
        assert np.allclose(B - W, 0.01 * 0.7 / (0.7 + 1e-8))
    p = init_mlp(3, [4, 1], InitScheme(seed=1))
    before = p.copy()
    adamw_step(AdamState.zeros_like(p), p, [np.zeros_like(W) for W in p.layers], cfg)
    assert all(np.array_equal(a, b) for a, b in zip(p.layers, before.layers))
    adamw_step(AdamState.zeros_like(p), p, [np.zeros_like(W) for W in p.layers],
               OptimConfig("adamw", lr=1.0, weight_decay=0.1))
    assert all(np.allclose(a, 0.9 * b) for a, b in zip(p.layers, before.layers))


@given(st.integers(0, 10 ** 6))
def test_adamw_opposes_gradient(seed):
    rng = np.random.default_rng(seed)
    p = init_mlp(3, [4, 1], InitScheme(seed=seed))
    before = p.copy()
    g = [rng.standard_normal(W.shape) for W in p.layers]
    adamw_step(AdamState.zeros_like(p), p, g, OptimConfig("adamw", lr=0.1, beta1=0.0, beta2=0.0))
    for W, B, G in zip(p.layers, before.layers, g):
        moved = W - B
        assert np.all(np.sign(moved[G != 0]) == -np.sign(G[G != 0]))


def test_optim_errors():
    with pytest.raises(ConfigurationError):
        OptimConfig(lr=0)
    with pytest.raises(ConfigurationError):
        OptimConfig(kind="lbfgs")
    p = _one(1.0)
    with pytest.raises(NumericalError):
        sgd_step(p, [np.array([[np.inf]])], OptimConfig(lr=1.0))
    with pytest.raises(ConfigurationError):
        sgd_step(_one(1.0), [np.zeros((2, 2))], OptimConfig())
    with pytest.raises(ConfigurationError):
        OptimConfig(layer_lrs=[1, 2, 3]).rates(2)
