import numpy as np
import pytest

from evmarket.errors import NumericalDivergence, ShapeMismatch
from evmarket.network import Network, clone_parameters, forward, grad_step


def numeric_grad(net, X, a, t, h=1e-5):
    flat = net.flat()
    g = np.zeros_like(flat)
    for k in range(flat.size):
        for sign in (1, -1):
            f = flat.copy()
            f[k] += sign * h
            net.load_flat(f)
            g[k] += sign * net.loss(X, a, t)
        g[k] /= 2 * h
    net.load_flat(flat)
    return g


def analytic_grad(net, X, a, t):
    # a step with lr=1 moves parameters by exactly minus the gradient
    twin = net.clone()
    before = twin.flat()
    twin.grad_step(X, a, t, 1.0)
    return before - twin.flat()


def test_zero_network_outputs_zero():
    net = Network(3, 5, 8, zero=True)
    assert np.all(net(np.array([0.3, 0.1, 0.9])) == 0)


def test_hand_composed_forward():
    net = Network(1, 1, 1, zero=True)
    net.W1[0, 0] = 2.0
    net.W2[0, 0] = 3.0
    assert net(np.array([0.5]))[0] == pytest.approx(3.0 * max(0.0, 2.0 * 0.5))


def test_forward_is_deterministic_and_shape_checked():
    net = Network(2, 4, seed=1)
    x = np.array([0.2, 0.7])
    assert np.array_equal(net(x), forward(net, x))
    with pytest.raises(ShapeMismatch):
        net(np.zeros(3))


def test_seeded_initialisation_reproducible_and_scaled():
    a, b = Network(4, 21, seed=5), Network(4, 21, seed=5)
    assert np.array_equal(a.flat(), b.flat())
    assert np.all(np.abs(a.W1) <= 1 / np.sqrt(4))
    assert np.all(np.abs(a.W2) <= 1 / np.sqrt(128))


@pytest.mark.parametrize("seed", range(50))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    d, h, o, n = rng.integers(1, 5), rng.integers(2, 9), rng.integers(2, 6), rng.integers(1, 6)
    net = Network(int(d), int(o), int(h), seed=seed)
    X = rng.uniform(0, 1, (int(n), int(d)))
    a = rng.integers(0, o, int(n))
    t = rng.normal(0, 1, int(n))
    num = numeric_grad(net, X, a, t)
    ana = analytic_grad(net, X, a, t)
    scale = np.maximum(np.abs(num), np.abs(ana)).max()
    assert np.max(np.abs(num - ana)) / max(scale, 1e-12) < 1e-4


def test_zero_error_leaves_parameters_unchanged():
    net = Network(2, 3, 6, seed=2)
    X = np.array([[0.4, 0.6]])
    t = net(X)[:, 1]
    before = net.flat()
    assert net.grad_step(X, [1], t, 0.01) == pytest.approx(0.0)
    assert np.array_equal(before, net.flat())


def test_repeated_steps_drive_loss_down():
    net = Network(2, 3, 16, seed=3)
    batch = [(np.array([0.5, 0.5]), 2, 1.5)]
    losses = [grad_step(net, batch, 0.01) for _ in range(3000)]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-6


def test_clone_is_independent():
    net = Network(2, 3, 8, seed=4)
    twin = clone_parameters(net)
    xs = np.random.default_rng(0).uniform(0, 1, (100, 2))
    assert np.array_equal(net(xs), twin(xs))
    assert np.array_equal(twin.clone().flat(), net.flat())
    net.grad_step(xs[:4], [0, 1, 2, 0], [1.0, 2.0, 3.0, 4.0], 0.1)
    assert not np.array_equal(net(xs), twin(xs))
    assert np.array_equal(twin.flat(), clone_parameters(twin).flat())


def test_non_finite_target_raises():
    net = Network(1, 2, 4, seed=0)
    with pytest.raises(NumericalDivergence):
        net.grad_step([[0.5]], [0], [np.nan], 0.01)


def test_divergence_detected():
    net = Network(1, 2, 4, seed=0)
    with pytest.raises(NumericalDivergence):
        for _ in range(200):
            net.grad_step([[1.0]], [0], [1e200], 10.0)


def test_flat_round_trip():
    net = Network(3, 4, 5, seed=8)
    other = Network(3, 4, 5, zero=True)
    other.load_flat(net.flat())
    assert np.array_equal(other.flat(), net.flat())
    with pytest.raises(ShapeMismatch):
        other.load_flat(np.zeros(3))
