"""Dense network forward/backward/optimizer tests against independent oracles."""

import json

import numpy as np
import pytest
from helpers import finite_difference_grads

from compflow import nnet


def test_forward_identity_layer():
    net = nnet.DenseNet([3, 3], [np.eye(3)], [np.zeros(3)])
    x = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(nnet.forward(net, x), x)


def test_forward_single_hidden_unit_relu():
    # one hidden unit, weight 2, bias 1, rectifier, then pass-through output
    net = nnet.DenseNet([1, 1, 1], [np.array([[2.0]]), np.array([[1.0]])],
                        [np.array([1.0]), np.array([0.0])])
    assert nnet.forward(net, np.array([3.0]))[0] == pytest.approx(7.0)
    # negative pre-activation is clipped
    assert nnet.forward(net, np.array([-3.0]))[0] == pytest.approx(0.0)


def test_forward_zero_network_yields_zero():
    rng = np.random.default_rng(0)
    net = nnet.init_dense([4, 8, 3], rng)
    for w in net.weights:
        w[:] = 0.0
    out = nnet.forward(net, rng.standard_normal(4))
    assert np.array_equal(out, np.zeros(3))


def test_forward_shape_error():
    rng = np.random.default_rng(0)
    net = nnet.init_dense([4, 3], rng)
    with pytest.raises(nnet.ShapeError):
        nnet.forward(net, np.zeros(5))


def test_backward_linear_case():
    # y = w * x, loss = y: dL/dw = x, dL/dx = w
    net = nnet.DenseNet([1, 1], [np.array([[1.5]])], [np.array([0.0])])
    _, cache = nnet.forward_cache(net, np.array([3.0]))
    grads, gin = nnet.backward(net, cache, np.array([1.0]))
    assert grads[0][0, 0] == pytest.approx(3.0)
    assert gin[0] == pytest.approx(1.5)


def test_backward_zero_output_gradient():
    rng = np.random.default_rng(1)
    net = nnet.init_dense([3, 6, 2], rng)
    _, cache = nnet.forward_cache(net, rng.standard_normal(3))
    grads, gin = nnet.backward(net, cache, np.zeros(2))
    assert all(np.all(g == 0.0) for g in grads)
    assert np.all(gin == 0.0)


def test_backward_requires_cache():
    rng = np.random.default_rng(1)
    net = nnet.init_dense([3, 2], rng)
    with pytest.raises(ValueError):
        nnet.backward(net, None, np.zeros(2))


def test_backward_matches_finite_differences_two_layer():
    rng = np.random.default_rng(2)
    net = nnet.init_dense([3, 6, 2], rng)
    x = rng.standard_normal(3)
    gout = rng.standard_normal(2)
    _, cache = nnet.forward_cache(net, x)
    analytic, _ = nnet.backward(net, cache, gout)
    numeric = finite_difference_grads(net, x, gout)
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        assert np.max(np.abs(a - n) / denom) < 1e-4


def test_gradient_check_100_random_networks():
    # (net, input) pairs are redrawn while any ReLU pre-activation sits within
    # 1e-3 of its kink: central differences straddle the non-differentiable
    # point there (zero-bias init makes dead layers land exactly on it)
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 100:
        depth = int(rng.integers(1, 4))
        widths = [int(rng.integers(1, 9)) for _ in range(depth + 2)]
        out_act = "tanh" if checked % 4 == 0 else "identity"
        net = nnet.init_dense(widths, rng, output_activation=out_act)
        x = rng.standard_normal(widths[0])
        _, cache = nnet.forward_cache(net, x)
        if any(np.min(np.abs(z)) <= 1e-3 for z in cache["preacts"][:-1]):
            continue
        gout = rng.standard_normal(widths[-1])
        analytic, _ = nnet.backward(net, cache, gout)
        numeric = finite_difference_grads(net, x, gout)
        for a, n in zip(analytic, numeric):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
            assert np.max(np.abs(a - n) / denom) < 1e-4, f"pair {checked} widths {widths}"
        checked += 1


def test_batched_backward_sums_over_rows():
    rng = np.random.default_rng(4)
    net = nnet.init_dense([3, 5, 2], rng)
    xs = rng.standard_normal((4, 3))
    gout = rng.standard_normal((4, 2))
    _, cache = nnet.forward_cache(net, xs)
    batch_grads, _ = nnet.backward(net, cache, gout)
    summed = [np.zeros_like(p) for p in net.params()]
    for i in range(4):
        _, c = nnet.forward_cache(net, xs[i])
        g, _ = nnet.backward(net, c, gout[i])
        summed = [s + gi for s, gi in zip(summed, g)]
    for b, s in zip(batch_grads, summed):
        assert np.allclose(b, s, atol=1e-12)


def test_adam_first_step_is_signed_lr():
    p = [np.array([0.0])]
    state = nnet.adam_init(p, lr=1e-3, eps=1e-12)
    nnet.optimizer_step(state, p, [np.array([1.0])])
    assert p[0][0] == pytest.approx(-1e-3, rel=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_keeps_params():
    rng = np.random.default_rng(5)
    net = nnet.init_dense([2, 4, 1], rng)
    before = [p.copy() for p in net.params()]
    state = nnet.adam_init(net.params(), lr=0.1)
    for _ in range(3):
        nnet.optimizer_step(state, net.params(), [np.zeros_like(p) for p in net.params()])
    for b, p in zip(before, net.params()):
        assert np.array_equal(b, p)


def test_adam_two_steps_match_scalar_recursion_oracle():
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    g = 0.7
    # independent scalar recursion
    theta, m, v = 0.3, 0.0, 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    p = [np.array([0.3])]
    state = nnet.adam_init(p, lr=lr, beta1=b1, beta2=b2, eps=eps)
    nnet.optimizer_step(state, p, [np.array([g])])
    nnet.optimizer_step(state, p, [np.array([g])])
    assert p[0][0] == pytest.approx(theta, rel=1e-12)
    assert state.step == 2


def test_adam_rejects_nonfinite_gradient_naming_tensor():
    rng = np.random.default_rng(6)
    net = nnet.init_dense([2, 3, 1], rng)
    state = nnet.adam_init(net.params(), lr=1e-3)
    grads = [np.zeros_like(p) for p in net.params()]
    grads[2][0, 0] = np.nan
    with pytest.raises(nnet.NumericsError, match="layer 1 weights"):
        nnet.optimizer_step(state, net.params(), grads, net.param_names())


def test_seeded_init_is_bit_deterministic():
    n1 = nnet.init_dense([3, 16, 2], np.random.default_rng(42))
    n2 = nnet.init_dense([3, 16, 2], np.random.default_rng(42))
    for a, b in zip(n1.params(), n2.params()):
        assert np.array_equal(a, b)
    # and so is a short training trajectory
    for net in (n1, n2):
        rng = np.random.default_rng(7)
        opt = nnet.adam_init(net.params(), lr=1e-3)
        for _ in range(5):
            x = rng.standard_normal((8, 3))
            y, cache = nnet.forward_cache(net, x)
            grads, _ = nnet.backward(net, cache, 2 * y / 8)
            nnet.optimizer_step(opt, net.params(), grads)
    for a, b in zip(n1.params(), n2.params()):
        assert np.array_equal(a, b)


def test_no_nonfinite_on_large_inputs():
    rng = np.random.default_rng(8)
    for _ in range(10):
        net = nnet.init_dense([5, 32, 32, 3], rng)
        x = rng.uniform(-1e3, 1e3, size=5)
        y, cache = nnet.forward_cache(net, x)
        assert np.all(np.isfinite(y))
        grads, gin = nnet.backward(net, cache, rng.standard_normal(3))
        assert all(np.all(np.isfinite(g)) for g in grads)
        assert np.all(np.isfinite(gin))


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    net = nnet.init_dense([4, 7, 2], rng, output_activation="tanh")
    path = tmp_path / "net.bin"
    nnet.save_net(net, path, extra_header={"note": "x"})
    loaded, extra = nnet.load_net(path)
    assert extra == {"note": "x"}
    assert loaded.widths == net.widths
    assert loaded.output_activation == "tanh"
    for a, b in zip(net.params(), loaded.params()):
        assert np.array_equal(a, b)
    # header line is JSON, payload is little-endian float64
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        blob = fh.read()
    assert header["widths"] == [4, 7, 2]
    assert len(blob) == 8 * net.num_params()
    first = np.frombuffer(blob[:8], dtype="<f8")[0]
    assert first == net.weights[0][0, 0]


def test_constructor_rejects_mismatched_shapes():
    with pytest.raises(nnet.ShapeError):
        nnet.DenseNet([2, 3], [np.zeros((2, 2))], [np.zeros(3)])
