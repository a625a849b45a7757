import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unida_lab.ndcore import (
    GradBundle,
    Layer,
    MlpParams,
    finite_diff_grad,
    grad_reverse,
    init_mlp,
    make_rng,
    max_rel_error,
    mlp_backward,
    mlp_forward,
    sgd_step,
    softmax,
)


def identity_net(dim, activation="identity"):
    return MlpParams([Layer(np.eye(dim), np.zeros(dim), activation)])


def test_identity_forward():
    out, _ = mlp_forward(identity_net(2), [[3.0, -1.0]])
    np.testing.assert_array_equal(out, [[3.0, -1.0]])


def test_relu_clamps_negatives():
    out, _ = mlp_forward(identity_net(2, "relu"), [[-2.0, 5.0]])
    np.testing.assert_array_equal(out, [[0.0, 5.0]])


def test_forward_matches_hand_rolled():
    rng = make_rng(3)
    net = init_mlp([2, 4, 3], ["relu", "softmax"], rng)
    x = rng.standard_normal((6, 2))
    l1, l2 = net.layers
    h = np.maximum(x @ l1.weight + l1.bias, 0)
    z = h @ l2.weight + l2.bias
    e = np.exp(z - z.max(axis=1, keepdims=True))
    expected = e / e.sum(axis=1, keepdims=True)
    out, _ = mlp_forward(net, x)
    np.testing.assert_allclose(out, expected, rtol=1e-13)


def test_forward_rejects_dimension_mismatch():
    with pytest.raises(ValueError, match="3"):
        mlp_forward(identity_net(2), np.ones((4, 3)))


def test_params_must_chain():
    with pytest.raises(ValueError):
        MlpParams([Layer(np.ones((2, 3)), np.zeros(3)), Layer(np.ones((2, 2)), np.zeros(2))])


def test_softmax_only_on_output():
    with pytest.raises(ValueError):
        MlpParams([Layer(np.eye(2), np.zeros(2), "softmax"), Layer(np.eye(2), np.zeros(2))])


def test_softmax_is_stable_for_large_logits():
    p = softmax(np.array([[1000.0, 0.0, -1000.0]]))
    assert np.all(np.isfinite(p))
    assert p[0, 0] == pytest.approx(1.0)


def test_linear_backward_weight_grad():
    rng = make_rng(1)
    net = MlpParams([Layer(rng.standard_normal((3, 2)), np.zeros(2))])
    x = rng.standard_normal((5, 3))
    g = rng.standard_normal((5, 2))
    _, cache = mlp_forward(net, x)
    grads = mlp_backward(net, cache, g)
    np.testing.assert_allclose(grads.weights[0], x.T @ g, rtol=1e-14)
    np.testing.assert_allclose(grads.biases[0], g.sum(axis=0), rtol=1e-14)
    np.testing.assert_allclose(grads.input_grad, g @ net.layers[0].weight.T, rtol=1e-14)


def test_relu_gate_blocks_gradient():
    net = identity_net(2, "relu")
    _, cache = mlp_forward(net, [[-1.0, 2.0]])
    grads = mlp_backward(net, cache, np.array([[5.0, 7.0]]))
    np.testing.assert_array_equal(grads.input_grad, [[0.0, 7.0]])
    np.testing.assert_array_equal(grads.weights[0][:, 0], [0.0, 0.0])


def test_backward_rejects_wrong_upstream_shape():
    net = identity_net(2)
    _, cache = mlp_forward(net, np.ones((3, 2)))
    with pytest.raises(ValueError):
        mlp_backward(net, cache, np.ones((3, 5)))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("head", ["identity", "sigmoid", "softmax"])
def test_backward_matches_finite_differences(seed, head):
    rng = make_rng(seed)
    net = init_mlp([3, 8, 2], ["relu", head], rng)
    for layer in net.layers:
        layer.bias[:] = 0.1 * rng.standard_normal(layer.bias.shape)
    x = rng.standard_normal((7, 3))
    probe = rng.standard_normal((7, 2))

    def loss(p):
        return float(np.sum(mlp_forward(p, x)[0] * probe))

    _, cache = mlp_forward(net, x)
    analytic = mlp_backward(net, cache, probe)
    assert max_rel_error(analytic, finite_diff_grad(loss, net)) < 1e-4


@pytest.mark.parametrize(
    "coeff, grad, expected",
    [(0.0, [1.0, -9.0], [0.0, 0.0]), (1.0, [2.0, -3.0], [-2.0, 3.0]), (0.5, [4.0, 4.0], [-2.0, -2.0])],
)
def test_grad_reverse(coeff, grad, expected):
    np.testing.assert_array_equal(grad_reverse(np.array(grad), coeff), expected)


def test_grad_reverse_rejects_negative_coeff():
    with pytest.raises(ValueError):
        grad_reverse(np.ones(2), -1.0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=10))
def test_double_reversal_is_identity(values):
    g = np.array(values)
    np.testing.assert_array_equal(grad_reverse(grad_reverse(g, 1.0), 1.0), g)


def scalar_net(value):
    return MlpParams([Layer(np.array([[value]]), np.zeros(1))])


def scalar_grad(value):
    return GradBundle([np.array([[value]])], [np.zeros(1)])


def test_plain_sgd_step():
    new, _ = sgd_step(scalar_net(1.0), scalar_grad(2.0), lr=0.1, momentum=0.0)
    assert new.layers[0].weight[0, 0] == pytest.approx(0.8, abs=1e-15)


def test_zero_grad_leaves_params():
    net = init_mlp([3, 4], ["relu"], make_rng(0))
    new, _ = sgd_step(net, GradBundle.zeros_like(net), lr=0.5, momentum=0.9)
    np.testing.assert_array_equal(new.layers[0].weight, net.layers[0].weight)


def test_momentum_matches_hand_recursion():
    p, v = 1.0, 0.0
    net, vel = scalar_net(1.0), None
    for g in (2.0, -0.5):
        v = 0.9 * v + g
        p = p - 0.1 * v
        net, vel = sgd_step(net, scalar_grad(g), lr=0.1, momentum=0.9, velocity=vel)
    assert abs(net.layers[0].weight[0, 0] - p) < 1e-12


def test_tiny_lr_is_bitwise_noop():
    net = init_mlp([3, 4, 2], ["relu", "identity"], make_rng(2))
    for layer in net.layers:
        layer.bias[:] = 0.5
    grads = GradBundle([np.ones((3, 4)), np.ones((4, 2))], [np.ones(4), np.ones(2)])
    new, _ = sgd_step(net, grads, lr=1e-300)
    for a, b in zip(new.arrays(), net.arrays()):
        np.testing.assert_array_equal(a, b)


def test_sgd_rejects_bad_inputs():
    net = scalar_net(1.0)
    with pytest.raises(ValueError):
        sgd_step(net, scalar_grad(1.0), lr=0.0)
    with pytest.raises(ValueError):
        sgd_step(net, scalar_grad(1.0), lr=0.1, momentum=1.0)
    bad = GradBundle([np.ones((2, 2))], [np.zeros(2)])
    with pytest.raises(ValueError):
        sgd_step(net, bad, lr=0.1)


def test_finite_diff_on_quadratic():
    net = MlpParams([Layer(np.array([[1.0, 2.0]]), np.zeros(2))])
    fd = finite_diff_grad(lambda p: float(np.sum(p.layers[0].weight ** 2)), net)
    np.testing.assert_allclose(fd.weights[0], [[2.0, 4.0]], atol=1e-6)


def test_finite_diff_on_constant():
    net = init_mlp([2, 3], ["relu"], make_rng(0))
    fd = finite_diff_grad(lambda p: 4.2, net)
    for arr in fd.arrays():
        np.testing.assert_allclose(arr, 0.0, atol=1e-9)


def test_finite_diff_rejects_nonfinite_loss():
    with pytest.raises(FloatingPointError):
        finite_diff_grad(lambda p: float("nan"), scalar_net(1.0))


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(7, 1).standard_normal(5)
    np.testing.assert_array_equal(a, make_rng(7, 1).standard_normal(5))
    assert not np.array_equal(a, make_rng(7, 2).standard_normal(5))
    assert not np.array_equal(a, make_rng(8, 1).standard_normal(5))


@settings(max_examples=50)
@given(st.integers(0, 2**32), st.integers(1, 6), st.integers(1, 6))
def test_forward_is_pure(seed, dim, width):
    rng = make_rng(seed)
    net = init_mlp([dim, width, 2], ["relu", "sigmoid"], rng)
    x = rng.standard_normal((3, dim))
    a, _ = mlp_forward(net, x)
    b, _ = mlp_forward(net, x)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (3, 2)
