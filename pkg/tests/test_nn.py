"""Tests for the controller representation and its LFT form."""

import numpy as np
import pytest

from helpers import random_network
from roacert.nn import (Activation, DimensionError, Equilibrium, NeuralNetwork,
                        build_lft, eval_nn, eval_nn_full, eval_via_lft,
                        find_equilibrium, load_weights, propagate_equilibrium,
                        save_weights, verify_equilibrium)
from roacert.lmi import LtiPlant


def test_activation_values():
    act = Activation("tanh")
    assert act(np.array([0.0]))[0] == 0.0
    assert abs(act(np.array([1.0]))[0] - np.tanh(1.0)) < 1e-15
    assert abs(act.deriv(0.0) - 1.0) < 1e-15
    relu = Activation("relu")
    np.testing.assert_allclose(relu(np.array([-2.0, 3.0])), [0.0, 3.0])
    leaky = Activation("leaky_relu", leaky_slope=0.1)
    np.testing.assert_allclose(leaky(np.array([-2.0, 3.0])), [-0.2, 3.0])
    sig = Activation("sigmoid")
    assert abs(sig(np.array([0.0]))[0] - 0.5) < 1e-15


def test_dimension_errors_name_the_layer():
    W1 = np.zeros((3, 2))
    W2 = np.zeros((4, 5))  # expects input 5, previous produces 3
    with pytest.raises(DimensionError, match="layer 2"):
        NeuralNetwork(
            ((W1, np.zeros(3)), (W2, np.zeros(4))),
            (np.zeros((1, 4)), np.zeros(1)),
            (Activation("tanh"),) * 2,
        )


def test_eval_matches_hand_computation():
    W1 = np.array([[1.0, -0.5], [0.2, 0.3]])
    b1 = np.array([0.1, -0.2])
    Wout = np.array([[0.7, -1.1]])
    bout = np.array([0.05])
    nn = NeuralNetwork(((W1, b1),), (Wout, bout), (Activation("tanh"),))
    x = np.array([0.4, -0.3])
    v = W1 @ x + b1
    w = np.tanh(v)
    u = Wout @ w + bout
    got_u, got_v, got_w = eval_nn_full(nn, x)
    np.testing.assert_allclose(got_v, v, atol=1e-15)
    np.testing.assert_allclose(got_w, w, atol=1e-15)
    np.testing.assert_allclose(got_u, u, atol=1e-15)


def test_batched_eval_matches_loop():
    rng = np.random.default_rng(3)
    nn = random_network(rng, 3, [5, 4], n_u=2)
    X = rng.standard_normal((7, 3))
    U = eval_nn(nn, X)
    for i in range(7):
        np.testing.assert_allclose(U[i], eval_nn(nn, X[i]), atol=1e-14)


def test_lft_block_structure():
    rng = np.random.default_rng(11)
    nn = random_network(rng, 2, [4, 3, 2], n_u=1)
    lft = build_lft(nn)
    W1 = nn.layers[0][0]
    np.testing.assert_allclose(lft.N_vx[:4, :], W1)
    assert np.all(lft.N_vx[4:, :] == 0.0)
    # Strictly block lower triangular coupling: w feeds only later layers.
    np.testing.assert_allclose(lft.N_vw[:4, :], 0.0)
    np.testing.assert_allclose(lft.N_vw[4:7, :4], nn.layers[1][0])
    np.testing.assert_allclose(lft.N_vw[4:7, 4:], 0.0)
    np.testing.assert_allclose(lft.N_vw[7:, 4:7], nn.layers[2][0])
    # Output reads only the last layer.
    np.testing.assert_allclose(lft.N_uw[:, :7], 0.0)
    np.testing.assert_allclose(lft.N_uw[:, 7:], nn.output[0])
    np.testing.assert_allclose(lft.N_ux, 0.0)


@pytest.mark.parametrize("kind", ["tanh", "relu", "sigmoid", "leaky_relu"])
def test_lft_evaluation_agrees(kind):
    rng = np.random.default_rng(29)
    for trial in range(10):
        widths = list(rng.integers(1, 6, size=rng.integers(1, 4)))
        nn = random_network(rng, 3, widths, n_u=2, kind=kind, bias_scale=0.3)
        x = rng.standard_normal(3)
        np.testing.assert_allclose(eval_via_lft(nn, x), eval_nn(nn, x),
                                   atol=1e-12)


def test_equilibrium_propagation_and_verification():
    rng = np.random.default_rng(5)
    nn = random_network(rng, 2, [3], n_u=1)  # zero biases -> origin fixed
    eq = propagate_equilibrium(nn, np.zeros(2))
    assert np.all(eq.v_star == 0.0) and np.all(eq.u_star == 0.0)
    plant = LtiPlant(np.array([[0.5, 0.1], [0.0, 0.7]]), np.array([[0.0], [1.0]]))
    report = verify_equilibrium(plant, nn, eq)
    assert report.passed


def test_verify_equilibrium_rejects_wrong_point():
    rng = np.random.default_rng(6)
    nn = random_network(rng, 1, [2], bias_scale=0.5)
    plant = LtiPlant(np.array([[0.5]]), np.array([[1.0]]))
    bad = Equilibrium(np.array([1.0]), np.zeros(1), np.zeros(2), np.zeros(2))
    report = verify_equilibrium(plant, nn, bad)
    assert not report.passed


def test_find_equilibrium_biased_scalar_loop():
    rng = np.random.default_rng(7)
    nn = random_network(rng, 1, [3], weight_scale=0.4, bias_scale=0.3)
    plant = LtiPlant(np.array([[0.5]]), np.array([[0.6]]))
    eq = find_equilibrium(plant, nn)
    report = verify_equilibrium(plant, nn, eq, tol=1e-8)
    assert report.passed


def test_weights_json_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    nn = random_network(rng, 3, [4, 2], n_u=2, kind="leaky_relu", bias_scale=1.0)
    path = tmp_path / "weights.json"
    save_weights(nn, path)
    back = load_weights(path)
    x = rng.standard_normal(3)
    np.testing.assert_allclose(eval_nn(back, x), eval_nn(nn, x), atol=1e-15)
    assert back.activations[0].kind == "leaky_relu"


def test_output_map_network():
    rng = np.random.default_rng(13)
    C = rng.standard_normal((2, 4))
    nn = random_network(rng, 2, [3], n_u=1)
    nn = NeuralNetwork(nn.layers, nn.output, nn.activations, output_map=C)
    x = rng.standard_normal(4)
    lft = build_lft(nn)
    np.testing.assert_allclose(lft.N_vx[:3, :], nn.layers[0][0] @ C)
    np.testing.assert_allclose(eval_via_lft(nn, x), eval_nn(nn, x), atol=1e-13)
