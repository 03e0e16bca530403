"""Tests for the bundled benchmark models and baseline controllers."""

import numpy as np

from roacert.models import (PendulumParams, VehicleParams, lqr_gain,
                            pendulum_nonlinearity_bounds, pendulum_plant,
                            pendulum_true_ops, tanh_lqr_controller,
                            vehicle_plant, vehicle_true_ops)
from roacert.nn import eval_nn
from roacert.sim import simulate_uncertain


def test_pendulum_matrices():
    par = PendulumParams()
    plant = pendulum_plant(par)
    ml2 = par.m * par.l**2
    np.testing.assert_allclose(
        plant.A,
        [[1.0, par.dt],
         [par.dt * par.g / par.l, 1.0 - par.dt * par.mu / ml2]],
    )
    # Gravity residual enters with -dt*g/l, torque with dt/(m l^2).
    np.testing.assert_allclose(
        plant.B1,
        [[0.0, 0.0], [-par.dt * par.g / par.l, par.dt / ml2]],
    )
    np.testing.assert_allclose(plant.B2, 0.0)
    assert plant.n_q == 2 and plant.n_u == 1


def test_pendulum_nonlinearity_bounds_values():
    (a, b), (m, L) = pendulum_nonlinearity_bounds()
    assert a == 0.0 and m == 0.0
    assert abs(b - (1.0 - np.sin(0.73) / 0.73)) < 1e-15
    assert abs(L - (1.0 - np.cos(0.73))) < 1e-15
    assert abs(b - 0.0864800) < 1e-6
    assert abs(L - 0.2548256) < 1e-6
    # Soundness against a dense scan of the residual.
    t = np.linspace(-0.73, 0.73, 4001)
    t = t[t != 0.0]
    q = t - np.sin(t)
    assert np.all(q / t <= b + 1e-12) and np.all(q / t >= -1e-12)
    d = 1.0 - np.cos(t)
    assert d.max() <= L + 1e-12 and d.min() >= 0.0


def test_vehicle_matrices_and_channels():
    par = VehicleParams()
    plant = vehicle_plant(par)
    assert plant.A.shape == (4, 4)
    # Forward Euler: A - I has a factor dt in every nonzero entry.
    np.testing.assert_allclose((plant.A - np.eye(4))[0], [0.0, par.dt, 0.0, 0.0])
    # Both perturbation columns carry the input matrix; no direct input.
    np.testing.assert_allclose(plant.B1[:, 0], plant.B1[:, 1])
    np.testing.assert_allclose(plant.B2, 0.0)
    # Channel chain: p0 = u, p1 = q0 (the saturated input).
    np.testing.assert_allclose(plant.D2, [[1.0], [0.0]])
    np.testing.assert_allclose(plant.D1, [[0.0, 0.0], [1.0, 0.0]])


def test_lqr_gain_stabilizes():
    par = VehicleParams()
    plant = vehicle_plant(par)
    B = plant.B1[:, :1]
    K = lqr_gain(plant.A, B)
    eig = np.abs(np.linalg.eigvals(plant.A - B @ K))
    assert eig.max() < 1.0


def test_tanh_controller_linearizes_to_lqr():
    par = PendulumParams()
    plant = pendulum_plant(par)
    B = plant.B1[:, 1:2]
    K = lqr_gain(plant.A, B)
    for scales in [(1.0,), (2.0,), (1.5, 0.8)]:
        nn = tanh_lqr_controller(plant.A, B, scales=scales, K=K)
        # Numerical Jacobian at the origin equals -K.
        h = 1e-6
        J = np.array([
            (eval_nn(nn, h * e) - eval_nn(nn, -h * e)) / (2 * h)
            for e in np.eye(2)
        ]).T.reshape(1, 2)
        np.testing.assert_allclose(J, -K, atol=1e-6)
    # Linearized closed loop is Schur.
    eig = np.abs(np.linalg.eigvals(plant.A - B @ K))
    assert eig.max() < 1.0


def test_pendulum_closed_loop_converges_from_small_angle():
    par = PendulumParams()
    plant = pendulum_plant(par)
    nn = tanh_lqr_controller(plant.A, plant.B1[:, 1:2], scales=(2.0,))
    traj = simulate_uncertain(plant, nn, pendulum_true_ops(par),
                              np.array([0.2, 0.0]), 3000)
    assert np.abs(traj.x[-1]).max() < 1e-6
    # Saturation active at this angle would cap |u| at u_max.
    assert np.abs(traj.q[:, 0, 1]).max() <= par.u_max + 1e-12


def test_vehicle_true_ops_default_gain_budget():
    par = VehicleParams()
    ops = vehicle_true_ops(par)
    assert len(ops) == 2
    lag = ops[1]
    # Closed-form l2-gain |k|/(1-|a|) equals the budget.
    gain = abs(lag.c[0]) / (1.0 - abs(lag.a[0, 0]))
    assert abs(gain - par.gain_bound) < 1e-12


def test_vehicle_closed_loop_converges():
    par = VehicleParams()
    plant = vehicle_plant(par)
    B = plant.B1[:, :1]
    nn = tanh_lqr_controller(plant.A, B, scales=(1.0,))
    traj = simulate_uncertain(plant, nn, vehicle_true_ops(par),
                              np.array([0.1, 0.0, 0.02, 0.0]), 4000)
    assert np.abs(traj.x[-1]).max() < 1e-6
