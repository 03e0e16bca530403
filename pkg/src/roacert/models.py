"""Example plant models in perturbation form.

Two benchmark loops ship with the library: an inverted pendulum whose
gravity nonlinearity and torque saturation are pulled out as
perturbation channels, and linearized vehicle lateral dynamics under
steering saturation plus a norm-bounded LTI actuator uncertainty.  Both
are discretized with forward Euler and expose matching true-dynamics
simulators for validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from roacert.lmi import UncertainPlant
from roacert.nn import Activation, NeuralNetwork
from roacert.sim import LtiOp, SatOp, StaticOp

__all__ = [
    "PendulumParams",
    "VehicleParams",
    "pendulum_plant",
    "pendulum_nonlinearity_bounds",
    "pendulum_true_ops",
    "vehicle_plant",
    "vehicle_true_ops",
    "lqr_gain",
    "tanh_lqr_controller",
]


@dataclass(frozen=True)
class PendulumParams:
    """Inverted pendulum on a rigid rod, torque-controlled.

    Dynamics: m l^2 theta'' = m g l sin(theta) - mu theta' + sat(u),
    discretized with forward Euler at step ``dt``.  ``theta_bar`` bounds
    the region on which the gravity residual channel is described.
    """

    m: float = 0.15
    l: float = 0.5
    mu: float = 0.5
    g: float = 9.81
    u_max: float = 0.7
    dt: float = 0.02
    theta_bar: float = 0.73


def pendulum_plant(par: PendulumParams = PendulumParams()) -> UncertainPlant:
    """Pendulum in perturbation form with two channels.

    Channel 0: p = theta, q = theta - sin(theta) (gravity residual);
    channel 1: p = u, q = sat(u).  Writing sin(theta) = theta - q0 makes
    the nominal A matrix use the linearized gravity term, and the torque
    enters only through the saturation channel (B2 = 0).
    """
    dt, g, l = par.dt, par.g, par.l
    ml2 = par.m * par.l**2
    A = np.array([
        [1.0, dt],
        [dt * g / l, 1.0 - dt * par.mu / ml2],
    ])
    B1 = np.array([
        [0.0, 0.0],
        [-dt * g / l, dt / ml2],
    ])
    B2 = np.zeros((2, 1))
    C = np.array([
        [1.0, 0.0],
        [0.0, 0.0],
    ])
    D1 = np.zeros((2, 2))
    D2 = np.array([
        [0.0],
        [1.0],
    ])
    return UncertainPlant(A=A, B1=B1, B2=B2, C=C, D1=D1, D2=D2)


def pendulum_nonlinearity_bounds(par: PendulumParams = PendulumParams()):
    """Sector and slope bounds of theta - sin(theta) on |theta| <= theta_bar.

    The residual is odd and convex on [0, pi], so the sector is
    [0, 1 - sin(t)/t] and the slope range [0, 1 - cos(t)] at t = theta_bar.
    """
    t = par.theta_bar
    sector = (0.0, 1.0 - np.sin(t) / t)
    slope = (0.0, 1.0 - np.cos(t))
    return sector, slope


def pendulum_true_ops(par: PendulumParams = PendulumParams()):
    """Channel operators reproducing the true pendulum dynamics."""
    return [
        StaticOp(lambda p: p - np.sin(p), "p - sin(p)"),
        SatOp(par.u_max),
    ]


@dataclass(frozen=True)
class VehicleParams:
    """Linearized vehicle lateral dynamics, steering-controlled.

    State (e, e', e_theta, e_theta'): lateral offset to the lane edge
    and heading error, with their rates.  ``gain_bound`` is the l2-gain
    budget of the LTI actuator uncertainty added on top of saturation.
    """

    U: float = 28.0
    C_af: float = -1.232e5
    C_ar: float = -1.042e5
    m: float = 1.67e3
    I_z: float = 2.1e3
    a: float = 0.99
    b: float = 1.7
    u_max: float = np.pi / 6.0
    dt: float = 0.02
    gain_bound: float = 0.1


def _vehicle_ct(par: VehicleParams):
    U, m, Iz, a, b = par.U, par.m, par.I_z, par.a, par.b
    Cf, Cr = par.C_af, par.C_ar
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, (Cf + Cr) / (m * U), -(Cf + Cr) / m, (a * Cf - b * Cr) / (m * U)],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, (a * Cf - b * Cr) / (Iz * U), -(a * Cf - b * Cr) / Iz,
         (a**2 * Cf + b**2 * Cr) / (Iz * U)],
    ])
    B = np.array([[0.0], [-Cf / m], [0.0], [-a * Cf / Iz]])
    return A, B


def vehicle_plant(par: VehicleParams = VehicleParams()) -> UncertainPlant:
    """Vehicle in perturbation form with two chained channels.

    Channel 0: p = u, q = sat(u); channel 1: p = sat(u),
    q = Delta_LTI(sat(u)).  The perturbed input sat(u) + q1 drives the
    plant, so both B1 columns equal the discretized input column and the
    direct input matrix B2 is zero.
    """
    A_ct, B_ct = _vehicle_ct(par)
    A = np.eye(4) + par.dt * A_ct
    Bd = par.dt * B_ct
    B1 = np.hstack([Bd, Bd])
    B2 = np.zeros((4, 1))
    C = np.zeros((2, 4))
    D1 = np.array([
        [0.0, 0.0],
        [1.0, 0.0],
    ])
    D2 = np.array([
        [1.0],
        [0.0],
    ])
    return UncertainPlant(A=A, B1=B1, B2=B2, C=C, D1=D1, D2=D2)


def vehicle_true_ops(par: VehicleParams = VehicleParams(),
                     actuator_op=None):
    """Channel operators for the vehicle loop.

    ``actuator_op`` is the LTI uncertainty on the saturated input; the
    default is a first-order lag at the full gain budget.
    """
    if actuator_op is None:
        a = 0.5
        actuator_op = LtiOp([[a]], [1.0], [par.gain_bound * (1.0 - a)], 0.0,
                            "default lag")
    return [SatOp(par.u_max), actuator_op]


# --- baseline controllers ---------------------------------------------------

def lqr_gain(A: np.ndarray, B: np.ndarray, Q: np.ndarray | None = None,
             R: np.ndarray | None = None) -> np.ndarray:
    """Discrete-time LQR gain K for u = -K x."""
    from scipy.linalg import solve_discrete_are

    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.eye(A.shape[0]) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(B.shape[1]) if R is None else np.asarray(R, dtype=float)
    S = solve_discrete_are(A, B, Q, R)
    return np.linalg.solve(R + B.T @ S @ B, B.T @ S @ A)


def tanh_lqr_controller(A: np.ndarray, B: np.ndarray,
                        scales=(1.0,), Q=None, R=None,
                        K: np.ndarray | None = None) -> NeuralNetwork:
    """A stabilizing tanh network that linearizes to the LQR law at 0.

    Layer i squashes with gain scales[i]; the output layer rescales so
    that the network matches u = -K x to first order at the origin.
    Larger scales saturate earlier, making the controller genuinely
    nonlinear on the region of interest.
    """
    if K is None:
        K = lqr_gain(A, B, Q, R)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n_u = K.shape[0]
    layers, widths = [], []
    W = float(scales[0]) * K
    for s in list(scales)[1:]:
        layers.append((W, np.zeros(W.shape[0])))
        W = float(s) * np.eye(n_u)
    layers.append((W, np.zeros(W.shape[0])))
    total = float(np.prod([float(s) for s in scales]))
    out = (-np.eye(n_u) / total, np.zeros(n_u))
    return NeuralNetwork(tuple(layers), out, (Activation("tanh"),) * len(layers))
