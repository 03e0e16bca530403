"""Closed-loop simulation and certificate validation.

The simulators roll out the true (possibly perturbed) closed loop in
batch: states are arrays of shape (n_samples, n_x) and every operation
vectorizes over the batch.  Perturbations are causal operators applied
channel by channel; the plant feedthrough from q to p must be strictly
lower triangular in the channel ordering so the loop resolves without
iteration.  Validation samples initial conditions from the certified
ellipsoid and checks forward invariance of the (extended-state)
Lyapunov level set and convergence to the equilibrium.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from roacert.iqc import IqcBlock
from roacert.nn import NeuralNetwork, eval_nn_full

__all__ = [
    "StaticOp",
    "SatOp",
    "LtiOp",
    "Trajectory",
    "simulate_nominal",
    "simulate_uncertain",
    "sample_ellipsoid",
    "ValidationReport",
    "validate_roa",
    "check_lyapunov_decrease",
    "check_iqc_accumulation",
    "pendulum_nonlinearity_samples",
    "lti_operator_samples",
    "trajectory_csv",
    "ellipse_slice_points",
    "write_ellipse_csv",
]


# --- perturbation operators -------------------------------------------------

class StaticOp:
    """Memoryless scalar operator q = f(p), vectorized over the batch."""

    def __init__(self, f: Callable[[np.ndarray], np.ndarray], description: str = ""):
        self.f = f
        self.description = description

    def reset(self, batch: int) -> None:
        pass

    def step(self, p: np.ndarray) -> np.ndarray:
        return self.f(p)


class SatOp(StaticOp):
    """Symmetric saturation at +/- u_max."""

    def __init__(self, u_max: float):
        super().__init__(lambda p: np.clip(p, -u_max, u_max), f"sat(+/-{u_max})")
        self.u_max = float(u_max)


class LtiOp:
    """Causal SISO LTI operator in state-space form, batch-capable.

    The l2-gain of the first-order form k/(z - a) is |k| / (1 - |a|),
    which :func:`lti_operator_samples` uses to normalize draws.
    """

    def __init__(self, a: np.ndarray, b: np.ndarray, c: np.ndarray, d: float,
                 description: str = ""):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.asarray(b, dtype=float).reshape(-1)
        self.c = np.asarray(c, dtype=float).reshape(-1)
        self.d = float(d)
        self.description = description
        if np.any(np.abs(np.linalg.eigvals(self.a)) >= 1.0):
            raise ValueError("operator state matrix must be Schur stable")
        self._state: np.ndarray | None = None

    def reset(self, batch: int) -> None:
        self._state = np.zeros((batch, self.a.shape[0]))

    def step(self, p: np.ndarray) -> np.ndarray:
        if self._state is None:
            raise RuntimeError("call reset() before stepping")
        q = self._state @ self.c + self.d * p
        self._state = self._state @ self.a.T + np.outer(p, self.b)
        return q


# --- rollouts ---------------------------------------------------------------

@dataclass
class Trajectory:
    """Batched rollout: x is (T+1, K, n_x); u is (T, K, n_u).

    ``zeta`` additionally carries the virtual IQC filter states when the
    rollout tracks an extended system, and ``p``/``q`` the perturbation
    port signals.
    """

    x: np.ndarray
    u: np.ndarray
    zeta: np.ndarray | None = None
    p: np.ndarray | None = None
    q: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.u.shape[0]

    def single(self, k: int = 0) -> "Trajectory":
        """Extract sample k as a batch of one."""
        pick = lambda a: None if a is None else a[:, k : k + 1, :]
        return Trajectory(pick(self.x), pick(self.u), pick(self.zeta),
                          pick(self.p), pick(self.q))


def _as_batch(x0: np.ndarray) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    return x0[None, :] if x0.ndim == 1 else x0


def simulate_nominal(plant, nn: NeuralNetwork, x0: np.ndarray, steps: int) -> Trajectory:
    """Roll out x+ = A x + B pi(x) for a batch of initial states."""
    x = _as_batch(x0)
    K, n = x.shape
    A, B = plant.A, plant.B
    xs = np.empty((steps + 1, K, n))
    us = np.empty((steps, K, B.shape[1]))
    xs[0] = x
    for k in range(steps):
        u, _, _ = eval_nn_full(nn, xs[k])
        us[k] = u
        xs[k + 1] = xs[k] @ A.T + u @ B.T
    return Trajectory(xs, us)


def _check_channel_order(D1: np.ndarray) -> None:
    if np.any(np.triu(D1) != 0.0):
        raise ValueError(
            "q -> p feedthrough must be strictly lower triangular in the "
            "channel ordering to resolve the loop sequentially"
        )


def simulate_uncertain(
    plant,
    nn: NeuralNetwork,
    ops: Sequence,
    x0: np.ndarray,
    steps: int,
    blocks: Sequence[IqcBlock] = (),
) -> Trajectory:
    """Roll out the perturbed loop x+ = A x + B1 q + B2 pi(x).

    ``ops[j]`` produces q_j from p_j = C_j x + D1_j q + D2_j pi(x); the
    channels are resolved in index order.  When ``blocks`` are given,
    the corresponding IQC filter states are simulated alongside (from
    zero) and returned stacked into ``zeta = (x, psi_blocks...)``.
    """
    x = _as_batch(x0)
    K, n = x.shape
    n_q, n_u = plant.n_q, plant.n_u
    if len(ops) != n_q:
        raise ValueError(f"need {n_q} channel operators, got {len(ops)}")
    _check_channel_order(plant.D1)
    for op in ops:
        op.reset(K)
    psi = [np.zeros((K, b.filter.n_psi)) for b in blocks]
    n_zeta = n + sum(b.filter.n_psi for b in blocks)

    xs = np.empty((steps + 1, K, n))
    us = np.empty((steps, K, n_u))
    ps = np.empty((steps, K, plant.n_p))
    qs = np.empty((steps, K, n_q))
    zs = np.empty((steps + 1, K, n_zeta))
    xs[0] = x
    zs[0] = np.hstack([x] + psi)
    for k in range(steps):
        u, v_phi, w_phi = eval_nn_full(nn, xs[k])
        q = np.zeros((K, n_q))
        p = np.zeros((K, plant.n_p))
        for j in range(n_q):
            p[:, j] = xs[k] @ plant.C[j] + q @ plant.D1[j] + u @ plant.D2[j]
            q[:, j] = ops[j].step(p[:, j])
        us[k], ps[k], qs[k] = u, p, q
        xs[k + 1] = xs[k] @ plant.A.T + q @ plant.B1.T + u @ plant.B2.T
        new_psi = []
        for b, s in zip(blocks, psi):
            if b.channel.kind == "plant":
                in_p = p[:, list(b.channel.p_idx)]
                in_q = q[:, list(b.channel.q_idx)]
            else:
                rows_p = list(b.channel.p_idx) or slice(None)
                rows_q = list(b.channel.q_idx) or slice(None)
                in_p = v_phi[:, rows_p]
                in_q = w_phi[:, rows_q]
            f = b.filter
            new_psi.append(s @ f.A.T + in_p @ f.B1.T + in_q @ f.B2.T)
        psi = new_psi
        zs[k + 1] = np.hstack([xs[k + 1]] + psi)
    return Trajectory(xs, us, zeta=zs, p=ps, q=qs)


# --- ellipsoid sampling and validation --------------------------------------

def sample_ellipsoid(P: np.ndarray, n: int, rng: np.random.Generator,
                     boundary: bool = False, center: np.ndarray | None = None
                     ) -> np.ndarray:
    """Draw n points from {x : (x-c)^T P (x-c) <= 1} (or its boundary)."""
    P = np.asarray(P, dtype=float)
    d = P.shape[0]
    L = np.linalg.cholesky(P)
    s = rng.standard_normal((n, d))
    s /= np.linalg.norm(s, axis=1, keepdims=True)
    if not boundary:
        s *= rng.uniform(0.0, 1.0, (n, 1)) ** (1.0 / d)
    x = np.linalg.solve(L.T, s.T).T
    if center is not None:
        x = x + np.asarray(center, dtype=float)
    return x


@dataclass
class ValidationReport:
    """Outcome of Monte-Carlo validation of an ellipsoidal certificate."""

    n_samples: int
    steps: int
    max_level: float
    invariance_violations: int
    nonconverged: int
    conv_tol: float
    inv_tol: float
    worst_x0: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def fraction_converged(self) -> float:
        if self.n_samples == 0:
            return 1.0
        return 1.0 - self.nonconverged / self.n_samples

    @property
    def passed(self) -> bool:
        return self.invariance_violations == 0 and self.nonconverged == 0

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict}: {self.n_samples} samples, {self.steps} steps, "
            f"max level {self.max_level:.6g}, "
            f"{self.invariance_violations} invariance violations, "
            f"{self.nonconverged} non-converged"
        )


def _levels(traj_states: np.ndarray, P: np.ndarray, center: np.ndarray | None
            ) -> np.ndarray:
    z = traj_states
    if center is not None:
        z = z - center
    return np.einsum("tki,ij,tkj->tk", z, P, z)


def validate_roa(
    P: np.ndarray,
    n_plant: int,
    run: Callable[[np.ndarray], Trajectory],
    n_samples: int = 5000,
    steps: int = 600,
    seed: int = 0,
    conv_tol: float = 1e-4,
    inv_tol: float = 1e-6,
    x_star: np.ndarray | None = None,
    boundary_fraction: float = 0.5,
) -> ValidationReport:
    """Monte-Carlo check of invariance and convergence for a certificate.

    ``P`` is the certified (possibly extended-state) Lyapunov matrix;
    initial plant states are sampled from its leading n_plant block,
    with IQC filter states starting at zero, so the initial level is at
    most one.  ``run`` maps an initial batch to a rollout.  Invariance
    requires V <= 1 + inv_tol along every trajectory; convergence
    requires the final plant state within conv_tol of the equilibrium
    (infinity norm).
    """
    rng = np.random.default_rng(seed)
    P = np.asarray(P, dtype=float)
    if n_samples == 0:
        return ValidationReport(0, 0, 0.0, 0, 0, conv_tol, inv_tol)
    P_x = P[:n_plant, :n_plant]
    n_bd = int(round(boundary_fraction * n_samples))
    x0 = np.vstack([
        sample_ellipsoid(P_x, n_bd, rng, boundary=True, center=x_star),
        sample_ellipsoid(P_x, n_samples - n_bd, rng, boundary=False, center=x_star),
    ])
    traj = run(x0)
    states = traj.zeta if traj.zeta is not None else traj.x
    center = None
    if x_star is not None:
        center = np.concatenate([x_star, np.zeros(P.shape[0] - n_plant)])
    V = _levels(states, P, center)
    max_level = float(V.max())
    violations = int(np.count_nonzero(np.any(V > 1.0 + inv_tol, axis=0)))
    x_fin = traj.x[-1] - (x_star if x_star is not None else 0.0)
    final_err = np.abs(x_fin).max(axis=1)
    nonconv = int(np.count_nonzero(final_err > conv_tol))
    # The reported offender is the sample with the worst level or, when
    # invariance holds, the slowest-converging one.
    if violations:
        worst = int(np.argmax(V.max(axis=0)))
    else:
        worst = int(np.argmax(final_err))
    return ValidationReport(
        n_samples=n_samples, steps=traj.steps, max_level=max_level,
        invariance_violations=violations, nonconverged=nonconv,
        conv_tol=conv_tol, inv_tol=inv_tol, worst_x0=x0[worst].copy(),
    )


def check_lyapunov_decrease(P: np.ndarray, traj: Trajectory, tol: float = 1e-9,
                            center: np.ndarray | None = None) -> float:
    """Largest one-step increase of V inside the unit level set.

    Returns max over samples/steps of V(k+1) - V(k) restricted to
    V(k) <= 1; nonpositive (up to tol) when the certificate is honest.
    """
    states = traj.zeta if traj.zeta is not None else traj.x
    V = _levels(states, np.asarray(P, dtype=float), center)
    dV = V[1:] - V[:-1]
    inside = V[:-1] <= 1.0
    if not np.any(inside):
        return 0.0
    return float(dV[inside].max())


def check_iqc_accumulation(block: IqcBlock, theta: np.ndarray,
                           p: np.ndarray, q: np.ndarray) -> float:
    """Minimum partial sum of r^T M(theta) r along a single channel record.

    ``p``/``q`` are (T, n_p)/(T, n_q) signal histories of the block's
    channel.  A hard IQC satisfied by the recorded perturbation makes
    every partial sum nonnegative (up to numerics).
    """
    from roacert.iqc import simulate_filter

    r = simulate_filter(block.filter, p, q)
    M = block.multipliers.multiplier(np.atleast_1d(theta))
    vals = np.einsum("ti,ij,tj->t", r, M, r)
    return float(np.cumsum(vals).min())


# --- admissible perturbation samplers ---------------------------------------

def pendulum_nonlinearity_samples(
    rng: np.random.Generator,
    n: int,
    sector_hi: float,
    theta_bar: float,
    slope_hi: float,
) -> list[StaticOp]:
    """Sample static maps admissible for the q = theta - sin(theta) channel.

    The family mixes scaled copies of the true residual, linear gains in
    the sector, and piecewise-linear ramps that respect both the sector
    bound on |p| <= theta_bar and the slope bound.
    """
    ops: list[StaticOp] = [StaticOp(lambda p: p - np.sin(p), "p - sin(p)")]
    while len(ops) < n:
        kind = rng.integers(3)
        if kind == 0:
            g = float(rng.uniform(0.0, 1.0))
            ops.append(StaticOp(lambda p, g=g: g * (p - np.sin(p)),
                                f"{g:.3f}*(p - sin p)"))
        elif kind == 1:
            k = float(rng.uniform(0.0, sector_hi))
            ops.append(StaticOp(lambda p, k=k: k * p, f"{k:.4f}*p"))
        else:
            L = float(rng.uniform(0.5 * slope_hi, slope_hi))
            c_min = theta_bar * max(0.0, 1.0 - sector_hi / L)
            c = float(rng.uniform(c_min, theta_bar))
            ops.append(StaticOp(
                lambda p, L=L, c=c: np.sign(p) * L * np.maximum(np.abs(p) - c, 0.0),
                f"ramp(L={L:.3f}, c={c:.3f})",
            ))
    return ops[:n]


def lti_operator_samples(rng: np.random.Generator, n: int, gain_bound: float
                         ) -> list:
    """Sample causal LTI operators with l2-gain at most ``gain_bound``.

    Mixes static gains, scaled delays and first-order lags k/(z - a)
    normalized through the closed-form gain |k| / (1 - |a|).
    """
    ops: list = []
    while len(ops) < n:
        kind = rng.integers(3)
        rho = float(rng.uniform(0.0, 1.0))
        if kind == 0:
            g = float(rng.choice([-1.0, 1.0])) * rho * gain_bound
            ops.append(StaticOp(lambda p, g=g: g * p, f"gain {g:.3f}"))
        elif kind == 1:
            k = float(rng.choice([-1.0, 1.0])) * rho * gain_bound
            ops.append(LtiOp([[0.0]], [1.0], [k], 0.0, f"delay gain {k:.3f}"))
        else:
            a = float(rng.uniform(-0.9, 0.9))
            k = float(rng.choice([-1.0, 1.0])) * rho * gain_bound * (1.0 - abs(a))
            ops.append(LtiOp([[a]], [1.0], [k], 0.0, f"lag {k:.3f}/(z-{a:.3f})"))
    return ops[:n]


# --- exports ----------------------------------------------------------------

def trajectory_csv(path, traj: Trajectory, sample: int = 0,
                   P: np.ndarray | None = None,
                   center: np.ndarray | None = None) -> None:
    """Write one sample of a rollout as CSV: k, x..., u..., and V if P given."""
    x = traj.x[:, sample, :]
    u = traj.u[:, sample, :]
    n_x, n_u = x.shape[1], u.shape[1]
    header = ["k"] + [f"x{i}" for i in range(n_x)] + [f"u{i}" for i in range(n_u)]
    states = traj.zeta[:, sample, :] if traj.zeta is not None else x
    if P is not None:
        header.append("V")
        z = states - center if center is not None else states
        V = np.einsum("ki,ij,kj->k", z, P, z)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(x.shape[0]):
            row = [k] + list(x[k]) + list(u[k] if k < u.shape[0] else np.full(n_u, np.nan))
            if P is not None:
                row.append(V[k])
            w.writerow(row)


def ellipse_slice_points(P: np.ndarray, i: int = 0, j: int = 1, n: int = 200,
                         center: np.ndarray | None = None) -> np.ndarray:
    """Boundary of the (i, j) coordinate slice of {x : x^T P x <= 1}.

    The slice fixes all other coordinates at the center, so the curve is
    the unit level set of the 2x2 subblock of P.  Returns (n, 2) points.
    """
    P = np.asarray(P, dtype=float)
    sub = P[np.ix_([i, j], [i, j])]
    L = np.linalg.cholesky(sub)
    t = np.linspace(0.0, 2.0 * np.pi, n)
    circ = np.vstack([np.cos(t), np.sin(t)])
    pts = np.linalg.solve(L.T, circ).T
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)[[i, j]]
    return pts


def write_ellipse_csv(path, P: np.ndarray, i: int = 0, j: int = 1, n: int = 200,
                      center: np.ndarray | None = None) -> None:
    """Write an ellipse slice boundary as CSV with columns x_i, x_j."""
    pts = ellipse_slice_points(P, i, j, n, center)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}", f"x{j}"])
        w.writerows(pts.tolist())
