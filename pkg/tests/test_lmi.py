"""Tests for LMI assembly and the sweep bookkeeping."""

import numpy as np
import pytest

from helpers import random_network
from roacert.bounds import propagate_bounds
from roacert.iqc import Channel, extend_system, off_by_one_iqc, static_sector_iqc
from roacert.lmi import (LtiPlant, SweepRow, UncertainPlant, assemble_nominal,
                         assemble_robust, sector_quadratic_form, sweep_delta_v)
from roacert.nn import Equilibrium, build_lft, propagate_equilibrium
from roacert.sdp import solve


def _scalar_setup(a=1.1, b=1.0, w1=1.0, w2=-0.5, delta_v=0.5):
    from roacert.nn import Activation, NeuralNetwork

    plant = LtiPlant(np.array([[a]]), np.array([[b]]))
    nn = NeuralNetwork(((np.array([[w1]]), np.zeros(1)),),
                       (np.array([[w2]]), np.zeros(1)),
                       (Activation("tanh"),))
    lft = build_lft(nn)
    eq = propagate_equilibrium(nn, np.zeros(1))
    bounds = propagate_bounds(nn, eq, delta_v)
    return plant, nn, lft, eq, bounds


def test_sector_quadratic_form_identity():
    rng = np.random.default_rng(7)
    n = 3
    alpha = rng.uniform(-0.5, 0.5, n)
    beta = alpha + rng.uniform(0.1, 1.0, n)
    lam = rng.uniform(0.0, 2.0, n)
    Q = sector_quadratic_form(alpha, beta, lam)
    for _ in range(20):
        dv = rng.standard_normal(n)
        dw = rng.standard_normal(n)
        z = np.concatenate([dv, dw])
        want = sum(2 * lam[i] * (dw[i] - alpha[i] * dv[i]) * (beta[i] * dv[i] - dw[i])
                   for i in range(n))
        assert abs(z @ Q @ z - want) < 1e-12


def test_sector_quadratic_form_rejects_negative_lambda():
    with pytest.raises(ValueError):
        sector_quadratic_form([0.0], [1.0], [-1.0])


def test_nominal_decrease_constraint_matches_hand_formula():
    plant, nn, lft, eq, bounds = _scalar_setup()
    problem = assemble_nominal(plant, lft, eq, bounds, first_layer_width=1)
    con = next(c for c in problem.constraints if c.name == "lyapunov_decrease")
    P = np.array([[3.0]])
    lam = np.array([0.7])
    F = con.evaluate({"P": P, "lambda": lam})
    # Basis (dx, dw): x+ = a dx + b w2 dw, sector on (v, w) = (w1 dx, dw).
    a, b, w1, w2 = 1.1, 1.0, 1.0, -0.5
    alpha, beta = bounds.alpha[0], bounds.beta[0]
    for _ in range(10):
        dx, dw = np.random.default_rng(8).standard_normal(2)
        z = np.array([dx, dw])
        xp = a * dx + b * w2 * dw
        want = (3.0 * xp**2 - 3.0 * dx**2
                + 2 * 0.7 * (dw - alpha * w1 * dx) * (beta * w1 * dx - dw))
        assert abs(z @ F @ z - want) < 1e-10


def test_nominal_containment_structure():
    plant, nn, lft, eq, bounds = _scalar_setup(delta_v=0.5)
    problem = assemble_nominal(plant, lft, eq, bounds, first_layer_width=1)
    con = next(c for c in problem.constraints if c.name.startswith("containment"))
    assert con.sense == ">=0"
    assert abs(con.const[0, 0] - 0.25) < 1e-15  # delta_v^2
    assert abs(con.const[0, 1] - 1.0) < 1e-15  # first-layer row W1
    F = con.evaluate({"P": np.array([[5.0]]), "lambda": np.zeros(1)})
    np.testing.assert_allclose(F, [[0.25, 1.0], [1.0, 5.0]])


def test_scalar_instance_certifies_at_containment_limit():
    plant, nn, lft, eq, bounds = _scalar_setup()
    problem = assemble_nominal(plant, lft, eq, bounds, first_layer_width=1)
    cert = solve(problem)
    assert cert.status == "optimal"
    # Closed loop is contractive on the box, so the containment LMI is
    # the active constraint: P = (w1 / delta_v)^2 = 4.
    assert abs(cert.objective - 4.0) < 1e-5


def test_unstable_loop_is_infeasible():
    plant, nn, lft, eq, bounds = _scalar_setup(a=1.3, w2=0.2)
    problem = assemble_nominal(plant, lft, eq, bounds, first_layer_width=1)
    cert = solve(problem)
    assert cert.status == "infeasible"


def test_assemble_robust_rejects_nonzero_equilibrium():
    plant, nn, lft, eq, bounds = _scalar_setup()
    up = plant.to_uncertain()
    ext = extend_system(up, [])
    bad = Equilibrium(np.array([0.3]), np.zeros(1), np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError, match="origin"):
        assemble_robust(ext, lft, bounds, eq=bad)


def test_robust_without_blocks_matches_nominal():
    plant, nn, lft, eq, bounds = _scalar_setup()
    nom = solve(assemble_nominal(plant, lft, eq, bounds, first_layer_width=1))
    ext = extend_system(plant.to_uncertain(), [])
    rob = solve(assemble_robust(ext, lft, bounds, eq=eq, first_layer_width=1))
    assert nom.status == rob.status == "optimal"
    assert abs(nom.objective - rob.objective) < 1e-5


def test_robust_meta_and_variables():
    rng = np.random.default_rng(9)
    nn = random_network(rng, 2, [3], weight_scale=0.3)
    lft = build_lft(nn)
    eq = propagate_equilibrium(nn, np.zeros(2))
    bounds = propagate_bounds(nn, eq, 0.5)
    plant = UncertainPlant(
        A=0.8 * np.eye(2), B1=0.1 * np.eye(2)[:, :1], B2=np.array([[0.0], [1.0]]),
        C=np.array([[1.0, 0.0]]), D1=np.zeros((1, 1)), D2=np.zeros((1, 1)),
    )
    blocks = [
        static_sector_iqc(0.0, 0.3, Channel("plant", (0,), (0,)), "sector[0]"),
        off_by_one_iqc(np.zeros(3), np.ones(3), Channel("activation"),
                       "off_by_one[act]"),
    ]
    ext = extend_system(plant, blocks)
    problem = assemble_robust(ext, lft, bounds, eq=eq, first_layer_width=3)
    assert problem.meta["n_zeta"] == 2 + 0 + 3  # plant + sector + off-by-one
    names = [v.name for v in problem.variables]
    assert names[0] == "P" and "lambda" in names
    assert any("off_by_one" in n for n in names)
    # Containment rows pad W1 with zeros over the filter states.
    con = next(c for c in problem.constraints if c.name.startswith("containment"))
    assert con.dim == problem.meta["n_zeta"] + 1
    np.testing.assert_allclose(con.const[0, 3:], 0.0)


def test_validity_containment_rows():
    plant, nn, lft, eq, bounds = _scalar_setup()
    problem = assemble_nominal(plant, lft, eq, bounds, first_layer_width=1,
                               extra_containments=[(0.73, np.array([1.0]))])
    con = next(c for c in problem.constraints if c.name.startswith("validity"))
    assert abs(con.const[0, 0] - 0.73**2) < 1e-15


def test_problem_dump_mentions_every_variable():
    plant, nn, lft, eq, bounds = _scalar_setup()
    problem = assemble_nominal(plant, lft, eq, bounds, first_layer_width=1)
    text = problem.dump()
    assert "P: sym dim=1" in text
    assert "lambda: vec dim=1" in text
    assert "lyapunov_decrease" in text


def test_sweep_bookkeeping():
    class Stub:
        def __init__(self, status, P_x=None):
            self.status = status
            self.P_x = P_x

    table = {
        0.1: Stub("optimal", np.diag([4.0, 4.0])),
        0.2: Stub("optimal", np.diag([1.0, 1.0])),
        0.3: Stub("infeasible"),
    }
    result = sweep_delta_v(lambda dv: table[round(dv, 1)], [0.1, 0.2, 0.3])
    assert [r.feasible for r in result.rows] == [True, True, False]
    assert result.largest_feasible == 0.2
    assert result.best_volume.delta_v == 0.2  # det(P^-1) = 1 > 1/16
    assert result.rows[2].trace_Px is None


def test_sweep_records_errors_per_point():
    def boom(dv):
        raise RuntimeError("no assembly at this point")

    result = sweep_delta_v(boom, [0.5])
    assert not result.rows[0].feasible
    assert "error" in result.rows[0].status
    with pytest.raises(ValueError):
        sweep_delta_v(boom, [])
