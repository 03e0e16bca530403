"""Tests for conic lowering, solving and certificate verification."""

import numpy as np
import pytest

from roacert.bounds import propagate_bounds
from roacert.lmi import (LmiProblem, LtiPlant, MatrixConstraint, QuadTerm,
                         SymVar, VecVar, assemble_nominal)
from roacert.nn import build_lft, propagate_equilibrium
from roacert.sdp import (CvxpyBackend, RoaCertificate, lower, pack_sym, solve,
                         unpack_sym, verify_certificate)


def test_pack_round_trip_and_inner_product():
    rng = np.random.default_rng(12)
    for n in (1, 2, 5, 8):
        A = rng.standard_normal((n, n))
        A = A + A.T
        B = rng.standard_normal((n, n))
        B = B + B.T
        np.testing.assert_allclose(unpack_sym(pack_sym(A), n), A, atol=1e-14)
        assert abs(pack_sym(A) @ pack_sym(B) - np.trace(A @ B)) < 1e-10


def _closed_form_problem():
    # min P  s.t.  0.25 P - P <= -1,  P >= 1e-8. Optimum: P = 4/3.
    con = MatrixConstraint(
        name="decrease", dim=1, const=np.zeros((1, 1)),
        terms=[
            QuadTerm("P", np.array([[0.5]]), 1.0),
            QuadTerm("P", np.array([[1.0]]), -1.0),
        ],
        sense="<=0", eps=1.0,
    )
    return LmiProblem(
        variables=[SymVar("P", 1, floor=1e-8)],
        constraints=[con],
        objective={"P": np.eye(1)},
        meta={"n_G": 1},
    )


def test_closed_form_sdp_value():
    cert = solve(_closed_form_problem())
    assert cert.status == "optimal"
    assert abs(cert.objective - 4.0 / 3.0) < 1e-6


def test_infeasible_problem_detected():
    con = MatrixConstraint(
        name="impossible", dim=1, const=np.array([[1.0]]),
        terms=[QuadTerm("P", np.array([[1.0]]), 1.0)],
        sense="<=0", eps=0.0,
    )
    problem = LmiProblem([SymVar("P", 1, floor=1.0)], [con], {"P": np.eye(1)},
                         meta={"n_G": 1})
    cert = solve(problem)
    assert cert.status == "infeasible"
    assert cert.P is None


def test_lowered_cones_match_symbolic_evaluation():
    # The conic data and the symbolic constraints must describe the same
    # affine matrix map; probe with random assignments.
    rng = np.random.default_rng(13)
    plant = LtiPlant(np.array([[0.9, 0.1], [0.0, 0.8]]), np.array([[0.0], [1.0]]))
    from helpers import random_network

    nn = random_network(rng, 2, [3], weight_scale=0.5)
    lft = build_lft(nn)
    eq = propagate_equilibrium(nn, np.zeros(2))
    bounds = propagate_bounds(nn, eq, 0.4)
    problem = assemble_nominal(plant, lft, eq, bounds, first_layer_width=3)
    prog = lower(problem)
    by_name = {c.name: c for c in prog.psd_cones}
    offsets, pos = {}, 0
    for v in problem.variables:
        offsets[v.name] = pos
        pos += v.packed_len
    for _ in range(5):
        z = rng.standard_normal(pos)
        P = unpack_sym(z[offsets["P"] : offsets["P"] + 3], 2)
        lam = z[offsets["lambda"] : offsets["lambda"] + 3]
        assignment = {"P": P, "lambda": lam}
        for con in problem.constraints:
            F = con.evaluate(assignment)
            cone = by_name[con.name]
            G = unpack_sym(cone.h0 + cone.H @ z, con.dim)
            sgn = -1.0 if con.sense == "<=0" else 1.0
            np.testing.assert_allclose(G, sgn * F - con.eps * np.eye(con.dim),
                                       atol=1e-10)


def test_nonneg_rows_cover_lambda():
    problem = LmiProblem(
        variables=[SymVar("P", 1, floor=1e-8), VecVar("lam", 2, nonneg=(0, 1))],
        constraints=[MatrixConstraint(
            "c", 1, np.array([[-1.0]]),
            [QuadTerm("P", np.eye(1), 1.0),
             QuadTerm("lam", np.eye(1), 1.0, basis=(np.eye(1), -np.eye(1)))],
            "<=0", 0.0)],
        objective={"P": np.eye(1)},
        meta={"n_G": 1},
    )
    prog = lower(problem)
    assert prog.nonneg_rows.shape == (2, 3)
    np.testing.assert_allclose(prog.nonneg_rows[:, 1:], np.eye(2))


def test_psd_block_parameters_enforced():
    # One 2x2 PSD-parameter block; force the off-diagonal to want to blow
    # up and check the returned parameters stay PSD.
    idx = ((0, 1), (1, 2))
    basis = tuple(np.array([[v]]) for v in (1.0, -4.0, 1.0))
    con = MatrixConstraint(
        "c", 1, np.array([[1.0]]),
        [QuadTerm("X", np.eye(1), -1.0, basis=basis)],
        "<=0", 0.0,
    )
    problem = LmiProblem(
        variables=[VecVar("X", 3, psd_blocks=(idx,))],
        constraints=[con],
        objective={"X": np.array([1.0, 0.0, 1.0])},
        meta={},
    )
    cert_status, z, _ = CvxpyBackend().solve(lower(problem))
    assert cert_status == "candidate"
    X = np.array([[z[0], z[1]], [z[1], z[2]]])
    assert np.linalg.eigvalsh(X).min() >= -1e-7
    # The constraint needs x0 - 4 x1 + x2 >= 1; PSD forces x1^2 <= x0 x2.
    assert z[0] - 4 * z[1] + z[2] >= 1 - 1e-6


def test_verify_certificate_flags_tampering():
    problem = _closed_form_problem()
    cert = solve(problem)
    ok, residuals = verify_certificate(problem, cert)
    assert ok
    tampered = {"P": np.array([[1.0]])}  # violates the decrease constraint
    ok, residuals = verify_certificate(problem, tampered)
    assert not ok
    assert residuals["decrease"] > 0.1


def test_certificate_json_round_trip():
    cert = solve(_closed_form_problem(), config_echo={"config_sha256": "abc"})
    back = RoaCertificate.from_json(cert.to_json())
    assert back.status == cert.status
    np.testing.assert_allclose(back.P, cert.P)
    assert back.config_echo["config_sha256"] == "abc"


def test_deterministic_output_excluding_timing():
    a = solve(_closed_form_problem()).to_dict()
    b = solve(_closed_form_problem()).to_dict()
    a.pop("solver_stats")
    b.pop("solver_stats")
    assert a == b


def test_solver_env_override(monkeypatch):
    monkeypatch.setenv("ROACERT_SOLVER", "SCS")
    cert = solve(_closed_form_problem())
    assert cert.solver_stats["solver"] == "SCS"
    assert cert.status == "optimal"
    assert abs(cert.objective - 4.0 / 3.0) < 1e-4
