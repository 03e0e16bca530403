"""Lowering of matrix-inequality problems to conic form, and solving.

Symmetric matrix variables are packed with the scaled upper-triangle
vectorization (off-diagonal entries multiplied by sqrt(2)) so that the
Frobenius inner product of matrices equals the dot product of packed
vectors.  The conic program is a linear objective over packed variables
subject to PSD cones mat(h0 + H z) >= 0 and elementwise nonnegativity
rows.  Solutions are re-verified against the original matrix
inequalities with an eigenvalue check before a certificate is stamped.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from roacert.lmi import LmiProblem, MatrixConstraint, SymVar, VecVar, _objective_vector

__all__ = [
    "pack_sym",
    "unpack_sym",
    "ConicProgram",
    "PsdCone",
    "lower",
    "SdpBackend",
    "CvxpyBackend",
    "solve",
    "RoaCertificate",
    "verify_certificate",
]

_SQRT2 = np.sqrt(2.0)


def pack_sym(M: np.ndarray) -> np.ndarray:
    """Scaled upper-triangle vectorization of a symmetric matrix.

    Row-major over i <= j with off-diagonals scaled by sqrt(2), so that
    pack_sym(A) @ pack_sym(B) == trace(A B).
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    i, j = np.triu_indices(n)
    scale = np.where(i == j, 1.0, _SQRT2)
    return M[i, j] * scale


def unpack_sym(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`pack_sym`."""
    v = np.asarray(v, dtype=float)
    if v.size != n * (n + 1) // 2:
        raise ValueError(f"packed length {v.size} does not match dim {n}")
    M = np.zeros((n, n))
    i, j = np.triu_indices(n)
    scale = np.where(i == j, 1.0, 1.0 / _SQRT2)
    M[i, j] = v * scale
    M[j, i] = M[i, j]
    return M


def _var_offsets(variables) -> dict[str, int]:
    offs, pos = {}, 0
    for v in variables:
        offs[v.name] = pos
        pos += v.packed_len
    return offs


def _total_len(variables) -> int:
    return sum(v.packed_len for v in variables)


def pack_index_labels(variables) -> list[str]:
    """Human-readable names of the packed components, in packing order."""
    labels = []
    for v in variables:
        if isinstance(v, SymVar):
            i, j = np.triu_indices(v.dim)
            labels += [f"{v.name}[{a},{b}]" for a, b in zip(i, j)]
        else:
            labels += [f"{v.name}[{k}]" for k in range(v.dim)]
    return labels


def constraint_affine_map(con: MatrixConstraint, variables):
    """Constant term and per-packed-component coefficient matrices.

    Returns (F0, cols) with cols[k] = dF/dz_k, where z is the packed
    stacked decision vector; the constraint value is F0 + sum_k z_k cols[k].
    """
    offs = _var_offsets(variables)
    total = _total_len(variables)
    d = con.dim
    cols = [np.zeros((d, d)) for _ in range(total)]
    by_name = {v.name: v for v in variables}
    for t in con.terms:
        v = by_name[t.var]
        base = offs[t.var]
        if isinstance(v, SymVar):
            n = v.dim
            i_idx, j_idx = np.triu_indices(n)
            for k, (i, j) in enumerate(zip(i_idx, j_idx)):
                oi = t.outer[i][None, :]
                oj = t.outer[j][None, :]
                if i == j:
                    dM = oi.T @ oi
                else:
                    dM = (oi.T @ oj + oj.T @ oi) / _SQRT2
                cols[base + k] += t.sign * dM
        else:
            for k, B in enumerate(t.basis):
                dM = t.outer.T @ B @ t.outer
                cols[base + k] += t.sign * 0.5 * (dM + dM.T)
    return con.const.copy(), cols


@dataclass(frozen=True)
class PsdCone:
    """Membership constraint mat(h0 + H z) >= 0 on packed data."""

    name: str
    dim: int
    h0: np.ndarray
    H: np.ndarray


@dataclass
class ConicProgram:
    """minimize c @ z subject to PSD cones and nonneg rows A_nn z >= 0."""

    variables: list
    c: np.ndarray
    psd_cones: list[PsdCone]
    nonneg_rows: np.ndarray
    nonneg_names: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.c.size


def lower(problem: LmiProblem) -> ConicProgram:
    """Flatten an :class:`LmiProblem` into a :class:`ConicProgram`.

    Strict "<=0" constraints are emitted as -(F + eps I) >= 0; variable
    floors become P - floor I >= 0; PSD-block parameter structure and
    nonnegativity constraints are attached per variable.
    """
    variables = problem.variables
    offs = _var_offsets(variables)
    total = _total_len(variables)
    _, c = _objective_vector(problem)

    cones: list[PsdCone] = []
    for con in problem.constraints:
        F0, cols = constraint_affine_map(con, variables)
        sgn = -1.0 if con.sense == "<=0" else 1.0
        shift = con.eps * np.eye(con.dim)
        h0 = pack_sym(sgn * F0 - shift)
        H = np.stack([pack_sym(sgn * cM) for cM in cols], axis=1)
        cones.append(PsdCone(con.name, con.dim, h0, H))

    nn_rows, nn_names = [], []
    for v in variables:
        base = offs[v.name]
        if isinstance(v, SymVar):
            if v.floor is not None:
                h0 = pack_sym(-v.floor * np.eye(v.dim))
                H = np.zeros((v.packed_len, total))
                H[:, base : base + v.packed_len] = np.eye(v.packed_len)
                cones.append(PsdCone(f"{v.name}_floor", v.dim, h0, H))
        else:
            for i in v.nonneg:
                row = np.zeros(total)
                row[base + i] = 1.0
                nn_rows.append(row)
                nn_names.append(f"{v.name}[{i}] >= 0")
            for b_i, block in enumerate(v.psd_blocks):
                m = len(block)
                H = np.zeros((m * (m + 1) // 2, total))
                i_idx, j_idx = np.triu_indices(m)
                for r, (i, j) in enumerate(zip(i_idx, j_idx)):
                    scale = 1.0 if i == j else _SQRT2
                    H[r, base + block[i][j]] += scale
                cones.append(PsdCone(
                    f"{v.name}_psd[{b_i}]", m, np.zeros(m * (m + 1) // 2), H,
                ))

    A_nn = np.vstack(nn_rows) if nn_rows else np.zeros((0, total))
    return ConicProgram(list(variables), c, cones, A_nn, nn_names)


# --- backends ---------------------------------------------------------------

class SdpBackend:
    """Interface: solve a ConicProgram, return (status, z, stats)."""

    def solve(self, prog: ConicProgram, **options):
        raise NotImplementedError


class CvxpyBackend(SdpBackend):
    """Backend built on cvxpy.  The solver defaults to CLARABEL and can
    be overridden with the ROACERT_SOLVER environment variable or the
    ``solver`` option."""

    def solve(self, prog: ConicProgram, **options):
        import cvxpy as cp

        solver = options.pop("solver", None) or os.environ.get(
            "ROACERT_SOLVER", "CLARABEL"
        )
        z = cp.Variable(prog.n)
        constraints = []
        for cone in prog.psd_cones:
            U = _unpack_matrix(cone.dim)
            expr = cp.reshape(U @ (cone.h0 + cone.H @ z), (cone.dim, cone.dim),
                              order="C")
            if cone.dim == 1:
                constraints.append(expr[0, 0] >= 0)
            else:
                constraints.append(expr >> 0)
        if prog.nonneg_rows.shape[0]:
            constraints.append(prog.nonneg_rows @ z >= 0)
        prob = cp.Problem(cp.Minimize(prog.c @ z), constraints)
        try:
            prob.solve(solver=solver, **options)
        except cp.error.SolverError as exc:
            return "numerical-trouble", None, {"solver": solver, "error": str(exc)}
        stats = {
            "solver": solver,
            "cvxpy_status": prob.status,
            "solve_time": getattr(prob.solver_stats, "solve_time", None),
            "num_iters": getattr(prob.solver_stats, "num_iters", None),
        }
        if prob.status in ("optimal", "optimal_inaccurate") and z.value is not None:
            return "candidate", np.asarray(z.value, dtype=float), stats
        if prob.status in ("infeasible", "infeasible_inaccurate"):
            return "infeasible", None, stats
        return "numerical-trouble", None, stats


def _unpack_matrix(n: int) -> np.ndarray:
    """Linear map from packed svec data to the row-major vec of the matrix."""
    m = n * (n + 1) // 2
    U = np.zeros((n * n, m))
    i_idx, j_idx = np.triu_indices(n)
    for k, (i, j) in enumerate(zip(i_idx, j_idx)):
        if i == j:
            U[i * n + j, k] = 1.0
        else:
            U[i * n + j, k] = 1.0 / _SQRT2
            U[j * n + i, k] = 1.0 / _SQRT2
    return U


# --- certificates -----------------------------------------------------------

@dataclass
class RoaCertificate:
    """Solved certificate: Lyapunov matrix, multipliers and diagnostics.

    ``status`` is "optimal" (solved and independently verified),
    "infeasible", or "numerical-trouble".  ``P_x`` is the plant block of
    P; V(x) = (x - x_star)^T P_x (x - x_star) <= 1 describes the
    certified ellipsoid for nominal problems (extended-state P for
    robust ones).
    """

    status: str
    objective: float | None
    P: np.ndarray | None
    P_x: np.ndarray | None
    lam: np.ndarray | None
    eta: np.ndarray | None
    multiplier_params: dict[str, list[float]]
    residuals: dict[str, float]
    solver_stats: dict
    x_star: np.ndarray | None = None
    config_echo: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.status == "optimal"

    def assignment(self) -> dict[str, np.ndarray]:
        out = {"P": self.P, "lambda": self.lam}
        for k, v in self.multiplier_params.items():
            out[k] = np.asarray(v, dtype=float)
        return out

    def ellipsoid_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Semi-axis lengths and directions of {x : x^T P_x x <= 1}."""
        evals, evecs = np.linalg.eigh(self.P_x)
        return 1.0 / np.sqrt(evals), evecs

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float).tolist()

        return {
            "status": self.status,
            "objective": self.objective,
            "P": arr(self.P),
            "P_x": arr(self.P_x),
            "lambda": arr(self.lam),
            "eta": arr(self.eta),
            "multiplier_params": {k: arr(v) for k, v in self.multiplier_params.items()},
            "residuals": self.residuals,
            "solver_stats": self.solver_stats,
            "x_star": arr(self.x_star),
            "config_echo": self.config_echo,
        }

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("sort_keys", True)
        kwargs.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "RoaCertificate":
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float)

        return cls(
            status=d["status"], objective=d["objective"], P=arr(d["P"]),
            P_x=arr(d["P_x"]), lam=arr(d["lambda"]), eta=arr(d["eta"]),
            multiplier_params={k: list(v) for k, v in d["multiplier_params"].items()},
            residuals=dict(d["residuals"]), solver_stats=dict(d["solver_stats"]),
            x_star=arr(d.get("x_star")), config_echo=dict(d.get("config_echo", {})),
        )

    @classmethod
    def from_json(cls, s: str) -> "RoaCertificate":
        return cls.from_dict(json.loads(s))


def _extract_assignment(problem: LmiProblem, z: np.ndarray) -> dict[str, np.ndarray]:
    offs = _var_offsets(problem.variables)
    out = {}
    for v in problem.variables:
        chunk = z[offs[v.name] : offs[v.name] + v.packed_len]
        out[v.name] = unpack_sym(chunk, v.dim) if isinstance(v, SymVar) else chunk.copy()
    return out


def verify_certificate(problem: LmiProblem, assignment, tol: float = 1e-7
                       ) -> tuple[bool, dict[str, float]]:
    """Eigenvalue check of every matrix inequality at a candidate point.

    ``assignment`` is a name -> value dict or a :class:`RoaCertificate`.
    Residuals are violations (positive = bad): lambda_max(F) + eps for
    "<=0" constraints, -lambda_min(F) for ">=0" ones, floor/sign
    violations for the variables.  Returns (all within tol, residuals).
    """
    if isinstance(assignment, RoaCertificate):
        assignment = assignment.assignment()
    residuals: dict[str, float] = {}
    for con in problem.constraints:
        F, scale = con.evaluate(assignment, with_scale=True)
        eigs = np.linalg.eigvalsh(F)
        # Residuals are relative to the magnitude of the constraint's
        # contributions, so badly scaled instances are judged fairly.
        scale = max(1.0, scale)
        if con.sense == "<=0":
            residuals[con.name] = float(eigs[-1] + con.eps) / scale
        else:
            residuals[con.name] = float(-eigs[0] + con.eps) / scale
    for v in problem.variables:
        val = assignment[v.name]
        if isinstance(v, SymVar):
            if v.floor is not None:
                lo = float(np.linalg.eigvalsh(val)[0])
                residuals[f"{v.name}_floor"] = v.floor - lo
        else:
            for i in v.nonneg:
                residuals[f"{v.name}[{i}]"] = float(-val[i])
            for b_i, block in enumerate(v.psd_blocks):
                m = len(block)
                M = np.array([[val[block[i][j]] for j in range(m)] for i in range(m)])
                residuals[f"{v.name}_psd[{b_i}]"] = float(-np.linalg.eigvalsh(M)[0])
    ok = all(r <= tol for r in residuals.values())
    return ok, residuals


def solve(
    problem: LmiProblem,
    backend: SdpBackend | None = None,
    verify_tol: float = 1e-7,
    config_echo: dict | None = None,
    **options,
) -> RoaCertificate:
    """Lower, solve and verify a certification problem.

    The candidate from the backend is only stamped "optimal" after the
    independent eigenvalue verification passes at ``verify_tol``.
    """
    backend = backend or CvxpyBackend()
    prog = lower(problem)
    status, z, stats = backend.solve(prog, **options)
    echo = dict(config_echo or {})
    meta = problem.meta
    n_G = meta.get("n_G")
    if status != "candidate":
        return RoaCertificate(
            status=status, objective=None, P=None, P_x=None, lam=None,
            eta=None, multiplier_params={}, residuals={}, solver_stats=stats,
            x_star=meta.get("x_star"), config_echo=echo,
        )

    assignment = _extract_assignment(problem, z)
    ok, residuals = verify_certificate(problem, assignment, tol=verify_tol)
    P = assignment["P"]
    P_x = P[:n_G, :n_G] if n_G is not None else P
    lam = assignment.get("lambda")
    mult = {
        name: np.asarray(assignment[name]).tolist()
        for name in assignment
        if name not in ("P", "lambda")
    }
    eta_parts = [
        np.atleast_1d(assignment[name])
        for i, name in sorted(meta.get("block_vars", {}).items())
        if "off_by_one" in name
    ]
    eta = np.concatenate(eta_parts) if eta_parts else None
    return RoaCertificate(
        status="optimal" if ok else "numerical-trouble",
        objective=problem.objective_value(assignment),
        P=P, P_x=P_x, lam=lam, eta=eta, multiplier_params=mult,
        residuals=residuals, solver_stats=stats,
        x_star=meta.get("x_star"), config_echo=echo,
    )
