"""Assembly of the stability/ROA semidefinite programs.

The nominal condition couples the Lyapunov decrease of V(x) = (x-x*)^T P
(x-x*) along the closed loop with the offset local sector constraint on
the stacked activations, plus Schur-complement containment LMIs that
place the ellipsoid inside the polytope where the sector bounds are
valid.  The robust condition poses the same structure on the extended
state (plant + IQC filter states) and adds one accumulation term
r^T M(theta) r per IQC block.  Problems are affine in (P, lambda, eta,
theta) and are minimized over trace(P_x), the leading plant block of P.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from roacert.bounds import ActivationBounds
from roacert.iqc import ExtendedSystem, IqcBlock
from roacert.nn import Equilibrium, NnLft

__all__ = [
    "LtiPlant",
    "UncertainPlant",
    "SymVar",
    "VecVar",
    "QuadTerm",
    "MatrixConstraint",
    "LmiProblem",
    "sector_quadratic_form",
    "assemble_nominal",
    "assemble_robust",
    "sweep_delta_v",
    "SweepRow",
    "SweepResult",
]


@dataclass(frozen=True)
class LtiPlant:
    """Nominal discrete-time plant x(k+1) = A x(k) + B u(k)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n:
            raise ValueError("plant dimensions are inconsistent")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def to_uncertain(self) -> "UncertainPlant":
        n = self.n_x
        return UncertainPlant(
            A=self.A, B1=np.zeros((n, 0)), B2=self.B,
            C=np.zeros((0, n)), D1=np.zeros((0, 0)), D2=np.zeros((0, self.n_u)),
        )


@dataclass(frozen=True)
class UncertainPlant:
    """Plant in perturbation form: x+ = A x + B1 q + B2 u, p = C x + D1 q + D2 u."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    D2: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        if self.B1.shape[0] != n or self.B2.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("plant dimensions are inconsistent")
        if self.D1.shape != (self.n_p, self.n_q) or self.D2.shape != (self.n_p, self.n_u):
            raise ValueError("feedthrough dimensions are inconsistent")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_q(self) -> int:
        return self.B1.shape[1]

    @property
    def n_u(self) -> int:
        return self.B2.shape[1]

    @property
    def n_p(self) -> int:
        return self.C.shape[0]


# --- problem data model -----------------------------------------------------

@dataclass(frozen=True)
class SymVar:
    """Symmetric matrix decision variable; ``floor`` adds var >= floor * I."""

    name: str
    dim: int
    floor: float | None = None

    @property
    def packed_len(self) -> int:
        return self.dim * (self.dim + 1) // 2


@dataclass(frozen=True)
class VecVar:
    """Vector decision variable with optional sign/PSD parameter constraints."""

    name: str
    dim: int
    nonneg: tuple[int, ...] = ()
    psd_blocks: tuple[tuple[tuple[int, ...], ...], ...] = ()

    @property
    def packed_len(self) -> int:
        return self.dim


@dataclass(frozen=True)
class QuadTerm:
    """Contribution sign * outer^T M(var) outer to a matrix constraint.

    For a SymVar, M(var) is the matrix itself; for a VecVar, ``basis``
    gives M(v) = sum_k v_k basis[k].
    """

    var: str
    outer: np.ndarray
    sign: float = 1.0
    basis: tuple[np.ndarray, ...] | None = None


@dataclass
class MatrixConstraint:
    """Affine symmetric matrix inequality const + sum(terms) {<=,>=} 0.

    Strict inequalities carry ``eps``: "<=0" is emitted as ... <= -eps*I.
    """

    name: str
    dim: int
    const: np.ndarray
    terms: list[QuadTerm]
    sense: str  # "<=0" or ">=0"
    eps: float = 0.0

    def __post_init__(self):
        if self.sense not in ("<=0", ">=0"):
            raise ValueError(f"unknown sense {self.sense!r}")
        self.const = 0.5 * (self.const + self.const.T)

    def evaluate(self, assignment: dict[str, np.ndarray],
                 with_scale: bool = False):
        """Numeric value of const + sum(terms) at the given assignment.

        With ``with_scale``, also returns the largest absolute entry among
        the individual contributions, a natural yardstick for relative
        residual checks on badly scaled instances.
        """
        F = self.const.copy()
        scale = float(np.abs(self.const).max(initial=0.0))
        for t in self.terms:
            val = np.asarray(assignment[t.var], dtype=float)
            if t.basis is None:
                M = 0.5 * (val + val.T)
            else:
                M = np.zeros((t.basis[0].shape[0],) * 2)
                for c, B in zip(np.atleast_1d(val), t.basis):
                    M += c * B
            contrib = t.sign * t.outer.T @ M @ t.outer
            scale = max(scale, float(np.abs(contrib).max(initial=0.0)))
            F += contrib
        F = 0.5 * (F + F.T)
        return (F, scale) if with_scale else F


@dataclass
class LmiProblem:
    """A collection of affine matrix inequalities with a linear objective.

    ``objective`` maps variable names to coefficient arrays; the value is
    the sum of Frobenius/dot products.  ``meta`` carries bookkeeping used
    to extract typed certificates (plant dimension, variable roles, ...).
    """

    variables: list
    constraints: list[MatrixConstraint]
    objective: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def variable(self, name: str):
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def objective_value(self, assignment: dict[str, np.ndarray]) -> float:
        total = 0.0
        for name, coeff in self.objective.items():
            total += float(np.sum(np.asarray(coeff) * np.asarray(assignment[name])))
        return total

    def dump(self) -> str:
        """Text serialization of dimensions, objective and LMI coefficients."""
        from roacert.sdp import constraint_affine_map, pack_index_labels

        lines = ["variables:"]
        for v in self.variables:
            kind = "sym" if isinstance(v, SymVar) else "vec"
            lines.append(f"  {v.name}: {kind} dim={v.dim} packed={v.packed_len}")
        lines.append("objective (coefficient per packed component):")
        labels, cvec = _objective_vector(self)
        for lab, c in zip(labels, cvec):
            if c != 0.0:
                lines.append(f"  {lab}: {c!r}")
        for con in self.constraints:
            lines.append(f"constraint {con.name}: dim={con.dim} sense={con.sense} eps={con.eps!r}")
            F0, cols = constraint_affine_map(con, self.variables)
            lines.append("  const:")
            for row in F0:
                lines.append("    " + " ".join(f"{x: .12e}" for x in row))
            all_labels = pack_index_labels(self.variables)
            for lab, col in zip(all_labels, cols):
                if np.any(col != 0.0):
                    lines.append(f"  d/d {lab}:")
                    for row in col:
                        lines.append("    " + " ".join(f"{x: .12e}" for x in row))
        return "\n".join(lines)


def _objective_vector(problem: LmiProblem):
    """Packed objective labels/coefficients (shared with the dump)."""
    from roacert.sdp import pack_sym, pack_index_labels

    labels = pack_index_labels(problem.variables)
    chunks = []
    for v in problem.variables:
        coeff = problem.objective.get(v.name)
        if coeff is None:
            chunks.append(np.zeros(v.packed_len))
        elif isinstance(v, SymVar):
            chunks.append(pack_sym(np.asarray(coeff, dtype=float)))
        else:
            chunks.append(np.asarray(coeff, dtype=float))
    return labels, np.concatenate(chunks) if chunks else np.zeros(0)


# --- sector machinery -------------------------------------------------------

def sector_matrix(alpha, beta) -> np.ndarray:
    """Psi_phi = [diag(beta), -I; -diag(alpha), I]."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    n = alpha.size
    return np.block([
        [np.diag(beta), -np.eye(n)],
        [-np.diag(alpha), np.eye(n)],
    ])


def _pair_basis(n: int) -> tuple[np.ndarray, ...]:
    basis = []
    for i in range(n):
        B = np.zeros((2 * n, 2 * n))
        B[i, n + i] = 1.0
        B[n + i, i] = 1.0
        basis.append(B)
    return tuple(basis)


def sector_quadratic_form(alpha, beta, lam) -> np.ndarray:
    """Psi_phi^T M(lambda) Psi_phi as a quadratic form on (dv, dw).

    Evaluated on a stacked deviation vector it equals
    sum_i 2 lambda_i (dw_i - alpha_i dv_i)(beta_i dv_i - dw_i).
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(lam < 0.0):
        raise ValueError("lambda must be nonnegative")
    n = lam.size
    Psi = sector_matrix(alpha, beta)
    M = np.zeros((2 * n, 2 * n))
    M[:n, n:] = np.diag(lam)
    M[n:, :n] = np.diag(lam)
    out = Psi.T @ M @ Psi
    return 0.5 * (out + out.T)


# --- assembly ---------------------------------------------------------------

def _selector(offset: int, size: int, total: int) -> np.ndarray:
    S = np.zeros((size, total))
    S[:, offset : offset + size] = np.eye(size)
    return S


def _first_layer_radii(bounds: ActivationBounds, eq: Equilibrium, n_1: int) -> np.ndarray:
    """Per-row half-width of the first-layer box, conservative for
    asymmetric intervals."""
    v1_star = eq.v_star[:n_1]
    return np.minimum(bounds.v_hi[:n_1] - v1_star, v1_star - bounds.v_lo[:n_1])


def _containment_constraints(W_rows: np.ndarray, radii: np.ndarray, n_zeta: int,
                             var: str, tag: str) -> list[MatrixConstraint]:
    """Schur-complement LMIs [[r_i^2, W_i], [W_i^T, P]] >= 0."""
    cons = []
    for i, (row, r) in enumerate(zip(W_rows, radii)):
        d = n_zeta + 1
        const = np.zeros((d, d))
        const[0, 0] = r * r
        const[0, 1:] = row
        const[1:, 0] = row
        S = np.zeros((n_zeta, d))
        S[:, 1:] = np.eye(n_zeta)
        cons.append(MatrixConstraint(
            name=f"{tag}[{i}]", dim=d, const=const,
            terms=[QuadTerm(var=var, outer=S)], sense=">=0",
        ))
    return cons


def assemble_nominal(
    plant: LtiPlant,
    lft: NnLft,
    eq: Equilibrium,
    bounds: ActivationBounds,
    eps: float = 1e-6,
    p_floor: float = 1e-8,
    first_layer_width: int | None = None,
    extra_containments: list[tuple[float, np.ndarray]] | None = None,
) -> LmiProblem:
    """Build the nominal certification problem.

    Variables are P (n_G x n_G) and the sector multipliers lambda >= 0.
    The decrease LMI lives on the deviation basis (x - x*, w_phi - w*);
    containment LMIs place the ellipsoid where the first-layer box holds.
    The objective is trace(P).
    """
    n_G, n_phi = plant.n_x, lft.n_phi
    if lft.n_x != n_G:
        raise ValueError(
            f"plant state dim {n_G} does not match controller input dim {lft.n_x}"
        )
    d = n_G + n_phi
    E_x = _selector(0, n_G, d)
    E_w = _selector(n_G, n_phi, d)

    u_map = lft.N_ux @ E_x + lft.N_uw @ E_w
    v_map = lft.N_vx @ E_x + lft.N_vw @ E_w
    x_next = plant.A @ E_x + plant.B @ u_map

    Psi = sector_matrix(bounds.alpha, bounds.beta)
    sector_outer = Psi @ np.vstack([v_map, E_w])

    decrease = MatrixConstraint(
        name="lyapunov_decrease", dim=d, const=np.zeros((d, d)),
        terms=[
            QuadTerm(var="P", outer=x_next, sign=1.0),
            QuadTerm(var="P", outer=E_x, sign=-1.0),
            QuadTerm(var="lambda", outer=sector_outer, basis=_pair_basis(n_phi)),
        ],
        sense="<=0", eps=eps,
    )

    n_1 = first_layer_width if first_layer_width is not None else _first_layer_width(lft)
    W1 = lft.N_vx[:n_1, :]
    radii = _first_layer_radii(bounds, eq, n_1)
    cons = [decrease]
    cons += _containment_constraints(W1, radii, n_G, "P", "containment")
    for j, (radius, row) in enumerate(extra_containments or []):
        cons += _containment_constraints(
            np.atleast_2d(np.asarray(row, dtype=float)), np.array([radius]),
            n_G, "P", f"validity[{j}]",
        )

    problem = LmiProblem(
        variables=[
            SymVar("P", n_G, floor=p_floor),
            VecVar("lambda", n_phi, nonneg=tuple(range(n_phi))),
        ],
        constraints=cons,
        objective={"P": np.eye(n_G)},
        meta={
            "kind": "nominal", "n_G": n_G, "n_phi": n_phi, "n_zeta": n_G,
            "x_star": eq.x_star.copy(), "eps": eps,
            "block_vars": {},
        },
    )
    return problem


def _first_layer_width(lft: NnLft) -> int:
    """Rows of W^1 = nonzero block height of N_vx; equals the first width."""
    # N_vx = [W^1; 0]; the first layer width is the leading block height.
    nz = np.flatnonzero(np.any(lft.N_vx != 0.0, axis=1))
    if nz.size == 0:
        # Degenerate zero first weight; fall back to treating every row of
        # the first block as first-layer (callers pass the true width via
        # bounds, which have full n_phi length anyway).
        return lft.N_vx.shape[0]
    return int(nz[-1]) + 1


def assemble_robust(
    ext: ExtendedSystem,
    lft: NnLft,
    bounds: ActivationBounds,
    eq: Equilibrium | None = None,
    first_layer_width: int | None = None,
    eps: float = 1e-6,
    p_floor: float = 1e-8,
    extra_containments: list[tuple[float, np.ndarray]] | None = None,
) -> LmiProblem:
    """Build the robust certification problem on the extended state.

    Requires a zero equilibrium.  The decrease LMI lives on the basis
    (x, psi_blocks..., w_phi, q) with filter states in block declaration
    order; each IQC block adds an accumulation term r^T M(theta_b) r.
    The objective is trace(P_x), the leading plant block.
    """
    plant = ext.plant
    if eq is not None:
        worst = max(
            float(np.max(np.abs(v), initial=0.0))
            for v in (eq.x_star, eq.u_star, eq.v_star, eq.w_star)
        )
        if worst > 1e-9:
            raise ValueError(
                "robust analysis requires the equilibrium at the origin "
                f"(max |component| = {worst:.3g})"
            )
    n_G, n_phi, n_q, n_u = plant.n_x, lft.n_phi, plant.n_q, plant.n_u
    blocks = ext.blocks
    n_psi = [b.filter.n_psi for b in blocks]
    n_zeta = n_G + sum(n_psi)
    d = n_zeta + n_phi + n_q

    E_x = _selector(0, n_G, d)
    psi_off = np.concatenate([[n_G], n_G + np.cumsum(n_psi)])
    E_psi = [_selector(int(psi_off[i]), n_psi[i], d) for i in range(len(blocks))]
    E_w = _selector(n_zeta, n_phi, d)
    E_q = _selector(n_zeta + n_phi, n_q, d)

    u_map = lft.N_ux @ E_x + lft.N_uw @ E_w
    v_map = lft.N_vx @ E_x + lft.N_vw @ E_w
    p_map = plant.C @ E_x + plant.D1 @ E_q + plant.D2 @ u_map

    def block_io(blk: IqcBlock):
        if blk.channel.kind == "plant":
            in_p = p_map[list(blk.channel.p_idx), :]
            in_q = E_q[list(blk.channel.q_idx), :]
        else:
            rows_p = list(blk.channel.p_idx) or list(range(n_phi))
            rows_q = list(blk.channel.q_idx) or list(range(n_phi))
            in_p = v_map[rows_p, :]
            in_q = E_w[rows_q, :]
        return in_p, in_q

    zeta_rows = [E_x]
    next_rows = [plant.A @ E_x + plant.B1 @ E_q + plant.B2 @ u_map]
    r_maps = []
    for blk, Ep in zip(blocks, E_psi):
        in_p, in_q = block_io(blk)
        f = blk.filter
        next_rows.append(f.A @ Ep + f.B1 @ in_p + f.B2 @ in_q)
        zeta_rows.append(Ep)
        r_maps.append(f.C @ Ep + f.D1 @ in_p + f.D2 @ in_q)
    zeta_map = np.vstack(zeta_rows)
    zeta_next = np.vstack(next_rows)

    Psi = sector_matrix(bounds.alpha, bounds.beta)
    sector_outer = Psi @ np.vstack([v_map, E_w])

    terms = [
        QuadTerm(var="P", outer=zeta_next, sign=1.0),
        QuadTerm(var="P", outer=zeta_map, sign=-1.0),
        QuadTerm(var="lambda", outer=sector_outer, basis=_pair_basis(n_phi)),
    ]
    block_vars: dict[int, str] = {}
    variables = [
        SymVar("P", n_zeta, floor=p_floor),
        VecVar("lambda", n_phi, nonneg=tuple(range(n_phi))),
    ]
    for i, (blk, r_map) in enumerate(zip(blocks, r_maps)):
        name = f"theta[{i}]" if not blk.label else f"theta[{i}]:{blk.label}"
        block_vars[i] = name
        variables.append(VecVar(
            name, blk.multipliers.param_count,
            nonneg=blk.multipliers.nonneg, psd_blocks=blk.multipliers.psd_blocks,
        ))
        terms.append(QuadTerm(var=name, outer=r_map, basis=blk.multipliers.basis))

    decrease = MatrixConstraint(
        name="lyapunov_decrease", dim=d, const=np.zeros((d, d)),
        terms=terms, sense="<=0", eps=eps,
    )

    n_1 = first_layer_width if first_layer_width is not None else _first_layer_width(lft)
    W1 = np.hstack([lft.N_vx[:n_1, :], np.zeros((n_1, n_zeta - n_G))])
    if eq is None:
        radii = np.minimum(bounds.v_hi[:n_1], -bounds.v_lo[:n_1])
    else:
        radii = _first_layer_radii(bounds, eq, n_1)
    cons = [decrease]
    cons += _containment_constraints(W1, radii, n_zeta, "P", "containment")
    for j, (radius, row) in enumerate(extra_containments or []):
        row = np.asarray(row, dtype=float)
        padded = np.concatenate([row, np.zeros(n_zeta - row.size)])
        cons += _containment_constraints(
            padded[None, :], np.array([radius]), n_zeta, "P", f"validity[{j}]",
        )

    obj = np.zeros((n_zeta, n_zeta))
    obj[:n_G, :n_G] = np.eye(n_G)
    return LmiProblem(
        variables=variables,
        constraints=cons,
        objective={"P": obj},
        meta={
            "kind": "robust", "n_G": n_G, "n_phi": n_phi, "n_zeta": n_zeta,
            "x_star": np.zeros(n_G), "eps": eps,
            "block_vars": block_vars,
            "block_labels": [b.label for b in blocks],
        },
    )


# --- delta_v sweep ----------------------------------------------------------

@dataclass
class SweepRow:
    delta_v: float
    feasible: bool
    trace_Px: float | None
    det_Pinv: float | None
    status: str


@dataclass
class SweepResult:
    rows: list[SweepRow]

    @property
    def best_volume(self) -> SweepRow | None:
        feas = [r for r in self.rows if r.feasible and r.det_Pinv is not None]
        if not feas:
            return None
        return max(feas, key=lambda r: r.det_Pinv)

    @property
    def largest_feasible(self) -> float | None:
        feas = [r.delta_v for r in self.rows if r.feasible]
        return max(feas) if feas else None


def sweep_delta_v(solve_at, delta_grid) -> SweepResult:
    """Re-run bound propagation + assembly + solve on a grid of delta_v.

    ``solve_at`` maps a delta_v value to a solved certificate (anything
    with .status, .P_x attributes).  Infeasible points are recorded, not
    fatal.
    """
    if len(delta_grid) == 0:
        raise ValueError("delta grid must be nonempty")
    rows = []
    for dv in delta_grid:
        try:
            cert = solve_at(float(dv))
        except Exception as exc:  # assembly failures recorded per point
            rows.append(SweepRow(float(dv), False, None, None, f"error: {exc}"))
            continue
        if cert.status == "optimal":
            Px = np.asarray(cert.P_x, dtype=float)
            rows.append(SweepRow(
                float(dv), True, float(np.trace(Px)),
                float(1.0 / np.linalg.det(Px)), cert.status,
            ))
        else:
            rows.append(SweepRow(float(dv), False, None, None, cert.status))
    return SweepResult(rows)
