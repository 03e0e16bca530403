"""Hard time-domain IQC blocks and the extended system.

Each block pairs a stable LTI filter Psi applied to a channel (p, q) of
the interconnection with a parameterized multiplier set M; admissible
operators on that channel satisfy the accumulation constraint
sum_{k=0}^N r(k)^T M r(k) >= 0 on every finite horizon, where r is the
filter output.  Implemented classes: static sector nonlinearities,
norm-bounded LTI perturbations (static or with a repeated-pole dynamic
basis), and the off-by-one IQC encoding slope restriction.  Filter
states are appended to the plant state to form the extended system on
which the robust Lyapunov LMI is posed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "IqcFilter",
    "MultiplierSet",
    "Channel",
    "IqcBlock",
    "ExtendedSystem",
    "off_by_one_iqc",
    "norm_bounded_lti_iqc",
    "static_sector_iqc",
    "extend_system",
    "simulate_filter",
]


class InterconnectionError(ValueError):
    """Raised when block channels overlap or do not match the plant ports."""


@dataclass(frozen=True)
class IqcFilter:
    """State-space filter psi(k+1) = A psi + B1 p + B2 q, r = C psi + D1 p + D2 q.

    The initial state is fixed to zero and A must be Schur.  Memoryless
    filters have n_psi = 0.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    D2: np.ndarray

    def __post_init__(self):
        if self.n_psi > 0:
            rho = float(np.max(np.abs(np.linalg.eigvals(self.A))))
            if rho >= 1.0 - 1e-9:
                raise ValueError(f"filter A matrix is not Schur (rho = {rho:.6g})")

    @property
    def n_psi(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.B1.shape[1] if self.n_psi > 0 else self.D1.shape[1]

    @property
    def n_q(self) -> int:
        return self.B2.shape[1] if self.n_psi > 0 else self.D2.shape[1]

    @property
    def n_r(self) -> int:
        return self.D1.shape[0]


@dataclass(frozen=True)
class MultiplierSet:
    """Linearly parameterized multipliers M(theta) = sum_k theta_k basis[k].

    ``nonneg`` lists parameter indices constrained to be nonnegative and
    ``psd_blocks`` lists index matrices whose induced symmetric parameter
    blocks must be positive semidefinite.
    """

    dim_r: int
    basis: tuple[np.ndarray, ...]
    nonneg: tuple[int, ...] = ()
    psd_blocks: tuple[tuple[tuple[int, ...], ...], ...] = ()

    @property
    def param_count(self) -> int:
        return len(self.basis)

    def multiplier(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        M = np.zeros((self.dim_r, self.dim_r))
        for t, B in zip(theta, self.basis):
            M += t * B
        return M

    def check_params(self, theta: np.ndarray, tol: float = 1e-9) -> bool:
        """Whether theta satisfies the declared parameter constraints."""
        theta = np.asarray(theta, dtype=float)
        if any(theta[i] < -tol for i in self.nonneg):
            return False
        for block in self.psd_blocks:
            X = np.array([[theta[j] for j in row] for row in block])
            if np.min(np.linalg.eigvalsh(0.5 * (X + X.T))) < -tol:
                return False
        return True

    def sample_params(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        """Draw a random admissible parameter vector (for validation)."""
        theta = rng.uniform(-scale, scale, size=self.param_count)
        for i in self.nonneg:
            theta[i] = abs(theta[i])
        for block in self.psd_blocks:
            d = len(block)
            G = rng.normal(size=(d, d)) * scale
            X = G @ G.T / d
            for a in range(d):
                for b in range(d):
                    theta[block[a][b]] = X[a, b]
        return theta


@dataclass(frozen=True)
class Channel:
    """Where a block attaches: plant perturbation ports or the activation path.

    For kind "plant", ``p_idx``/``q_idx`` index into the plant's p and q
    vectors.  For kind "activation" the filter input is (v_phi, w_phi).
    """

    kind: str  # "plant" | "activation"
    p_idx: tuple[int, ...] = ()
    q_idx: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("plant", "activation"):
            raise ValueError(f"unknown channel kind {self.kind!r}")


@dataclass(frozen=True)
class IqcBlock:
    """A filter/multiplier pair attached to a channel of the interconnection."""

    filter: IqcFilter
    multipliers: MultiplierSet
    channel: Channel
    label: str = ""

    def __post_init__(self):
        if self.channel.kind == "plant":
            if len(self.channel.p_idx) != self.filter.n_p:
                raise InterconnectionError(
                    f"block {self.label!r}: {len(self.channel.p_idx)} p indices "
                    f"for a filter with n_p = {self.filter.n_p}"
                )
            if len(self.channel.q_idx) != self.filter.n_q:
                raise InterconnectionError(
                    f"block {self.label!r}: {len(self.channel.q_idx)} q indices "
                    f"for a filter with n_q = {self.filter.n_q}"
                )
        if self.multipliers.dim_r != self.filter.n_r:
            raise InterconnectionError(
                f"block {self.label!r}: multiplier dim {self.multipliers.dim_r} "
                f"!= filter output dim {self.filter.n_r}"
            )


@dataclass(frozen=True)
class ExtendedSystem:
    """Plant augmented with the states of the plant-channel IQC filters.

    The state matrices follow the standard stacking: with zeta = [x; psi],

        A_cal = [A_G 0; B_Psi1 C_G A_Psi],
        B_cal = [B_G1 B_G2; B_Psi1 D_G1 + B_Psi2, B_Psi1 D_G2],
        C_cal = [D_Psi1 C_G, C_Psi],
        D_cal = [D_Psi1 D_G1 + D_Psi2, D_Psi1 D_G2].

    Activation-channel filters also contribute states to n_zeta; their
    dynamics depend on the controller and are wired in during LMI
    assembly.  With no blocks the extended system degenerates to the
    plant.
    """

    plant: "object"
    blocks: tuple[IqcBlock, ...]
    A_cal: np.ndarray
    B_cal: np.ndarray
    C_cal: np.ndarray
    D_cal: np.ndarray
    n_zeta: int
    r_dim: int

    @property
    def zeta_star(self) -> np.ndarray:
        return np.zeros(self.n_zeta)

    @property
    def n_psi_plant(self) -> int:
        return self.A_cal.shape[0] - self.plant.A.shape[0]


def _pair_multiplier(n: int) -> tuple[np.ndarray, ...]:
    """Basis for M(t) = [0, diag(t); diag(t), 0] on a 2n-dim filter output."""
    basis = []
    for i in range(n):
        B = np.zeros((2 * n, 2 * n))
        B[i, n + i] = 1.0
        B[n + i, i] = 1.0
        basis.append(B)
    return tuple(basis)


def static_sector_iqc(alpha, beta, channel: Channel | None = None, label: str = "sector") -> IqcBlock:
    """Static sector IQC for q = Delta(p) in the sector [alpha, beta].

    Memoryless filter r = [diag(beta) p - q; -diag(alpha) p + q] with the
    pair multiplier M(lambda), lambda >= 0, so that r^T M r =
    2 lambda (beta p - q)(q - alpha p) >= 0 pointwise in the sector.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if alpha.shape != beta.shape:
        raise ValueError("alpha and beta must have the same length")
    if np.any(alpha > beta):
        raise ValueError("sector requires alpha <= beta elementwise")
    n = alpha.size
    filt = IqcFilter(
        A=np.zeros((0, 0)),
        B1=np.zeros((0, n)),
        B2=np.zeros((0, n)),
        C=np.zeros((2 * n, 0)),
        D1=np.vstack([np.diag(beta), -np.diag(alpha)]),
        D2=np.vstack([-np.eye(n), np.eye(n)]),
    )
    mult = MultiplierSet(dim_r=2 * n, basis=_pair_multiplier(n), nonneg=tuple(range(n)))
    if channel is None:
        channel = Channel("plant", tuple(range(n)), tuple(range(n)))
    return IqcBlock(filt, mult, channel, label)


def off_by_one_iqc(slope_lo, slope_hi, channel: Channel | None = None, label: str = "off_by_one") -> IqcBlock:
    """Off-by-one IQC for a static map with slope restricted to [m, L].

    One filter state per channel relates consecutive samples:
    psi(k+1) = -diag(L) p + q, r = [psi + diag(L) p - q; -diag(m) p + q],
    with the pair multiplier M(eta), eta >= 0.
    """
    m = np.atleast_1d(np.asarray(slope_lo, dtype=float))
    L = np.atleast_1d(np.asarray(slope_hi, dtype=float))
    if m.shape != L.shape:
        raise ValueError("slope bounds must have the same length")
    if np.any(m > L):
        raise ValueError("slope bounds require m <= L elementwise")
    n = m.size
    filt = IqcFilter(
        A=np.zeros((n, n)),
        B1=-np.diag(L),
        B2=np.eye(n),
        C=np.vstack([np.eye(n), np.zeros((n, n))]),
        D1=np.vstack([np.diag(L), -np.diag(m)]),
        D2=np.vstack([-np.eye(n), np.eye(n)]),
    )
    mult = MultiplierSet(dim_r=2 * n, basis=_pair_multiplier(n), nonneg=tuple(range(n)))
    if channel is None:
        channel = Channel("plant", tuple(range(n)), tuple(range(n)))
    return IqcBlock(filt, mult, channel, label)


def norm_bounded_lti_iqc(
    gain_bound: float,
    n_p: int = 1,
    n_q: int = 1,
    basis_len: int = 1,
    pole: float = 0.0,
    channel: Channel | None = None,
    label: str = "norm_bounded_lti",
) -> IqcBlock:
    """IQC for a causal LTI perturbation with H-infinity norm <= gain_bound.

    basis_len = 0 gives the static small-gain multiplier
    M(lambda) = blkdiag(b^2 lambda I, -lambda I) with scalar lambda >= 0.
    basis_len >= 1 filters p and q through the repeated-pole basis
    Psi_b(z) = [1; 1/(z-pole); ...; 1/(z-pole)^nu] per channel and uses
    M(X) = blkdiag(b^2 X kron I, -X kron I) with X symmetric PSD.
    """
    b = float(gain_bound)
    if b <= 0.0:
        raise ValueError("gain bound must be positive")
    if abs(pole) >= 1.0:
        raise ValueError(f"basis pole {pole} is not inside the unit circle")
    if basis_len < 0:
        raise ValueError("basis_len must be nonnegative")
    if channel is None:
        channel = Channel("plant", tuple(range(n_p)), tuple(range(n_q)))

    if basis_len == 0:
        filt = IqcFilter(
            A=np.zeros((0, 0)),
            B1=np.zeros((0, n_p)),
            B2=np.zeros((0, n_q)),
            C=np.zeros((n_p + n_q, 0)),
            D1=np.vstack([np.eye(n_p), np.zeros((n_q, n_p))]),
            D2=np.vstack([np.zeros((n_p, n_q)), np.eye(n_q)]),
        )
        basis = (np.diag(np.concatenate([b * b * np.ones(n_p), -np.ones(n_q)])),)
        mult = MultiplierSet(dim_r=n_p + n_q, basis=basis, nonneg=(0,))
        return IqcBlock(filt, mult, channel, label)

    if n_p != n_q:
        raise InterconnectionError(
            "dynamic norm-bounded multipliers require n_p == n_q"
        )
    nu = basis_len
    d = nu + 1
    # Single-channel realization of [1; 1/(z-rho); ...; 1/(z-rho)^nu].
    A1 = pole * np.eye(nu) + np.diag(np.ones(nu - 1), k=-1)
    B1 = np.zeros((nu, 1))
    B1[0, 0] = 1.0
    C1 = np.vstack([np.zeros((1, nu)), np.eye(nu)])
    D1 = np.zeros((d, 1))
    D1[0, 0] = 1.0

    def per_channel(n):
        return (
            np.kron(A1, np.eye(n)),
            np.kron(B1, np.eye(n)),
            np.kron(C1, np.eye(n)),
            np.kron(D1, np.eye(n)),
        )

    Ap, Bp, Cp, Dp = per_channel(n_p)
    Aq, Bq, Cq, Dq = per_channel(n_q)
    filt = IqcFilter(
        A=scipy.linalg.block_diag(Ap, Aq),
        B1=np.vstack([Bp, np.zeros_like(Bq)]),
        B2=np.vstack([np.zeros_like(Bp), Bq]),
        C=scipy.linalg.block_diag(Cp, Cq),
        D1=np.vstack([Dp, np.zeros((d * n_q, n_p))]),
        D2=np.vstack([np.zeros((d * n_p, n_q)), Dq]),
    )
    # Parameters: upper triangle of X in S^d, constrained X PSD.
    idx = {}
    params = []
    for i in range(d):
        for j in range(i, d):
            idx[(i, j)] = len(params)
            params.append((i, j))
    basis = []
    for i, j in params:
        E = np.zeros((d, d))
        E[i, j] = 1.0
        E[j, i] = 1.0
        Xblk = np.kron(E, np.eye(n_p))
        basis.append(scipy.linalg.block_diag(b * b * Xblk, -Xblk))
    block_idx = tuple(
        tuple(idx[(min(i, j), max(i, j))] for j in range(d)) for i in range(d)
    )
    mult = MultiplierSet(
        dim_r=d * (n_p + n_q), basis=tuple(basis), psd_blocks=(block_idx,)
    )
    return IqcBlock(filt, mult, channel, label)


def extend_system(plant, blocks) -> ExtendedSystem:
    """Stack the plant with the plant-channel filter dynamics.

    Plant-channel blocks must attach to disjoint (p, q) ports; filter
    states are ordered by block list order.  Activation-channel blocks
    contribute their state count to n_zeta but are wired to the
    controller during LMI assembly.
    """
    blocks = tuple(blocks)
    A_G, B_G1, B_G2 = plant.A, plant.B1, plant.B2
    C_G, D_G1, D_G2 = plant.C, plant.D1, plant.D2
    n_G = A_G.shape[0]
    n_q = B_G1.shape[1]
    n_p = C_G.shape[0]

    used_p: set[int] = set()
    used_q: set[int] = set()
    for blk in blocks:
        if blk.channel.kind != "plant":
            continue
        for i in blk.channel.p_idx:
            if not 0 <= i < n_p:
                raise InterconnectionError(f"p index {i} out of range (n_p = {n_p})")
        for i in blk.channel.q_idx:
            if not 0 <= i < n_q:
                raise InterconnectionError(f"q index {i} out of range (n_q = {n_q})")
            used_q.add(i)
        used_p.update(blk.channel.p_idx)
    # Several blocks may describe the same perturbation channel (e.g. a
    # sector plus an off-by-one), but every q port needs at least one.
    missing = sorted(set(range(n_q)) - used_q)
    if missing:
        raise InterconnectionError(f"q ports {missing} are not covered by any block")

    plant_blocks = [b for b in blocks if b.channel.kind == "plant"]
    act_blocks = [b for b in blocks if b.channel.kind == "activation"]

    def sel(idx, n):
        S = np.zeros((len(idx), n))
        for row, i in enumerate(idx):
            S[row, i] = 1.0
        return S

    A_psi = [b.filter.A for b in plant_blocks]
    n_psi = sum(b.filter.n_psi for b in plant_blocks)

    # Per-block filter inputs: p_sel = Sp p, q_sel = Sq q.
    Bp_rows, Cr_rows, Dr_rows = [], [], []
    for b in plant_blocks:
        Sp = sel(b.channel.p_idx, n_p)
        Sq = sel(b.channel.q_idx, n_q)
        # psi+ = A psi + B1 Sp (C x + D1 q + D2 u) + B2 Sq q
        Bx = b.filter.B1 @ Sp @ C_G
        Bq = b.filter.B1 @ Sp @ D_G1 + b.filter.B2 @ Sq
        Bu = b.filter.B1 @ Sp @ D_G2
        Bp_rows.append((Bx, Bq, Bu))
        Cx = b.filter.D1 @ Sp @ C_G
        Dq = b.filter.D1 @ Sp @ D_G1 + b.filter.D2 @ Sq
        Du = b.filter.D1 @ Sp @ D_G2
        Cr_rows.append((Cx, b.filter.C))
        Dr_rows.append((Dq, Du))

    A_cal = np.zeros((n_G + n_psi, n_G + n_psi))
    A_cal[:n_G, :n_G] = A_G
    B_cal = np.zeros((n_G + n_psi, n_q + plant.n_u))
    B_cal[:n_G, :n_q] = B_G1
    B_cal[:n_G, n_q:] = B_G2
    r_dim = sum(b.filter.n_r for b in plant_blocks)
    C_cal = np.zeros((r_dim, n_G + n_psi))
    D_cal = np.zeros((r_dim, n_q + plant.n_u))

    srow = n_G
    rrow = 0
    scol = n_G
    for b, (Bx, Bq, Bu), (Cx, Cpsi), (Dq, Du), Ab in zip(
        plant_blocks, Bp_rows, Cr_rows, Dr_rows, A_psi
    ):
        ns, nr = b.filter.n_psi, b.filter.n_r
        A_cal[srow : srow + ns, :n_G] = Bx
        A_cal[srow : srow + ns, scol : scol + ns] = Ab
        B_cal[srow : srow + ns, :n_q] = Bq
        B_cal[srow : srow + ns, n_q:] = Bu
        C_cal[rrow : rrow + nr, :n_G] = Cx
        C_cal[rrow : rrow + nr, scol : scol + ns] = Cpsi
        D_cal[rrow : rrow + nr, :n_q] = Dq
        D_cal[rrow : rrow + nr, n_q:] = Du
        srow += ns
        scol += ns
        rrow += nr

    n_zeta = n_G + n_psi + sum(b.filter.n_psi for b in act_blocks)
    return ExtendedSystem(
        plant=plant, blocks=blocks,
        A_cal=A_cal, B_cal=B_cal, C_cal=C_cal, D_cal=D_cal,
        n_zeta=n_zeta, r_dim=r_dim,
    )


def simulate_filter(filt: IqcFilter, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Run the filter over recorded signals; returns r of shape (K, n_r).

    ``p`` and ``q`` are (K, n_p) and (K, n_q) arrays (1-d accepted for
    scalar channels).  The initial filter state is zero.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float).T).T
    q = np.atleast_2d(np.asarray(q, dtype=float).T).T
    K = p.shape[0]
    r = np.zeros((K, filt.n_r))
    psi = np.zeros(filt.n_psi)
    for k in range(K):
        r[k] = filt.C @ psi + filt.D1 @ p[k] + filt.D2 @ q[k]
        psi = filt.A @ psi + filt.B1 @ p[k] + filt.B2 @ q[k]
    return r
