"""Certification pipelines: config -> problem -> certificate -> validation.

Glue between the configuration layer and the library: resolves named
plants, loads controller weights, derives bounds at the requested
delta_v, builds IQC blocks (including the shortcut specs that read
their parameters off the plant or the propagated bounds), assembles and
solves the LMIs, and runs Monte-Carlo validation with sampled
admissible perturbations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from roacert.bounds import ActivationBounds, propagate_bounds, saturation_sector
from roacert.config import ConfigError, ScenarioConfig
from roacert.iqc import (Channel, IqcBlock, extend_system, norm_bounded_lti_iqc,
                         off_by_one_iqc, static_sector_iqc)
from roacert.lmi import (LmiProblem, LtiPlant, SweepResult, UncertainPlant,
                         assemble_nominal, assemble_robust, sweep_delta_v)
from roacert.models import (PendulumParams, VehicleParams,
                            pendulum_nonlinearity_bounds, pendulum_plant,
                            pendulum_true_ops, vehicle_plant, vehicle_true_ops)
from roacert.nn import (Equilibrium, NeuralNetwork, build_lft, find_equilibrium,
                        load_weights, propagate_equilibrium, verify_equilibrium)
from roacert.sdp import CvxpyBackend, RoaCertificate, solve
from roacert.sim import (SatOp, StaticOp, Trajectory, ValidationReport,
                         lti_operator_samples, pendulum_nonlinearity_samples,
                         simulate_nominal, simulate_uncertain, validate_roa)

__all__ = [
    "ResolvedScenario",
    "resolve_scenario",
    "certify_nominal",
    "certify_robust",
    "run_sweep",
    "run_validation",
    "simulate_scenario",
]


@dataclass
class ResolvedScenario:
    """Config resolved into concrete model objects."""

    config: ScenarioConfig
    kind: str  # "nominal" | "uncertain" | "pendulum" | "vehicle"
    plant: object
    nn: NeuralNetwork
    eq: Equilibrium
    params: object = None
    # Extra ellipsoid containment rows (radius, row over the plant state)
    # restricting the certificate to the region where channel bounds hold.
    validity: tuple = ()

    @property
    def n_x(self) -> int:
        return self.plant.A.shape[0]


def _resolve_equilibrium(cfg: ScenarioConfig, plant, nn: NeuralNetwork) -> Equilibrium:
    spec = cfg.equilibrium
    n = plant.A.shape[0]
    if spec == "origin":
        eq = propagate_equilibrium(nn, np.zeros(n))
    elif spec == "solve":
        eq = find_equilibrium(plant, nn)
    else:
        eq = propagate_equilibrium(nn, np.asarray(spec, dtype=float))
    report = verify_equilibrium(plant, nn, eq, tol=1e-7)
    if not report.passed:
        raise ConfigError(
            "declared equilibrium does not satisfy the fixed-point conditions "
            f"(state residual {report.residual_state:.3g})"
        )
    return eq


def resolve_scenario(cfg: ScenarioConfig) -> ResolvedScenario:
    """Instantiate plant, controller and equilibrium from a config."""
    spec = cfg.plant_spec
    kind = cfg.plant_type
    params = None
    validity: tuple = ()
    if kind == "nominal":
        plant = LtiPlant(np.asarray(spec["A"], dtype=float),
                         np.asarray(spec["B"], dtype=float))
    elif kind == "uncertain":
        plant = UncertainPlant(**{k: np.asarray(spec[k], dtype=float)
                                  for k in ("A", "B1", "B2", "C", "D1", "D2")})
    elif kind == "pendulum":
        params = PendulumParams(**spec.get("params", {}))
        plant = pendulum_plant(params)
        validity = ((params.theta_bar, np.array([1.0, 0.0])),)
    else:
        params = VehicleParams(**spec.get("params", {}))
        plant = vehicle_plant(params)
    if cfg.nn_weights is None:
        raise ConfigError("config: missing 'nn_weights'")
    try:
        nn = load_weights(cfg.nn_weights)
    except FileNotFoundError:
        raise ConfigError(f"weights file not found: {cfg.nn_weights}") from None
    eq = _resolve_equilibrium(cfg, plant, nn)
    return ResolvedScenario(cfg, kind, plant, nn, eq, params, validity)


# --- block construction -----------------------------------------------------

def _scalar_channel(idx: int) -> Channel:
    return Channel("plant", (idx,), (idx,))


def build_blocks(scn: ResolvedScenario, bounds: ActivationBounds
                 ) -> list[IqcBlock]:
    """Turn the config's block specs into concrete IQC blocks.

    Shortcut sources: "saturation" reads u_max from the plant parameters
    and the input bound from IBP; "plant_nonlinearity" reads the
    pendulum's gravity-residual bounds; "activation_slope" attaches to
    the activation path with the IBP slope range.
    """
    blocks: list[IqcBlock] = []
    for i, spec in enumerate(scn.config.blocks):
        btype, ch = spec["type"], spec["channel"]
        where = f"blocks[{i}]"
        src = spec.get("from")
        if btype == "norm_bounded_lti":
            blocks.append(norm_bounded_lti_iqc(
                float(spec["gain_bound"]),
                channel=_scalar_channel(ch),
                basis_len=int(spec.get("basis_len", 0)),
                pole=float(spec.get("pole", 0.0)),
                label=f"norm_bounded_lti[{ch}]",
            ))
            continue
        if src == "saturation":
            if scn.params is None:
                raise ConfigError(f"{where}: 'saturation' needs a named plant")
            lohi = saturation_sector(scn.params.u_max, float(bounds.u_bar.max()))
            if btype != "sector":
                raise ConfigError(f"{where}: 'saturation' provides a sector")
            lo, hi = lohi
        elif src == "plant_nonlinearity":
            if scn.kind != "pendulum":
                raise ConfigError(f"{where}: 'plant_nonlinearity' needs the pendulum")
            sector, slope = pendulum_nonlinearity_bounds(scn.params)
            lo, hi = sector if btype == "sector" else slope
        elif src == "activation_slope":
            if btype != "off_by_one" or ch != "activation":
                raise ConfigError(
                    f"{where}: 'activation_slope' is an off_by_one source for "
                    "the activation channel"
                )
            lo, hi = bounds.slope_lo, bounds.slope_hi
        elif btype == "sector":
            lo, hi = float(spec["alpha"]), float(spec["beta"])
        else:
            lo, hi = float(spec["slope_lo"]), float(spec["slope_hi"])

        if ch == "activation":
            channel = Channel("activation")
            n = scn.nn.n_phi
            lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
            hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
        else:
            channel = _scalar_channel(ch)
        if btype == "sector":
            blocks.append(static_sector_iqc(lo, hi, channel,
                                            label=f"sector[{ch}]"))
        else:
            blocks.append(off_by_one_iqc(lo, hi, channel,
                                         label=f"off_by_one[{ch}]"))
    return blocks


# --- certification ----------------------------------------------------------

def _solver_kwargs(cfg: ScenarioConfig):
    opts = cfg.solver_options
    eps = float(opts.get("eps", 1e-6))
    p_floor = float(opts.get("p_floor", 1e-8))
    solve_opts = {}
    if "solver" in opts:
        solve_opts["solver"] = opts["solver"]
    verify_tol = float(opts.get("verify_tol", 1e-7))
    return eps, p_floor, solve_opts, verify_tol


def _echo(cfg: ScenarioConfig, delta_v: float | None) -> dict:
    return {"config_sha256": cfg.hash, "config": cfg.raw,
            "delta_v": delta_v}


def _assemble(scn: ResolvedScenario, delta_v: float
              ) -> tuple[LmiProblem, ActivationBounds, list[IqcBlock]]:
    cfg = scn.config
    lft = build_lft(scn.nn)
    bounds = propagate_bounds(scn.nn, scn.eq, delta_v)
    eps, p_floor, _, _ = _solver_kwargs(cfg)
    n_1 = scn.nn.layer_widths[0]
    if scn.kind == "nominal" and not cfg.blocks:
        problem = assemble_nominal(
            scn.plant, lft, scn.eq, bounds, eps=eps, p_floor=p_floor,
            first_layer_width=n_1, extra_containments=list(scn.validity),
        )
        return problem, bounds, []
    plant = scn.plant.to_uncertain() if scn.kind == "nominal" else scn.plant
    blocks = build_blocks(scn, bounds)
    ext = extend_system(plant, blocks)
    problem = assemble_robust(
        ext, lft, bounds, eq=scn.eq, first_layer_width=n_1,
        eps=eps, p_floor=p_floor, extra_containments=list(scn.validity),
    )
    return problem, bounds, blocks


def certify_nominal(cfg: ScenarioConfig, delta_v: float | None = None
                    ) -> tuple[RoaCertificate, LmiProblem]:
    """Full nominal pipeline; the config must describe a nominal plant."""
    scn = resolve_scenario(cfg)
    if scn.kind != "nominal":
        raise ConfigError("certify-nominal requires a nominal plant config")
    dv = delta_v if delta_v is not None else cfg.delta_v
    if dv is None:
        raise ConfigError("config: missing 'delta_v'")
    problem, _, _ = _assemble(scn, dv)
    _, _, solve_opts, verify_tol = _solver_kwargs(cfg)
    cert = solve(problem, backend=CvxpyBackend(), verify_tol=verify_tol,
                 config_echo=_echo(cfg, dv), **solve_opts)
    return cert, problem


def certify_robust(cfg: ScenarioConfig, delta_v: float | None = None
                   ) -> tuple[RoaCertificate, LmiProblem]:
    """Full robust pipeline on the extended system.

    With an empty block list this degenerates to the nominal analysis of
    the same plant.  A nonzero equilibrium is rejected during assembly.
    """
    scn = resolve_scenario(cfg)
    dv = delta_v if delta_v is not None else cfg.delta_v
    if dv is None:
        raise ConfigError("config: missing 'delta_v'")
    problem, _, _ = _assemble(scn, dv)
    _, _, solve_opts, verify_tol = _solver_kwargs(cfg)
    cert = solve(problem, backend=CvxpyBackend(), verify_tol=verify_tol,
                 config_echo=_echo(cfg, dv), **solve_opts)
    return cert, problem


def run_sweep(cfg: ScenarioConfig) -> SweepResult:
    """Certify across the config's delta_v grid and tabulate the results."""
    grid = cfg.sweep_grid
    if grid is None:
        raise ConfigError("config: missing 'sweep'")
    certify = certify_nominal if (
        cfg.plant_type == "nominal" and not cfg.blocks
    ) else certify_robust

    def solve_at(dv: float):
        return certify(cfg, delta_v=dv)[0]

    return sweep_delta_v(solve_at, grid)


# --- validation -------------------------------------------------------------

def _channel_samplers(scn: ResolvedScenario, blocks: list[IqcBlock],
                      rng: np.random.Generator, n: int):
    """Per-realization channel operator lists for the uncertain loop.

    Named plants use their physical families (true nonlinearity mixtures
    for the pendulum channel, normalized LTI draws for the actuator);
    generic uncertain channels fall back on the family induced by the
    first block covering them.
    """
    if scn.kind == "pendulum":
        sector, slope = pendulum_nonlinearity_bounds(scn.params)
        nonlins = pendulum_nonlinearity_samples(
            rng, n, sector[1], scn.params.theta_bar, slope[1])
        return [[op, SatOp(scn.params.u_max)] for op in nonlins]
    if scn.kind == "vehicle":
        ltis = lti_operator_samples(rng, n, scn.params.gain_bound)
        return [[SatOp(scn.params.u_max), op] for op in ltis]
    plant = scn.plant.to_uncertain() if scn.kind == "nominal" else scn.plant
    by_channel: dict[int, list] = {j: [] for j in range(plant.n_q)}
    for j in range(plant.n_q):
        blk = next(
            (b for b in blocks
             if b.channel.kind == "plant" and j in b.channel.q_idx), None)
        if blk is None:
            by_channel[j] = [StaticOp(lambda p: np.zeros_like(p), "zero")] * n
        elif blk.label.startswith("norm_bounded_lti"):
            # The first basis matrix carries b^2 on its leading p rows.
            b2 = float(blk.multipliers.basis[0][0, 0])
            by_channel[j] = lti_operator_samples(rng, n, float(np.sqrt(b2)))
        else:
            # Static sector family: random gains in [alpha, beta] read from
            # the memoryless filter realization.
            k_local = list(blk.channel.q_idx).index(j)
            beta = float(blk.filter.D1[k_local, k_local])
            alpha = float(-blk.filter.D1[blk.filter.n_r // 2 + k_local, k_local])
            gains = rng.uniform(alpha, beta, size=n)
            by_channel[j] = [StaticOp(lambda p, g=g: g * p, f"gain {g:.3f}")
                             for g in gains]
    return [[by_channel[j][i] for j in range(plant.n_q)] for i in range(n)]


def run_validation(cfg: ScenarioConfig, cert: RoaCertificate,
                   n_samples: int | None = None) -> ValidationReport:
    """Monte-Carlo validation of a certificate against the true loop.

    Spreads the sample budget across sampled admissible perturbation
    realizations (one operator set per realization); aggregates the
    per-realization reports.
    """
    scn = resolve_scenario(cfg)
    opts = cfg.validation_options
    n_total = int(n_samples if n_samples is not None else opts["samples"])
    steps = int(opts["steps"])
    seed = int(opts["seed"])
    conv_tol = float(opts["conv_tol"])
    inv_tol = float(opts["inv_tol"])
    dv = cert.config_echo.get("delta_v", cfg.delta_v)
    _, _, blocks = _assemble(scn, float(dv))
    P = np.asarray(cert.P, dtype=float)
    n_x = scn.n_x

    if scn.kind == "nominal" and not blocks:
        run = lambda x0: simulate_nominal(scn.plant, scn.nn, x0, steps)
        return validate_roa(P, n_x, run, n_total, steps, seed,
                            conv_tol, inv_tol, x_star=scn.eq.x_star)

    rng = np.random.default_rng(seed)
    n_real = max(1, min(int(opts["realizations"]), n_total))
    op_sets = _channel_samplers(scn, blocks, rng, n_real)
    plant = scn.plant.to_uncertain() if scn.kind == "nominal" else scn.plant
    per = [n_total // n_real + (1 if i < n_total % n_real else 0)
           for i in range(n_real)]
    agg = ValidationReport(0, steps, 0.0, 0, 0, conv_tol, inv_tol)
    for i, (ops, n_i) in enumerate(zip(op_sets, per)):
        if n_i == 0:
            continue
        run = lambda x0, ops=ops: simulate_uncertain(
            plant, scn.nn, ops, x0, steps, blocks=blocks)
        rep = validate_roa(P, n_x, run, n_i, steps, seed + 1 + i,
                           conv_tol, inv_tol)
        agg.n_samples += rep.n_samples
        agg.max_level = max(agg.max_level, rep.max_level)
        agg.invariance_violations += rep.invariance_violations
        agg.nonconverged += rep.nonconverged
        if rep.worst_x0 is not None and (not rep.passed or agg.worst_x0 is None):
            agg.worst_x0 = rep.worst_x0
    return agg


def simulate_scenario(cfg: ScenarioConfig, x0: np.ndarray, steps: int,
                      seed: int = 0) -> Trajectory:
    """Roll out the true closed loop described by a config.

    Named plants use their physical nonlinearities (exact gravity
    residual, saturation, a default actuator lag for the vehicle);
    generic uncertain plants draw one admissible operator set.
    """
    scn = resolve_scenario(cfg)
    if scn.kind == "nominal" and not cfg.blocks:
        return simulate_nominal(scn.plant, scn.nn, x0, steps)
    if scn.kind == "pendulum":
        ops = pendulum_true_ops(scn.params)
        plant = scn.plant
    elif scn.kind == "vehicle":
        ops = vehicle_true_ops(scn.params)
        plant = scn.plant
    else:
        plant = scn.plant.to_uncertain() if scn.kind == "nominal" else scn.plant
        lft = build_lft(scn.nn)
        bounds = propagate_bounds(scn.nn, scn.eq, cfg.delta_v or 1.0)
        blocks = build_blocks(scn, bounds)
        ops = _channel_samplers(scn, blocks, np.random.default_rng(seed), 1)[0]
    return simulate_uncertain(plant, scn.nn, ops, x0, steps)
