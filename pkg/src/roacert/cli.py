"""Command-line front end.

Commands: certify-nominal, certify-robust, sweep, simulate, validate.
Exit codes: 0 = certified / all checks pass, 2 = infeasible, 1 = error.
Delimited outputs (certificate JSON, sweep/trajectory/ellipse CSV) are
written next to matching rendered figures when an output path is given.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from roacert.config import ConfigError, load_config
from roacert.pipeline import (certify_nominal, certify_robust, run_sweep,
                              run_validation, simulate_scenario)
from roacert.sdp import RoaCertificate
from roacert.sim import trajectory_csv, write_ellipse_csv

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def _apply_seed(cfg, seed):
    if seed is not None:
        cfg.raw.setdefault("validation", {})["seed"] = int(seed)


def _emit_certificate(cert: RoaCertificate, args) -> None:
    text = cert.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if cert.P_x is not None and args.ellipse_out:
        i, j = (int(s) for s in args.ellipse_slice.split(","))
        center = cert.x_star
        write_ellipse_csv(args.ellipse_out, cert.P_x, i, j, center=center)
        from roacert.plots import plot_ellipse_slice

        plot_ellipse_slice(cert.P_x, Path(args.ellipse_out).with_suffix(".png"),
                           i, j, center=center)


def _certify(args, robust: bool) -> int:
    cfg = load_config(args.config)
    _apply_seed(cfg, args.seed)
    certify = certify_robust if robust else certify_nominal
    cert, _ = certify(cfg)
    _emit_certificate(cert, args)
    if cert.status == "optimal":
        print(f"certified: trace(P_x) = {cert.objective:.6g}", file=sys.stderr)
        return EXIT_OK
    print(f"not certified: status = {cert.status}", file=sys.stderr)
    return EXIT_INFEASIBLE if cert.status == "infeasible" else EXIT_ERROR


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    _apply_seed(cfg, args.seed)
    result = run_sweep(cfg)
    best = result.best_volume
    out = Path(args.out) if args.out else Path("sweep.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta_v", "feasible", "trace_Px", "det_Pinv", "status",
                    "max_volume"])
        for r in result.rows:
            w.writerow([r.delta_v, int(r.feasible),
                        "" if r.trace_Px is None else r.trace_Px,
                        "" if r.det_Pinv is None else r.det_Pinv,
                        r.status, int(best is not None and r is best)])
    from roacert.plots import plot_sweep

    plot_sweep(result, out.with_suffix(".png"))
    n_feas = sum(r.feasible for r in result.rows)
    print(f"sweep: {n_feas}/{len(result.rows)} feasible points -> {out}",
          file=sys.stderr)
    return EXIT_OK if n_feas else EXIT_INFEASIBLE


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    x0 = np.array([float(s) for s in args.x0.split(",")])
    traj = simulate_scenario(cfg, x0, args.steps,
                             seed=args.seed if args.seed is not None else 0)
    out = Path(args.out) if args.out else Path("trajectory.csv")
    trajectory_csv(out, traj)
    from roacert.plots import plot_trajectory

    plot_trajectory(traj, out.with_suffix(".png"))
    print(f"simulated {traj.steps} steps -> {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    _apply_seed(cfg, args.seed)
    cert = RoaCertificate.from_json(Path(args.certificate).read_text())
    echoed = cert.config_echo.get("config_sha256")
    if echoed != cfg.hash:
        print(f"error: certificate hash {echoed} does not match config "
              f"{cfg.hash}", file=sys.stderr)
        return EXIT_ERROR
    if cert.status != "optimal":
        print(f"error: certificate status is {cert.status}", file=sys.stderr)
        return EXIT_ERROR

    from roacert.pipeline import _assemble, resolve_scenario
    from roacert.sdp import verify_certificate

    scn = resolve_scenario(cfg)
    dv = cert.config_echo.get("delta_v", cfg.delta_v)
    problem, _, _ = _assemble(scn, float(dv))
    ok, residuals = verify_certificate(problem, cert)
    worst = max(residuals, key=residuals.get)
    print(f"LMI re-verification: {'pass' if ok else 'FAIL'} "
          f"(worst residual {residuals[worst]:.3g} at {worst})")
    report = run_validation(cfg, cert)
    print("simulation validation:", report.summary())
    if not report.passed and report.worst_x0 is not None:
        print("  offending x0:", np.array2string(report.worst_x0, precision=6))
    return EXIT_OK if ok and report.passed else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roacert",
        description="Certify stability and region-of-attraction estimates "
                    "for neural-network-controlled feedback loops.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, cert_flags=True):
        p.add_argument("config", help="scenario config (JSON)")
        p.add_argument("--out", help="output file path")
        p.add_argument("--seed", type=int, help="override the validation seed")
        if cert_flags:
            p.add_argument("--ellipse-slice", default="0,1", metavar="i,j",
                           help="coordinate pair for the ellipse slice export")
            p.add_argument("--ellipse-out",
                           help="write the ellipse slice boundary CSV here")

    common(sub.add_parser("certify-nominal",
                          help="nominal Lyapunov + sector certification"))
    common(sub.add_parser("certify-robust",
                          help="robust certification with IQC blocks"))
    common(sub.add_parser("sweep", help="delta_v sweep table"), cert_flags=False)
    p_sim = sub.add_parser("simulate", help="roll out the true closed loop")
    common(p_sim, cert_flags=False)
    p_sim.add_argument("--x0", required=True,
                       help="comma-separated initial state")
    p_sim.add_argument("--steps", type=int, default=500)
    p_val = sub.add_parser("validate",
                           help="re-verify and simulate a certificate")
    common(p_val, cert_flags=False)
    p_val.add_argument("certificate", help="certificate JSON path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "certify-nominal":
            return _certify(args, robust=False)
        if args.command == "certify-robust":
            return _certify(args, robust=True)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        return _cmd_validate(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
