"""Command-line front end.

Subcommands: mech, wave, sim-speed, sim-extinction, exit-mass, exit-tail,
verify. Data outputs are CSV by default (JSON mirrors them); every float is
rendered with 17 significant digits so repeated runs with the same seed are
byte-identical. Exit codes: 0 on success, 1 on verification failure, 2 on
configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import backbone, exit_analysis, sim, waves
from .config import ExperimentConfig, load_mechanism
from .errors import ConfigError, SuperBBMError
from .mechanism import check_condition_a3, check_log_moment, find_lambda_star
from .verify import CHECK_NAMES, format_g17, run_verify_suite


def _write_out(text: str, out_path):
    if out_path:
        with open(out_path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _rows_to_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_g17(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _rows_to_json(header, rows):
    payload = [
        {k: (format_g17(v) if isinstance(v, float) else v) for k, v in zip(header, row)}
        for row in rows
    ]
    return json.dumps(payload, indent=2) + "\n"


def _emit(header, rows, args):
    text = _rows_to_json(header, rows) if args.format == "json" else _rows_to_csv(header, rows)
    _write_out(text, args.out)


def _experiment(args, kind, **numeric):
    return ExperimentConfig(
        mechanism_path=getattr(args, "config", None), kind=kind, seed=args.seed,
        out=args.out, fmt=args.format, **numeric).validate()


def cmd_mech(args):
    _experiment(args, "mech")
    mech = load_mechanism(args.config)
    ls = find_lambda_star(mech)
    law = backbone.offspring_pmf(mech, ls)
    a3 = check_condition_a3(mech, ls)
    logm = check_log_moment(mech, args.eps)
    payload = {
        "lambda_star": format_g17(ls.value),
        "psi_prime_at_lambda_star": format_g17(ls.psi_prime_at),
        "q": format_g17(law.q),
        "a3_verdict": a3.verdict,
        "a3_tail_exponent": format_g17(a3.tail_exponent),
        "a3_integral_to_cutoff": format_g17(a3.integral_to_cutoff),
        "log_moment_eps": format_g17(float(args.eps)),
        "log_moment_value": format_g17(logm),
        "p_n_first_20": {
            str(int(n)): format_g17(float(p))
            for n, p in zip(law.n_values[:20], law.pmf[:20])
        },
        "tail_mass": format_g17(law.tail_mass),
        "mean_identity_residual": format_g17(backbone.mean_identity_residual(law, mech.alpha)),
    }
    _write_out(json.dumps(payload, indent=2) + "\n", args.out)
    return 0


def cmd_wave(args):
    _experiment(args, "wave", rho=args.rho)
    mech = load_mechanism(args.config)
    ls = find_lambda_star(mech)
    if args.kind == "phi":
        prof = waves.solve_phi(mech, ls, rho=args.rho, tol=args.tol,
                               domain_length=args.domain_length)
        if isinstance(prof, waves.NoWave):
            _write_out(json.dumps({"no_wave": True, "rho": format_g17(args.rho),
                                   "speed_limit": format_g17(prof.speed_limit),
                                   "reason": prof.reason}, indent=2) + "\n", args.out)
            return 0
    else:
        psi_prof = waves.solve_psi_wave(mech, ls, rho=args.rho, tol=args.tol,
                                        half_length=args.domain_length)
        prof = psi_prof if args.kind == "psi" else waves.theta_from_psi(psi_prof)
    if args.emit_psi_d:
        source = prof if prof.kind == "psi" else waves.solve_psi_wave(
            mech, ls, rho=args.rho, tol=args.tol, half_length=args.domain_length)
        curve = waves.derive_psi_d(source)
        text = _rows_to_csv(["lambda", "psi_d"],
                            list(zip(map(float, curve.lambda_grid), map(float, curve.values))))
        with open(args.emit_psi_d, "w", newline="") as fh:
            fh.write(text)
    res = waves.ode_residual_pointwise(prof, mech, args.rho)
    stride = max(1, len(prof.grid) // args.max_rows) if args.max_rows else 1
    rows = [(float(x), float(v), float(r) if math.isfinite(r) else "")
            for x, v, r in zip(prof.grid[::stride], prof.values[::stride], res[::stride])]
    _emit(["x", "value", "residual"], rows, args)
    return 0


def cmd_sim_speed(args):
    _experiment(args, "sim-speed", rho=args.rho, t=args.t, n=args.n)
    mech = load_mechanism(args.config)
    runtime = sim.SimConfig(mechanism=mech, rho=args.rho, barrier=args.barrier,
                            x0=args.x0, t_max=args.t, checkpoints=(args.t,),
                            particle_event_cap=args.event_cap)
    batch = sim.run_replicas(runtime, args.n, master_seed=args.seed, threads=args.threads)
    r_t = batch.rightmost[:, -1]
    rows = []
    for i in range(args.n):
        survived = int(not batch.extinct[i])
        r_val = float(r_t[i]) if survived and not math.isnan(r_t[i]) else ""
        rows.append((i, survived, r_val))
    _emit(["replica", "survived", "R_t"], rows, args)
    return 0


def cmd_sim_extinction(args):
    _experiment(args, "sim-extinction", rho=args.rho, t=args.t_max, n=args.n)
    mech = load_mechanism(args.config)
    cfg = sim.SimConfig(mechanism=mech, rho=args.rho, barrier=args.barrier, x0=args.x0,
                        t_max=args.t_max, particle_event_cap=args.event_cap)
    batch = sim.run_replicas(cfg, args.n, master_seed=args.seed, threads=args.threads)
    rows = [(i, int(batch.extinct[i])) for i in range(args.n)]
    _emit(["replica", "extinct"], rows, args)
    return 0


def cmd_exit_mass(args):
    _experiment(args, "exit-mass", rho=args.rho, z=args.z, n=args.n)
    mech = load_mechanism(args.config)
    rho = args.rho if args.rho is not None else math.sqrt(2.0 * mech.alpha)
    cfg = sim.SimConfig(mechanism=mech, rho=rho, barrier=-args.z, x0=args.x0,
                        particle_event_cap=args.event_cap)
    tally = sim.sample_exit_mass(cfg, args.n, master_seed=args.seed, threads=args.threads)
    rows = [(i, int(tally.counts[i]), int(tally.censored[i])) for i in range(args.n)]
    _emit(["replica", "count", "censored"], rows, args)
    return 0


def cmd_exit_tail(args):
    _experiment(args, "exit-tail", z=args.z)
    mech = load_mechanism(args.config)
    alpha = args.alpha if args.alpha is not None else mech.alpha
    ls = find_lambda_star(mech)
    curve = waves.exit_mechanism_curve(mech, ls, rho=math.sqrt(2.0 * alpha))
    f_d = exit_analysis.generator_curve(curve)
    s = np.array([float(v) for v in args.s_grid.split(",")])
    gen = exit_analysis.evolve_gen_fn(f_d, args.z, 1.0 - s)
    root2a = math.sqrt(2.0 * alpha)
    scale = root2a * args.z * math.exp(args.z * root2a)
    ratios = gen.F2 * s * np.log(1.0 / s) ** 2 / scale
    header = ["s", "F", "F1", "F2", "ratio"]
    rows = [
        [float(sv), float(F), float(F1), float(F2), float(r)]
        for sv, F, F1, F2, r in zip(s, gen.F, gen.F1, gen.F2, ratios)
    ]
    if args.mc:
        counts, censored = [], []
        with open(args.mc, newline="") as fh:
            for rec in csv.DictReader(fh):
                counts.append(int(rec["count"]))
                censored.append(bool(int(rec.get("censored", "0"))))
        tally = sim.ExitTally(counts=np.array(counts, dtype=np.int64),
                              censored=np.array(censored, dtype=bool))
        header += ["mc_pgf", "mc_se"]
        live = tally.counts[~tally.censored]
        for row, sv in zip(rows, s):
            vals = np.power(float(sv), live)
            row.extend([float(np.mean(vals)),
                        float(np.std(vals) / math.sqrt(vals.size))])
    _emit(header, [tuple(r) for r in rows], args)
    return 0


def cmd_verify(args):
    checks = args.checks.split(",") if args.checks else None
    if checks:
        unknown = set(checks) - set(CHECK_NAMES)
        if unknown:
            raise ConfigError(f"unknown checks: {sorted(unknown)}")

    def progress(result):
        print(f"[{result.status:4s}] {result.name} ({result.runtime_s:.1f}s)",
              file=sys.stderr)

    report = run_verify_suite(master_seed=args.seed, checks=checks,
                              threads=args.threads, progress=progress)
    if args.out:
        text = report.as_csv() if args.format == "csv" else report.as_json() + "\n"
        _write_out(text, args.out)
        print(report.as_table())
    elif args.format == "json":
        print(report.as_json())
    else:
        print(report.as_table())
    return 0 if report.overall == "pass" else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="superbbm",
        description="Skeleton simulation and wave analysis for super-Brownian "
                    "motion with an absorbing barrier.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="mechanism file (TOML or JSON)")
        p.add_argument("--seed", type=int, default=20240801, help="master seed (64-bit)")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--threads", type=int, default=2)

    p = sub.add_parser("mech", help="mechanism quantities as JSON")
    add_common(p)
    p.add_argument("--eps", type=float, default=1.0, help="eps of the x(log x)^(2+eps) moment")
    p.set_defaults(fn=cmd_mech)

    p = sub.add_parser("wave", help="solve a wave profile, emit x,value,residual")
    add_common(p)
    p.add_argument("--kind", choices=("phi", "psi", "theta"), required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--domain-length", type=float, default=None)
    p.add_argument("--emit-psi-d", default=None, help="also write (lambda, psi_d) pairs here")
    p.add_argument("--max-rows", type=int, default=4000,
                   help="downsample the emitted grid to at most this many rows (0 = all)")
    p.set_defaults(fn=cmd_wave)

    p = sub.add_parser("sim-speed", help="right-most position at horizon t per replica")
    add_common(p)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--barrier", type=float, default=0.0)
    p.add_argument("--event-cap", type=int, default=10**7)
    p.set_defaults(fn=cmd_sim_speed)

    p = sub.add_parser("sim-extinction", help="extinction flags per replica")
    add_common(p)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--barrier", type=float, default=0.0)
    p.add_argument("--event-cap", type=int, default=10**7)
    p.set_defaults(fn=cmd_sim_extinction)

    p = sub.add_parser("exit-mass", help="absorbed counts at barrier depth z per replica")
    add_common(p)
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--rho", type=float, default=None,
                   help="drift (default: the critical speed sqrt(2 alpha))")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--event-cap", type=int, default=10**6)
    p.set_defaults(fn=cmd_exit_mass)

    p = sub.add_parser("exit-tail", help="pgf flow values and tail ratios on an s-grid")
    add_common(p)
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--alpha", type=float, default=None,
                   help="override alpha in the tail scale (default: from the mechanism)")
    p.add_argument("--s-grid", required=True, help="comma-separated s values")
    p.add_argument("--mc", default=None, help="tally CSV to append empirical pgf columns")
    p.set_defaults(fn=cmd_exit_tail)

    p = sub.add_parser("verify", help="run the acceptance suite")
    add_common(p, needs_config=False)
    p.add_argument("--checks", default=None,
                   help=f"comma-separated subset of: {','.join(CHECK_NAMES)}")
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SuperBBMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
