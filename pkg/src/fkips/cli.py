"""Command-line entry point.

Subcommands: ``run`` (execute an experiment), ``oracle`` (exact flow only),
``tune`` (bound calculators), ``verify-bounds`` (inequality suite) and
``adaptive`` (adaptive run; same as ``run`` with the adaptive kind
enforced).  Exit codes: 0 all requested checks pass, 1 a bound check
failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import bounds
from .errors import ConfigError, FkipsError
from .flow import run_flow
from .harness import (
    emit_csv,
    parse_config,
    run_experiment,
    verify_bounds,
)

USAGE_ERROR = 2
CHECK_FAILED = 1


def _load_config(path: str, args):
    with open(path) as fh:
        cfg = parse_config(fh.read())
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.particles is not None:
        overrides["n_particles"] = args.particles
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        cfg.raw.sections.setdefault("run", {}).update(overrides)
        cfg = type(cfg).from_raw(cfg.raw)
    return cfg


def _add_common(p):
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--particles", type=int, default=None)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="speed only, never output")
    p.add_argument("--out", default=".", help="output directory")


def _cmd_run(args, force_kind=None) -> int:
    cfg = _load_config(args.config, args)
    if force_kind and cfg.kind != force_kind:
        print(f"config algorithm kind is {cfg.kind!r}, expected {force_kind!r}", file=sys.stderr)
        return USAGE_ERROR
    result = run_experiment(cfg)
    os.makedirs(args.out, exist_ok=True)
    emit_csv(result.raw_csv, os.path.join(args.out, "raw.csv"))
    emit_csv(result.stats_csv, os.path.join(args.out, "stats.csv"))
    if result.oracle_csv is not None:
        emit_csv(result.oracle_csv, os.path.join(args.out, "oracle.csv"))
    print(f"wrote raw.csv, stats.csv{', oracle.csv' if result.oracle_csv else ''} to {args.out}")
    return 0


def _cmd_oracle(args) -> int:
    cfg = _load_config(args.config, args)
    flow = cfg.build_flow()
    if flow is None:
        print("adaptive configs have no standalone exact flow", file=sys.stderr)
        return USAGE_ERROR
    trace = run_flow(flow)
    lines = ["step,log_gamma1,gamma1" + "".join(f",eta_{i}" for i in range(flow.dim))]
    for n, eta in enumerate(trace.etas):
        cells = [str(n), format(trace.log_gamma1[n], ".17g"), format(trace.gamma1[n], ".17g")]
        cells += [format(w, ".17g") for w in eta.weights]
        lines.append(",".join(cells))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "oracle.csv")
    emit_csv("\n".join(lines) + "\n", path)
    print(f"wrote {path}")
    return 0


def _cmd_verify(args) -> int:
    cfg = _load_config(args.config, args)
    report = verify_bounds(cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "verify.csv")
    emit_csv(report.to_csv(), path)
    for row in report.rows:
        print(f"{row.status:17s} {row.name} [{row.scope}] lhs={row.lhs:.6g} rhs={row.rhs:.6g}")
    print(f"wrote {path}")
    # hypothesis-unmet rows are refusals, not failures
    return CHECK_FAILED if report.failures() else 0


def _cmd_tune(args) -> int:
    values = {}
    inputs = {"a": args.a}
    if args.g_sup is not None and args.particles is not None:
        params = bounds.RegimeParams(a=args.a, g_sup=args.g_sup, n_particles=args.particles)
        values["r1_star"], values["r2_star"] = bounds.r_star_bounded(params)
        values["rt1"], values["rt2"] = bounds.r_tilde_bounded(params)
        values["b_max"] = bounds.condition_bounded(args.g_sup, args.a)
        inputs.update({"g_sup": args.g_sup, "n_particles": args.particles})
    if args.beta is not None and args.gap is not None and args.delta is not None:
        mode = "decreasing" if args.decreasing else "bounded"
        values["m_p"] = bounds.tune_mcmc_iters(
            args.beta,
            args.delta,
            args.gap,
            args.a,
            mode,
            delta_osc=args.delta_osc,
            delta_p_osc=args.delta_osc,
        )
        inputs.update({"beta": args.beta, "gap": args.gap, "delta": args.delta})
    if args.osc_v is not None and args.gap is not None:
        values["critical_delta_beta"] = bounds.critical_delta_beta(args.a, args.osc_v, args.gap)
        inputs["osc_v"] = args.osc_v
    if not values:
        print("nothing to compute; see fkips tune --help", file=sys.stderr)
        return USAGE_ERROR
    report = bounds.BoundReport(name="tune", inputs=inputs, values=values)
    print(report.as_key_values())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "tune.csv")
        lines = ["name,key,value"] + [",".join(r) for r in report.as_csv_rows()]
        emit_csv("\n".join(lines) + "\n", path)
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fkips", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("run", "oracle", "verify-bounds", "adaptive"):
        p = sub.add_parser(name)
        _add_common(p)

    p = sub.add_parser("tune")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--g-sup", type=float, default=None)
    p.add_argument("--particles", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--delta", type=float, default=None, help="minorization mass")
    p.add_argument("--gap", type=float, default=None, help="k0-move potential climb")
    p.add_argument("--delta-osc", type=float, default=None, help="increment times osc(V)")
    p.add_argument("--osc-v", type=float, default=None)
    p.add_argument("--decreasing", action="store_true")
    p.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "adaptive":
            return _cmd_run(args, force_kind="adaptive")
        if args.command == "oracle":
            return _cmd_oracle(args)
        if args.command == "verify-bounds":
            return _cmd_verify(args)
        if args.command == "tune":
            return _cmd_tune(args)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except FkipsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CHECK_FAILED
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
