"""Command-line entry point: ``tvhawkes {simulate,estimate,bias-table,montecarlo,empirical}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from .model import (
    DEFAULT_BOX,
    ParamBox,
    ParamPath,
    ConfigError,
    EventParseError,
    constant_path,
    make_partition,
    model_path,
    read_events_csv,
    resolve_hn_rule,
    write_events_csv,
)


def floats(s: str) -> tuple:
    return tuple(float(v) for v in s.split(",") if v.strip())


def parse_box(s: str) -> ParamBox:
    v = floats(s)
    if len(v) != 6:
        raise argparse.ArgumentTypeError("--box needs 6 numbers: nu_lo,a_lo,b_lo,nu_hi,a_hi,b_hi")
    return ParamBox(v[:3], v[3:])


def parse_grid(s: str) -> dict:
    """'nu=0.2,0.4;a=5,8;b=20,30' or ranges 'nu=0.2:1.6:0.2'."""
    out = {}
    for part in s.split(";"):
        if not part.strip():
            continue
        key, _, val = part.partition("=")
        key = key.strip()
        if key not in ("nu", "a", "b"):
            raise argparse.ArgumentTypeError(f"unknown grid axis {key!r}")
        if ":" in val:
            lo, hi, step = (float(x) for x in val.split(":"))
            out[key] = tuple(np.round(np.arange(lo, hi + 0.5 * step, step), 12))
        else:
            out[key] = floats(val)
    return out


# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .simulate import SimConfig, realize_path, simulate_cox_sqrt, simulate_hawkes

    if args.path_params:
        with open(args.path_params) as fh:
            path = ParamPath.from_dict(json.load(fh))
    elif args.model == "const":
        path = constant_path(args.theta, args.T)
    elif args.model == "cox":
        path = constant_path((args.theta[0], 0.0, 1.0), args.T)
    else:
        path = model_path(args.model, args.T)
    if args.model == "cox":
        ev = simulate_cox_sqrt(path, args.n, args.T, args.seed)
    else:
        rp = realize_path(path, args.seed)
        ev = simulate_hawkes(SimConfig(seed=args.seed, T=args.T, n_scale=args.n), rp)
        if args.truth:
            print(json.dumps({"integrated_parameter": (args.n * rp.integrated_parameter()).tolist()}))
    write_events_csv(args.out, ev)
    print(f"{len(ev)} events on [0, {args.T:g}] -> {args.out}", file=sys.stderr)
    return 0


def cmd_estimate(args) -> int:
    from .bias import BiasTable, estimate_bc
    from .estimate import estimate_naive, fit_ch, fit_global_mle

    ev = read_events_csv(args.events, args.T)
    T = ev.horizon
    n = args.n if args.n else len(ev)
    box = args.box or DEFAULT_BOX
    if args.method in ("naive", "bc"):
        hn = resolve_hn_rule(args.hn_rule, n, T)
        part = make_partition(n, hn, T)
        if args.method == "naive":
            est = estimate_naive(ev, part, box)
        else:
            if not args.bias_table:
                raise ConfigError("--method bc needs --bias-table")
            est = estimate_bc(ev, part, box, BiasTable.load(args.bias_table))
        result = est.to_dict()
        result.update(h_n=hn, n=n, n_blocks=part.n_blocks, block_length=part.delta)
    elif args.method == "mle":
        g = fit_global_mle(ev, T, box)
        result = {"method": "mle", "theta_bar": g.theta.tolist(), "loglik": g.loglik, "converged": g.converged}
        try:
            result["C_hat"] = np.linalg.inv(-g.hessian_at_hat).tolist()
        except np.linalg.LinAlgError:
            pass
    else:
        ch = fit_ch(ev, T)
        result = {"method": "ch", "theta_bar": ch.summary.tolist(), "beta": list(ch.params.beta),
                  "a": ch.params.a, "b": ch.params.b, "cov": ch.cov.tolist(), "loglik": ch.loglik,
                  "converged": ch.converged}
    result.update(events=args.events, T=T, n_events=len(ev))
    text = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_bias_table(args) -> int:
    from .bias import DEFAULT_A, DEFAULT_B, DEFAULT_DELTAS, DEFAULT_NU, build_bias_table

    grid = {"nu": DEFAULT_NU, "a": DEFAULT_A, "b": DEFAULT_B}
    if args.grid:
        grid.update(args.grid)
    fixed = {"a": 0.0} if args.poisson else None
    t0 = time.time()

    def progress(i, n):
        if not args.quiet and (i % 25 == 0 or i == n - 1):
            print(f"cell {i + 1}/{n} ({time.time() - t0:.0f}s)", file=sys.stderr, flush=True)

    table = build_bias_table(args.box or DEFAULT_BOX, grid["nu"], grid["a"], grid["b"],
                             args.delta or DEFAULT_DELTAS, args.paths, args.seed, fixed, args.workers, progress,
                             iterated=not args.plain)
    table.save(args.out)
    print(f"{int(table.valid.sum())}/{table.valid.size} valid cells -> {args.out}", file=sys.stderr)
    return 0


def cmd_montecarlo(args) -> int:
    from .experiments import ExperimentConfig, run_montecarlo

    cfg = ExperimentConfig.from_json(args.config).to_dict() if args.config else {}
    overrides = {
        "model": args.model, "M": args.M, "seed": args.seed, "T": args.T, "n_scale": args.n,
        "hn": args.hn, "estimators": args.estimators, "bias_table": args.bias_table,
        "workers": args.workers, "rep_offset": args.rep_offset, "theta": args.theta, "out": args.out,
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig.from_dict(cfg)
    res = run_montecarlo(cfg)
    if res.z_table is not None:
        print("Z statistics\n" + res.z_table.format())
    print("estimation errors\n" + res.error_table.format())
    print(f"{res.n_failed} failed replications; {res.wall_seconds:.1f}s", file=sys.stderr)
    return 0


def cmd_empirical(args) -> int:
    from .bias import BiasTable
    from .experiments import run_empirical

    ev = read_events_csv(args.events, args.T)
    if len(ev) == 0:
        raise EventParseError(f"{args.events}: no events")
    table = BiasTable.load(args.bias_table) if args.bias_table else None
    res = run_empirical(ev, ev.horizon, args.rules, table, args.block_seconds, with_ch=not args.no_ch)
    res.write(args.out)
    for label, s in res.summary.items():
        print(f"{label:10}" + "".join(f"{v:10.4f}" for v in s["theta"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tvhawkes", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one path and write event times")
    p.add_argument("--model", choices=["const", "I", "II", "III", "IV", "cox"], default="I")
    p.add_argument("--n", type=int, default=1, help="intensity scale n")
    p.add_argument("--T", type=float, default=21600.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta", type=floats, default=(0.8, 11.0, 30.0), help="constant parameter (const, cox)")
    p.add_argument("--path-params", help="JSON parameter path overriding --model")
    p.add_argument("--truth", action="store_true", help="print the integrated parameter of the path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate the integrated parameter from an event file")
    p.add_argument("--events", required=True)
    p.add_argument("--T", type=float, default=None, help="horizon (default: last event time)")
    p.add_argument("--n", type=int, default=None, help="scale used by h_n rules (default: event count)")
    p.add_argument("--hn-rule", default="sqrt")
    p.add_argument("--method", choices=["naive", "bc", "mle", "ch"], default="naive")
    p.add_argument("--bias-table")
    p.add_argument("--box", type=parse_box)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bias-table", help="build a Monte-Carlo bias table")
    p.add_argument("--box", type=parse_box)
    p.add_argument("--grid", type=parse_grid, help="e.g. 'nu=0.2:1.6:0.2;a=5,8,11,14,17;b=20,35,50'")
    p.add_argument("--delta", type=floats)
    p.add_argument("--paths", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--poisson", action="store_true", help="pin a=0 (Poisson sub-table)")
    p.add_argument("--plain", action="store_true", help="store b only, without c = E b(theta_hat)")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bias_table)

    p = sub.add_parser("montecarlo", help="Monte-Carlo study (Z tables, estimator errors, QQ data)")
    p.add_argument("--config")
    p.add_argument("--model", choices=["I", "II", "III", "IV", "const", "cox"])
    p.add_argument("--M", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--hn", nargs="+")
    p.add_argument("--estimators", nargs="+", choices=["naive", "bc", "mle", "ch"])
    p.add_argument("--bias-table")
    p.add_argument("--workers", type=int)
    p.add_argument("--rep-offset", type=int)
    p.add_argument("--theta", type=floats)
    p.add_argument("--out")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("empirical", help="local MLE path and integrated estimates for one day of events")
    p.add_argument("--events", required=True)
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--rules", nargs="+", default=["sqrt", "2sqrt", "4sqrt", "8sqrt", "16sqrt"])
    p.add_argument("--bias-table")
    p.add_argument("--block-seconds", type=float, default=1800.0)
    p.add_argument("--no-ch", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_empirical)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, EventParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
