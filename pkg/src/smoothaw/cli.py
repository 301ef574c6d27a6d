"""Command-line interface.

Subcommands::

    aw exact|oracle       adapted Wasserstein distance (DPP or brute-force LP)
    w2 discrete           discrete Wasserstein distance
    smooth-aw upper       structural upper bound for smoothed measures
    kernels scan          kernel-Lipschitz ratio scan
    smpd stat|test        martingale projection statistic and test
    rates fast|sharp|noconv
    constants qstar|c1|c2

Measures are read from JSON (``{"T", "d", "paths", "weights"}``) or, for files
ending in ``.csv``, from the CSV layout. ``--config`` supplies defaults for any
option (keys are the option names with ``-`` replaced by ``_``); for ``rates`` it
is an experiment config. Exit codes: 0 success, 2 invalid input or config,
3 numerical precondition failure, 4 resource cap.
"""

import argparse
import io
import json
import math
import sys
from pathlib import Path

from .adapted import aw_bruteforce_lp, aw_exact
from .constants import check_parameters, default_beta, kernel_constants, q_star, theorem_q
from .errors import InvalidInputError, NumericalPreconditionError, ResourceCapError
from .experiments import (
    ExperimentConfig,
    emit_report,
    run_nonconvergence_experiment,
    run_rate_experiment,
    run_sharpness_experiment,
)
from .measure import load_measure
from .ot import CostSpec, plan_to_csv, wasserstein_discrete
from .smooth_aw import MCConfig, kernel_lipschitz_scan, smooth_aw_upper
from .smoothing import SmoothedMeasure
from .smpd import smpd_statistic, smpd_test

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3
EXIT_CAP = 4


def _read_measure(path):
    if path is None:
        raise InvalidInputError("a measure file is required")
    fmt = "csv" if str(path).lower().endswith(".csv") else "json"
    try:
        return load_measure(path, fmt)
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc


def _emit(args, doc, csv_text=None):
    """Write a result document to ``--out`` (or stdout) in ``--format``."""
    fmt = args.format or "json"
    if fmt == "csv":
        if csv_text is None:
            raise InvalidInputError("this command has no CSV output")
        text = csv_text
    elif fmt == "json":
        text = json.dumps(doc, sort_keys=True) + "\n"
    else:
        raise InvalidInputError(f"unsupported format {fmt!r} for this command")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- handlers -----------------------------------------------------------------------------


def _cmd_aw(args):
    mu, nu = _read_measure(args.mu), _read_measure(args.nu)
    if args.action == "exact":
        value, plan = aw_exact(mu, nu, args.p, with_plan=True)
        buf = io.StringIO()
        plan.to_csv(buf)
        _emit(args, {"value": value, "p": args.p, "method": "dpp"}, buf.getvalue())
    else:
        value = aw_bruteforce_lp(mu, nu, args.p)
        _emit(args, {"value": value, "p": args.p, "method": "lp"})


def _cmd_w2(args):
    mu, nu = _read_measure(args.mu), _read_measure(args.nu)
    value, plan = wasserstein_discrete(mu, nu, CostSpec(args.p, args.cost))
    buf = io.StringIO()
    plan_to_csv(plan, buf)
    _emit(args, {"value": value, "p": args.p, "cost": args.cost}, buf.getvalue())


def _cmd_smooth_aw(args):
    mu, nu = _read_measure(args.mu), _read_measure(args.nu)
    mc = MCConfig(args.samples, args.seed, args.quad)
    est = smooth_aw_upper(mu, nu, args.sigma, args.p, args.mode, args.beta, mc)
    buf = io.StringIO()
    est.to_csv(buf)
    _emit(args, est.to_dict(), buf.getvalue())


def _cmd_kernels(args):
    mu = _read_measure(args.mu)
    sm = SmoothedMeasure(mu, args.sigma)
    scan = kernel_lipschitz_scan(sm, args.t, args.p, args.radius, args.count, args.seed, args.quad)
    lines = ["pair,ratio"] + [f"{i},{r!r}" for i, r in enumerate(scan.ratios.tolist())]
    doc = {"max_ratio": scan.max_ratio, "radius": scan.radius, "t": scan.t, "p": scan.p, "count": int(scan.ratios.size)}
    _emit(args, doc, "\n".join(lines) + "\n")


def _cmd_smpd(args):
    mu = _read_measure(args.mu)
    if args.action == "stat":
        res = smpd_statistic(mu, args.method, args.samples, args.seed)
        _emit(args, {"value": res.value, "standard_error": res.standard_error, "method": res.method})
    else:
        rep = smpd_test(mu, args.alpha, args.split_reps, args.seed)
        _emit(args, json.loads(rep.to_json()))


def _cmd_rates(args):
    if args.action == "sharp":
        grid = args.n_grid or [2**k for k in range(4, 15)]
        report = run_sharpness_experiment(grid)
        out_dir = args.out or "."
    else:
        if args.config is None:
            raise InvalidInputError("rates fast|noconv need --config")
        cfg = ExperimentConfig.from_dict(args.config_doc)
        overrides = {}
        if args.seed_given:
            overrides["seed"] = args.seed
        if args.n_grid:
            overrides["n_grid"] = tuple(args.n_grid)
        if overrides:
            cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
        out_dir = args.out or cfg.out_dir
        run = run_rate_experiment if args.action == "fast" else run_nonconvergence_experiment
        report = run(cfg, workers=args.workers)
    formats = [f for f in (args.format or "csv,json").split(",") if f]
    written = emit_report(report, formats, out_dir)
    summary = {
        "name": report.name,
        "slope": None if report.fit is None else report.slope,
        "slope_ci": None if report.fit is None else [c if math.isfinite(c) else None for c in report.slope_ci],
        "degenerate": report.degenerate,
        "files": written,
    }
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


def _cmd_constants(args):
    if args.action == "qstar":
        beta = args.beta if args.beta is not None else default_beta(args.p, args.T)
        doc = {"q_star": q_star(args.p, args.T, beta), "theorem_q": theorem_q(args.p, args.T), "p": args.p, "T": args.T, "beta": beta}
        _emit(args, doc)
        return
    mu = _read_measure(args.mu)
    beta = args.beta if args.beta is not None else default_beta(args.p, mu.T)
    check_parameters(args.p, mu.T, beta)
    k = kernel_constants(mu, args.t, args.p, args.sigma, beta, args.q)
    if args.action == "c1":
        doc = {"c1": k.c1, "log_c1": k.log_c1}
    else:
        doc = {"c2": k.c2, "log_c2": k.log_c2_unit, "D": k.D}
    doc.update({"p": args.p, "t": args.t, "sigma": args.sigma, "beta": beta, "q": k.q})
    _emit(args, doc)


# -- parser -------------------------------------------------------------------------------


def _common():
    c = argparse.ArgumentParser(add_help=False)
    c.add_argument("--config", help="JSON file of option defaults (experiment config for rates)")
    c.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
    c.add_argument("--out", help="output file (directory for rates)")
    c.add_argument("--format", help="json or csv; for rates a comma list of csv,json,svg")
    return c


def _pair(sp):
    sp.add_argument("--mu", help="first measure file")
    sp.add_argument("--nu", help="second measure file")


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="smoothaw", description="Adapted and smooth adapted Wasserstein tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    aw = sub.add_parser("aw", parents=[common], help="adapted Wasserstein distance")
    aw.add_argument("action", choices=["exact", "oracle"])
    _pair(aw)
    aw.add_argument("--p", type=float, default=2.0)
    aw.set_defaults(func=_cmd_aw)

    w2 = sub.add_parser("w2", parents=[common], help="discrete Wasserstein distance")
    w2.add_argument("action", choices=["discrete"])
    _pair(w2)
    w2.add_argument("--p", type=float, default=2.0)
    w2.add_argument("--cost", choices=["euclidean_power", "per_step_sum"], default="euclidean_power")
    w2.set_defaults(func=_cmd_w2)

    sa = sub.add_parser("smooth-aw", parents=[common], help="smooth adapted Wasserstein upper bound")
    sa.add_argument("action", choices=["upper"])
    _pair(sa)
    sa.add_argument("--sigma", type=float, default=1.0)
    sa.add_argument("--p", type=float, default=2.0)
    sa.add_argument("--mode", choices=["compact", "subgaussian"], default="compact")
    sa.add_argument("--beta", type=float, default=None)
    sa.add_argument("--samples", type=int, default=256)
    sa.add_argument("--quad", type=int, default=256)
    sa.set_defaults(func=_cmd_smooth_aw)

    ks = sub.add_parser("kernels", parents=[common], help="kernel-Lipschitz scan")
    ks.add_argument("action", choices=["scan"])
    ks.add_argument("--mu", help="measure file")
    ks.add_argument("--t", type=int, default=1)
    ks.add_argument("--sigma", type=float, default=1.0)
    ks.add_argument("--p", type=float, default=2.0)
    ks.add_argument("--radius", type=float, default=3.0)
    ks.add_argument("--count", type=int, default=256)
    ks.add_argument("--quad", type=int, default=256)
    ks.set_defaults(func=_cmd_kernels)

    sm = sub.add_parser("smpd", parents=[common], help="martingale projection statistic and test")
    sm.add_argument("action", choices=["stat", "test"])
    sm.add_argument("--mu", help="measure file (T = 2, d = 1)")
    sm.add_argument("--method", choices=["auto", "mc", "gh"], default="auto")
    sm.add_argument("--samples", type=int, default=4096)
    sm.add_argument("--alpha", type=float, default=0.1)
    sm.add_argument("--split-reps", type=int, default=4)
    sm.set_defaults(func=_cmd_smpd)

    rt = sub.add_parser("rates", parents=[common], help="rate experiments")
    rt.add_argument("action", choices=["fast", "sharp", "noconv"])
    rt.add_argument("--workers", type=int, default=1)
    rt.add_argument("--n-grid", type=int, nargs="+", default=None)
    rt.set_defaults(func=_cmd_rates)

    cs = sub.add_parser("constants", parents=[common], help="admissibility and Lipschitz constants")
    cs.add_argument("action", choices=["qstar", "c1", "c2"])
    cs.add_argument("--p", type=float, default=2.0)
    cs.add_argument("--T", type=int, default=2)
    cs.add_argument("--beta", type=float, default=None)
    cs.add_argument("--mu", help="measure file (c1, c2)")
    cs.add_argument("--t", type=int, default=1)
    cs.add_argument("--sigma", type=float, default=1.0)
    cs.add_argument("--q", type=float, default=None)
    cs.set_defaults(func=_cmd_constants)
    return parser


def _load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidInputError("config must be a JSON object")
    return doc


def _apply_config(args, defaults):
    """Fill options left at their defaults from the config document."""
    args.config_doc = {}
    if args.config is None:
        return
    doc = _load_config(args.config)
    args.config_doc = doc
    if args.command == "rates":
        return
    for key, value in doc.items():
        if key in ("command", "action", "func", "config"):
            continue
        if not hasattr(args, key):
            raise InvalidInputError(f"unknown config key {key!r} for {args.command}")
        if getattr(args, key) == defaults.get(key):
            setattr(args, key, value)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    defaults = {a.dest: a.default for a in sub._actions}
    try:
        _apply_config(args, defaults)
        args.seed_given = args.seed is not None
        if args.seed is None:
            args.seed = 0
        args.func(args)
    except ResourceCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except NumericalPreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
