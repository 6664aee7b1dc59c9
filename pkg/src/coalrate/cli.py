"""Command-line entry point: ``coalrate <subcommand> ...``.

Exit codes: 0 success, 1 validation failure (bad input, bad config, a
failed kernel check), 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CoalrateError, NumericalError, ValidationError
from .initcond import TARGETS, build_initial, distance_bound, target_from_config
from .kernels import BUILTIN_KERNELS, builtin_kernel, verify_conditions
from .measures import DiscreteMeasure, d_lambda_discrete, d_lambda_vs_reference
from .mlprocess import check_trajectory, init, replicate_seed, run_until

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _param(text):
    key, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(val)
    except json.JSONDecodeError:
        return key, val


def _write_manifest(path, command, args, extra=None):
    import platform

    import scipy

    doc = {
        "command": command,
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "versions": {
            "coalrate": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, default=str) + "\n")


# subcommands --------------------------------------------------------------------


def cmd_verify_kernel(args):
    report = verify_conditions(builtin_kernel(args.name, args.lam))
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_distance(args):
    a, b = DiscreteMeasure.load(args.a), DiscreteMeasure.load(args.b)
    print(repr(d_lambda_discrete(a, b, args.lam)))
    return EXIT_OK


def cmd_build_init(args):
    target = target_from_config({"name": args.target, **dict(args.param)})
    mu = build_initial(target, args.n, args.lam)
    if args.out:
        mu.to_csv(args.out)
    bound = distance_bound(target, args.n, args.lam)
    if hasattr(target, "measure"):
        d, err = d_lambda_discrete(mu, target.measure(), args.lam), 0.0
    else:
        d, err = d_lambda_vs_reference(mu, target, args.lam)
    print(f"target={target.name} n={args.n} lambda={args.lam:g} atoms={len(mu)} particles={mu.counts(args.n).sum()}")
    print(f"d_lambda={d!r} (+/- {err:.1e}) bound={bound!r} {'ok' if d < bound else 'EXCEEDED'}")
    if args.out:
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_simulate(args):
    if args.config:
        from .harness import load_config

        cfg = load_config(args.config)
        kernel, mu0, n = cfg.kernel, build_initial(cfg.target, cfg.n_grid[0], cfg.lam), cfg.n_grid[0]
        T, snaps, seed = cfg.T, cfg.snapshots, replicate_seed(cfg.seed, cfg.n_grid[0], 0)
    else:
        if args.init is None or args.n is None or args.T is None:
            raise ValidationError("--init, --n and --T are required without --config")
        kernel = builtin_kernel(args.kernel, args.lam)
        mu0, n, T = DiscreteMeasure.load(args.init), args.n, args.T
        snaps = args.snapshots if args.snapshots is not None else [T]
        seed = args.seed
    sys_ = init(mu0, kernel, n, seed, method=args.method)
    log = run_until(sys_, T, snaps)
    check_trajectory(log)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log.to_jsonl(out)
    _write_manifest(out.with_suffix(".manifest.json"), "simulate", args, {"seed": seed})
    print(f"n={n} particles {log.initial_particles} -> {sys_.m} after {log.events} events by t={T:g}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_reference(args):
    from .reference import GolovinSolution, solve_discrete_ode

    times = args.times
    if args.kind == "golovin":
        ref = GolovinSolution()
        if args.validate:
            err = ref.validate_against_ode(t=min(max(times), 0.5), x_max=args.x_max, dt=args.dt)
            print(f"golovin vs RK4 max componentwise difference {err:.3e}", file=sys.stderr)
    else:
        if args.init is None:
            raise ValidationError("--init is required for the ode reference")
        mu = DiscreteMeasure.load(args.init)
        c0 = np.zeros(args.x_max)
        idx = mu.masses.astype(np.int64)
        if np.any(idx != mu.masses) or idx.max() > args.x_max:
            raise ValidationError("initial masses must be integers <= --x-max")
        c0[idx - 1] = mu.weights
        ref = solve_discrete_ode(builtin_kernel(args.kernel, args.lam), c0, max(times), args.dt)
        ref.require_valid()
        print(f"max leak {ref.max_leak:.3e}", file=sys.stderr)
    if args.out:
        ref.to_csv(times, args.out)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(ref.to_csv(times))
    return EXIT_OK


def cmd_convergence(args):
    from .harness import load_config, run_convergence, worker_count, write_outputs

    cfg = load_config(args.config)
    if args.replicates is not None:
        cfg.replicates = args.replicates
        cfg.__post_init__()
    if args.n is not None:
        cfg.n_grid = args.n
        cfg.__post_init__()
    out = args.out or cfg.output or "out"
    workers = args.workers or worker_count()
    report = run_convergence(cfg, workers=workers, progress=lambda n: print(f"  n={n} done", file=sys.stderr))
    write_outputs(report, cfg, out, workers)
    for t in cfg.snapshots:
        cells = "  ".join(f"n={n}: {report.mean[(n, t)]:.4g}+/-{report.se[(n, t)]:.2g}" for n in cfg.n_grid)
        print(f"t={t:g}  {cells}")
    for label, fit in report.fits.items():
        print(f"slope[{label}] = {fit.slope:.4f} +/- {fit.halfwidth:.4f}  (n used: {fit.used_n})")
    print(f"wrote {out}/report.json, raw.csv, manifest.json")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="coalrate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("verify-kernel", help="sampled check of a kernel's growth conditions")
    s.add_argument("--name", required=True, choices=BUILTIN_KERNELS)
    s.add_argument("--lambda", dest="lam", type=float)
    s.set_defaults(func=cmd_verify_kernel)

    s = sub.add_parser("distance", help="d_lambda between two measure files")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.set_defaults(func=cmd_distance)

    s = sub.add_parser("build-init", help="discretize a target measure")
    s.add_argument("--target", required=True, choices=sorted(TARGETS))
    s.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_build_init)

    s = sub.add_parser("simulate", help="one Marcus-Lushnikov trajectory")
    s.add_argument("--config")
    s.add_argument("--kernel", default="additive", choices=BUILTIN_KERNELS)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--init", help="initial measure file (weights must be multiples of 1/n)")
    s.add_argument("--n", type=int)
    s.add_argument("--T", type=float)
    s.add_argument("--snapshots", type=_floats)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--method", default="direct", choices=("direct", "rejection"))
    s.add_argument("--out", default="trajectory.jsonl")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reference", help="deterministic solution as t,k,c_k CSV")
    s.add_argument("--kind", default="golovin", choices=("golovin", "ode"))
    s.add_argument("--times", type=_floats, required=True)
    s.add_argument("--kernel", default="additive", choices=BUILTIN_KERNELS)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--init")
    s.add_argument("--x-max", dest="x_max", type=int, default=200)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--no-validate", dest="validate", action="store_false")
    s.add_argument("--out")
    s.set_defaults(func=cmd_reference)

    s = sub.add_parser("convergence", help="run a convergence experiment from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--replicates", type=int)
    s.add_argument("--n", type=_ints)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_convergence)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CoalrateError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
