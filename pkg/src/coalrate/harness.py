"""Monte Carlo convergence experiments: replicates, aggregation, slope fits and persistence."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .errors import ConfigError, ValidationError
from .initcond import DiscreteTarget, build_initial, target_from_config
from .kernels import Kernel, kernel_from_config
from .measures import DiscreteMeasure, QuadratureConfig, d_lambda_vs_reference
from .mlprocess import check_trajectory, init, replicate_seed, run_until
from .reference import GolovinSolution, solve_discrete_ode

__all__ = [
    "ExperimentConfig",
    "ReferenceSpec",
    "ConvergenceReport",
    "SlopeFit",
    "load_config",
    "parse_config",
    "run_convergence",
    "fit_slope",
    "write_outputs",
    "worker_count",
    "WORKERS_ENV",
]

WORKERS_ENV = "COALRATE_WORKERS"
RAW_COLUMNS = ("n", "replicate", "t", "d_lambda", "events", "particles_final", "seed")
SE_EXCLUSION = 0.25


@dataclass(frozen=True)
class ReferenceSpec:
    kind: str = "golovin"  # golovin | ode | initial
    x_max: int = 200
    dt: float = 1e-3
    leak_tol: float = 1e-8
    validate: bool = True


@dataclass
class ExperimentConfig:
    kernel: Kernel
    lam: float
    target: object
    n_grid: list
    replicates: int
    T: float
    snapshots: list
    seed: int
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    method: str = "direct"
    rebuild_every: int | None = None
    output: str | None = None
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        ns = list(self.n_grid)
        if not ns or any(int(n) != n or n < 1 for n in ns):
            raise ConfigError("experiment.n", "must be a non-empty list of positive integers")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("experiment.n", "must be strictly increasing")
        self.n_grid = [int(n) for n in ns]
        if int(self.replicates) != self.replicates or self.replicates < 2:
            raise ConfigError("experiment.replicates", "must be an integer >= 2")
        self.replicates = int(self.replicates)
        if not (self.T >= 0 and math.isfinite(self.T)):
            raise ConfigError("experiment.T", "must be finite and >= 0")
        snaps = [float(s) for s in self.snapshots]
        if not snaps or any(b <= a for a, b in zip(snaps, snaps[1:])) or snaps[0] < 0 or snaps[-1] > self.T:
            raise ConfigError("experiment.snapshots", f"must be strictly increasing within [0, {self.T}]")
        self.snapshots = snaps
        if self.lam == 0:
            raise ConfigError("experiment.lambda", "must be nonzero")
        if self.method not in ("direct", "rejection"):
            raise ConfigError("experiment.method", "must be 'direct' or 'rejection'")

    def digest(self):
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


# config -------------------------------------------------------------------------

_SECTIONS = {"experiment", "kernel", "initial", "reference", "quadrature"}
_EXPERIMENT_KEYS = {"lambda", "n", "replicates", "T", "snapshots", "seed", "method", "rebuild_every", "output", "name"}
_REFERENCE_KEYS = {"kind", "x_max", "dt", "leak_tol", "validate"}
_QUAD_KEYS = {"nodes", "tail_rtol", "refine_rtol", "refine_atol", "max_tail_panels"}


def _need(table, key, prefix, kind=None):
    if key not in table:
        raise ConfigError(f"{prefix}.{key}", "missing")
    val = table[key]
    if kind is not None and (not isinstance(val, kind) or isinstance(val, bool)):
        raise ConfigError(f"{prefix}.{key}", f"expected {getattr(kind, '__name__', kind)}, got {val!r}")
    return val


def _table(doc, key):
    val = doc.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(key, "must be a table")
    return val


def _unknown(table, allowed, prefix):
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"{prefix}.{extra[0]}" if prefix else extra[0], "unknown key")


def load_target_file(path):
    """Integer-mass measure file (CSV or JSON) as a DiscreteTarget."""
    mu = DiscreteMeasure.load(path)
    if np.any(mu.masses != np.round(mu.masses)):
        raise ConfigError("initial.file", "measure files must have integer masses")
    w = np.zeros(int(mu.masses.max()))
    w[mu.masses.astype(np.int64) - 1] = mu.weights
    return DiscreteTarget(w, f"file({Path(path).name})")


def parse_config(doc: dict, base_dir=None) -> ExperimentConfig:
    """Validate a config mapping; every problem raises ConfigError naming its key."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a table")
    _unknown(doc, _SECTIONS, "")
    exp = _table(doc, "experiment")
    _unknown(exp, _EXPERIMENT_KEYS, "experiment")
    if "kernel" not in doc:
        raise ConfigError("kernel", "missing")
    kernel = kernel_from_config(_table(doc, "kernel"))
    lam = exp.get("lambda", kernel.lam)
    if not isinstance(lam, (int, float)) or isinstance(lam, bool):
        raise ConfigError("experiment.lambda", "must be a number")

    ini = _table(doc, "initial")
    _unknown(ini, {"target", "file"}, "initial")
    if ("target" in ini) == ("file" in ini):
        raise ConfigError("initial", "give exactly one of 'target' or 'file'")
    if "file" in ini:
        p = Path(ini["file"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        try:
            target = load_target_file(p)
        except (OSError, ValidationError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("initial.file", str(exc)) from None
    else:
        t = ini["target"]
        if not isinstance(t, dict):
            raise ConfigError("initial.target", "must be a table")
        target = target_from_config(t)

    ns = _need(exp, "n", "experiment", list)
    T = _need(exp, "T", "experiment", (int, float))
    reps = _need(exp, "replicates", "experiment", int)
    seed = _need(exp, "seed", "experiment", int)
    snaps = exp.get("snapshots", [T])
    if not isinstance(snaps, list) or not all(isinstance(s, (int, float)) for s in snaps):
        raise ConfigError("experiment.snapshots", "must be a list of numbers")
    rb = exp.get("rebuild_every")
    if rb is not None and (not isinstance(rb, int) or rb < 0):
        raise ConfigError("experiment.rebuild_every", "must be a non-negative integer")

    ref = _table(doc, "reference")
    _unknown(ref, _REFERENCE_KEYS, "reference")
    rspec = ReferenceSpec(**ref)
    if rspec.kind not in ("golovin", "ode", "initial"):
        raise ConfigError("reference.kind", "must be 'golovin', 'ode' or 'initial'")
    quad = _table(doc, "quadrature")
    _unknown(quad, _QUAD_KEYS, "quadrature")
    out = exp.get("output")
    if out is not None and base_dir is not None and not Path(out).is_absolute():
        out = str(Path(base_dir) / out)
    cfg = ExperimentConfig(
        kernel=kernel,
        lam=float(lam),
        target=target,
        n_grid=ns,
        replicates=reps,
        T=float(T),
        snapshots=snaps,
        seed=seed,
        reference=rspec,
        quadrature=QuadratureConfig(**quad),
        method=exp.get("method", "direct"),
        rebuild_every=rb,
        output=out,
        raw=doc,
    )
    _check_reference_fit(cfg)
    return cfg


def _check_reference_fit(cfg):
    kind = cfg.reference.kind
    if kind == "golovin":
        k = cfg.kernel
        if not (k.lam == 1.0 and k.name in ("additive", "sum_power")):
            raise ConfigError("reference.kind", "the Golovin reference needs the additive kernel")
        t = cfg.target
        if not (isinstance(t, DiscreteTarget) and t.horizon == 1 and t.weights[0] == 1.0):
            raise ConfigError("initial.target", "the Golovin reference needs the dirac target at mass 1 with weight 1")
    elif kind == "ode":
        if not isinstance(cfg.target, DiscreteTarget):
            raise ConfigError("reference.kind", "the ODE reference needs a target on the integers")
        if cfg.target.horizon > cfg.reference.x_max:
            raise ConfigError("reference.x_max", "smaller than the support of the initial target")
    elif cfg.snapshots[-1] > 0:
        raise ConfigError("reference.kind", "'initial' only describes t = 0; all snapshots must be 0")


def load_config(path) -> ExperimentConfig:
    """Read a TOML (primary) or JSON experiment file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    else:
        if sys.version_info >= (3, 11):
            import tomllib
        else:  # pragma: no cover
            import tomli as tomllib
        try:
            doc = tomllib.loads(raw.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("<file>", f"invalid TOML: {exc}") from None
    return parse_config(doc, base_dir=path.parent)


# reference ------------------------------------------------------------------------


class _Reference:
    """Distance from a simulated measure to the deterministic solution at time t."""

    def __init__(self, cfg: ExperimentConfig):
        spec = cfg.reference
        self.cfg = cfg
        self.validation_error = None
        if spec.kind == "golovin":
            self.solution = GolovinSolution()
            if spec.validate:
                self.validation_error = self.solution.validate_against_ode(
                    t=min(max(cfg.T, 1e-3), 0.5), x_max=spec.x_max, dt=spec.dt
                )
        elif spec.kind == "ode":
            c0 = np.zeros(spec.x_max)
            c0[: cfg.target.horizon] = cfg.target.weights
            self.solution = solve_discrete_ode(cfg.kernel, c0, cfg.T, spec.dt, leak_tol=spec.leak_tol).require_valid()
        else:
            self.solution = None
        self._cache = {}

    def distance(self, mu, t):
        if self.solution is None:
            return d_lambda_vs_reference(mu, self.cfg.target, self.cfg.lam, self.cfg.quadrature)
        ref = self._cache.get(t)
        if ref is None:
            ref = self._cache[t] = self.solution.at(t)
        return d_lambda_vs_reference(mu, ref, self.cfg.lam)


# replicates ---------------------------------------------------------------------


def worker_count(default=1):
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == "":
        return default
    try:
        w = int(raw)
    except ValueError:
        raise ConfigError(WORKERS_ENV, f"must be a positive integer, got {raw!r}") from None
    if w < 1:
        raise ConfigError(WORKERS_ENV, f"must be a positive integer, got {raw!r}")
    return w


def _replicate(args):
    template, seed, T, snapshots = args
    sys_ = template.spawn(seed)
    log = run_until(sys_, T, snapshots)
    check_trajectory(log, alphas=(-1.0, 0.0, 0.5, 1.0))
    return [(s.t, s.masses, s.counts, s.events) for s in log.snapshots], sys_.m


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    halfwidth: float
    used_n: list
    excluded_n: list

    def contains(self, lo, hi):
        return lo <= self.slope <= hi


def fit_slope(ns, means, ses=None, exclude_noisy=True) -> SlopeFit:
    """OLS fit of log(mean) on log(n) with a 95% t-interval half-width.

    The smallest n is dropped when its standard error exceeds 25% of its
    mean (and at least three points would remain).
    """
    ns = [int(n) for n in ns]
    means = [float(m) for m in means]
    excluded = []
    if exclude_noisy and ses is not None and len(ns) >= 4 and ses[0] > SE_EXCLUSION * means[0]:
        excluded = [ns[0]]
        ns, means, ses = ns[1:], means[1:], list(ses)[1:]
    if any(m <= 0 for m in means):
        raise ValidationError("cannot fit a log-log slope through non-positive means")
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(means))
    if x.size < 2:
        raise ValidationError("need at least two n values to fit a slope")
    res = stats.linregress(x, y)
    if x.size > 2:
        half = float(stats.t.ppf(0.975, x.size - 2) * res.stderr)
    else:
        half = math.inf
    return SlopeFit(float(res.slope), float(res.intercept), half, ns, excluded)


@dataclass
class ConvergenceReport:
    lam: float
    kernel: str
    n_grid: list
    times: list
    replicates: int
    mean: dict  # (n, t) -> mean d_lambda
    se: dict
    count: dict
    sup_of_mean: dict  # n -> max_t mean
    mean_of_sup: dict  # n -> mean over replicates of max_t d
    mean_of_sup_se: dict
    fits: dict  # label -> SlopeFit
    raw: list  # rows in RAW_COLUMNS order
    quadrature_error: float = 0.0
    reference_validation_error: float | None = None
    note: str = (
        "Only the exponent of the rate is tested. The constant C_T of the bound "
        "depends on unknown constants, so no absolute threshold is checked."
    )

    def scaled(self, t):
        """mean(n, t) * sqrt(n) across the grid."""
        return [self.mean[(n, t)] * math.sqrt(n) for n in self.n_grid]

    def scaled_spread(self, t):
        s = self.scaled(t)
        return max(s) / min(s)

    def to_json(self):
        doc = {
            "lambda": self.lam,
            "kernel": self.kernel,
            "n_grid": self.n_grid,
            "times": self.times,
            "replicates": self.replicates,
            "per_time": [
                {
                    "t": t,
                    "n": n,
                    "mean": self.mean[(n, t)],
                    "se": self.se[(n, t)],
                    "count": self.count[(n, t)],
                    "mean_sqrt_n": self.mean[(n, t)] * math.sqrt(n),
                }
                for t in self.times
                for n in self.n_grid
            ],
            "sup_t_mean": [{"n": n, "value": self.sup_of_mean[n]} for n in self.n_grid],
            "mean_sup_t": [
                {"n": n, "value": self.mean_of_sup[n], "se": self.mean_of_sup_se[n]} for n in self.n_grid
            ],
            "fits": {k: asdict(v) for k, v in self.fits.items()},
            "quadrature_error": self.quadrature_error,
            "reference_validation_error": self.reference_validation_error,
            "note": self.note,
        }
        return json.dumps(doc, indent=2, allow_nan=True)

    def raw_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for n, r, t, d, ev, pf, seed in self.raw:
            w.writerow([n, r, repr(float(t)), repr(float(d)), ev, pf, seed])
        return buf.getvalue()


def _aggregate(cfg, table, raw, qerr, verr):
    times, ns = cfg.snapshots, cfg.n_grid
    mean, se, count, sup_mean, mean_sup, mean_sup_se = {}, {}, {}, {}, {}, {}
    for n in ns:
        mat = np.array(table[n])  # replicates x times
        for j, t in enumerate(times):
            col = mat[:, j]
            mean[(n, t)] = math.fsum(col) / col.size
            se[(n, t)] = float(np.std(col, ddof=1) / math.sqrt(col.size))
            count[(n, t)] = int(col.size)
        sup_mean[n] = max(mean[(n, t)] for t in times)
        sups = mat.max(axis=1)
        mean_sup[n] = math.fsum(sups) / sups.size
        mean_sup_se[n] = float(np.std(sups, ddof=1) / math.sqrt(sups.size))
    fits = {}
    if len(ns) >= 2:
        for t in times:
            fits[f"t={t!r}"] = fit_slope(ns, [mean[(n, t)] for n in ns], [se[(n, t)] for n in ns])
        fits["sup_t_mean"] = fit_slope(ns, [sup_mean[n] for n in ns])
        fits["mean_sup_t"] = fit_slope(ns, [mean_sup[n] for n in ns], [mean_sup_se[n] for n in ns])
    return ConvergenceReport(
        lam=cfg.lam,
        kernel=cfg.kernel.name,
        n_grid=list(ns),
        times=list(times),
        replicates=cfg.replicates,
        mean=mean,
        se=se,
        count=count,
        sup_of_mean=sup_mean,
        mean_of_sup=mean_sup,
        mean_of_sup_se=mean_sup_se,
        fits=fits,
        raw=raw,
        quadrature_error=qerr,
        reference_validation_error=verr,
    )


def run_convergence(cfg: ExperimentConfig, workers: int | None = None, progress=None) -> ConvergenceReport:
    """Run R replicates per n, measure d_lambda at every snapshot and fit the rate.

    Replicate r at size n uses seed replicate_seed(cfg.seed, n, r).  Workers
    only simulate; distances are computed in the parent in (n, replicate)
    order, so any worker count yields identical results.
    """
    workers = worker_count() if workers is None else int(workers)
    reference = _Reference(cfg)
    table, raw = {}, []
    qerr = 0.0
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for n in cfg.n_grid:
            mu0n = build_initial(cfg.target, n, cfg.lam)
            template = init(mu0n, cfg.kernel, n, seed=0, method=cfg.method, rebuild_every=cfg.rebuild_every)
            seeds = [replicate_seed(cfg.seed, n, r) for r in range(cfg.replicates)]
            tasks = [(template, s, cfg.T, cfg.snapshots) for s in seeds]
            chunk = max(1, len(tasks) // (4 * workers))
            results = pool.map(_replicate, tasks, chunksize=chunk) if pool else map(_replicate, tasks)
            rows = []
            for r, (seed, (snaps, m_final)) in enumerate(zip(seeds, results)):
                ds = []
                for t, masses, counts, events in snaps:
                    est = reference.distance(DiscreteMeasure.from_counts(masses, counts, n), t)
                    qerr = max(qerr, est.error)
                    ds.append(est.value)
                    raw.append((n, r, t, est.value, events, m_final, seed))
                rows.append(ds)
            table[n] = rows
            if progress is not None:
                progress(n)
    finally:
        if pool is not None:
            pool.shutdown()
    return _aggregate(cfg, table, raw, qerr, reference.validation_error)


def report_from_raw(cfg: ExperimentConfig, text: str) -> ConvergenceReport:
    """Rebuild a report from raw.csv contents (used to audit a stored run)."""
    rows = list(csv.DictReader(io.StringIO(text)))
    table = {n: {} for n in cfg.n_grid}
    raw = []
    for row in rows:
        n, r, t, d = int(row["n"]), int(row["replicate"]), float(row["t"]), float(row["d_lambda"])
        table[n].setdefault(r, []).append(d)
        raw.append((n, r, t, d, int(row["events"]), int(row["particles_final"]), int(row["seed"])))
    table = {n: [v[r] for r in sorted(v)] for n, v in table.items()}
    return _aggregate(cfg, table, raw, 0.0, None)


def manifest(cfg: ExperimentConfig, workers: int, extra=None):
    import scipy

    doc = {
        "config_sha256": cfg.digest(),
        "config": cfg.raw,
        "seeds": [
            {"n": n, "replicate": r, "seed": replicate_seed(cfg.seed, n, r)}
            for n in cfg.n_grid
            for r in range(cfg.replicates)
        ],
        "base_seed": cfg.seed,
        "workers": workers,
        "versions": {
            "coalrate": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    if extra:
        doc.update(extra)
    return doc


def write_outputs(report: ConvergenceReport, cfg: ExperimentConfig, outdir, workers=1):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "raw.csv").write_text(report.raw_csv())
    (out / "manifest.json").write_text(json.dumps(manifest(cfg, workers), indent=2, default=str) + "\n")
    return out
