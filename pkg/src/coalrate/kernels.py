"""Homogeneous coagulation kernels and sampled checks of their growth conditions.

Three condition classes are supported, all with constants kappa0, kappa1 > 0:

    NEG      lambda < 0:       K <= kappa0 (x+y)**lam,
                               (x**lam + y**lam) |dK/dx| <= kappa1 x**(lam-1) y**lam
    POS      0 < lambda <= 1:  K <= kappa0 (x+y)**lam,
                               min(x, y)**lam |dK/dx| <= kappa1 x**(lam-1) y**lam
    SPECIAL  0 < lambda <= 1:  K <= kappa0 min(x, y)**lam, same derivative bound as POS
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import ConfigError, ValidationError

__all__ = [
    "ConditionClass",
    "Kernel",
    "KernelReport",
    "builtin_kernel",
    "kernel_from_config",
    "verify_conditions",
    "BUILTIN_KERNELS",
]


class ConditionClass(enum.Enum):
    NEG = "NEG"
    POS = "POS"
    SPECIAL = "SPECIAL"


class SumPower:
    """(x + y)**lam."""

    def __init__(self, lam):
        self.lam = float(lam)

    def __call__(self, x, y):
        if self.lam == 1.0:
            return np.add(x, y)
        return np.power(np.add(x, y), self.lam)

    def dx(self, x, y):
        if self.lam == 1.0:
            return np.ones_like(np.add(x, y), dtype=float)
        return self.lam * np.power(np.add(x, y), self.lam - 1.0)

    def __reduce__(self):
        return (SumPower, (self.lam,))


class MinPower:
    """min(x, y)**lam; not differentiable on the diagonal."""

    def __init__(self, lam):
        self.lam = float(lam)

    def __call__(self, x, y):
        return np.power(np.minimum(x, y), self.lam)

    def dx(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        out = np.where(x < y, self.lam * np.power(x, self.lam - 1.0), 0.0)
        return np.where(x == y, np.nan, out)

    def __reduce__(self):
        return (MinPower, (self.lam,))


def _neg_kappa1(lam):
    """Exact sup over x/y = r of |lam| (1 + r**lam) (r/(1+r))**(1-lam), the NEG derivative ratio.

    Both sides of the NEG derivative condition for (x+y)**lam are
    homogeneous of degree 2 lam - 1, so the ratio depends on r only.
    The supremum is either the limit |lam| as r -> inf or an interior max.
    """

    def neg_ratio(u):
        r = math.exp(u)
        return -(1.0 + r**lam) * (r / (1.0 + r)) ** (1.0 - lam)

    best = 1.0
    grid = np.linspace(-40.0, 40.0, 801)
    vals = [-neg_ratio(u) for u in grid]
    k = int(np.argmax(vals))
    best = max(best, vals[k])
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = optimize.minimize_scalar(neg_ratio, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    best = max(best, -res.fun)
    return abs(lam) * best * (1.0 + 1e-12)


@dataclass(frozen=True)
class Kernel:
    """A symmetric coagulation kernel with its homogeneity metadata.

    ``func`` and ``dx`` must accept broadcastable numpy arrays.  The
    majorant constants are carried as data: the simulator's rejection
    sampler and the moment-growth constant both consume kappa0 directly.
    """

    func: Callable
    lam: float
    kappa0: float
    kappa1: float
    condition_class: ConditionClass
    dx: Callable | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x, y):
        return self.func(x, y)

    def majorant(self, x, y):
        """kappa0 (x+y)**lam, or kappa0 min(x,y)**lam for the SPECIAL class."""
        if self.condition_class is ConditionClass.SPECIAL:
            return self.kappa0 * np.power(np.minimum(x, y), self.lam)
        return self.kappa0 * np.power(np.add(x, y), self.lam)

    def max_rate(self, x_min, x_max):
        """Upper bound of K over pairs drawn from masses in [x_min, x_max]."""
        if self.condition_class is ConditionClass.SPECIAL:
            return self.kappa0 * x_max**self.lam
        if self.lam > 0:
            return self.kappa0 * (2.0 * x_max) ** self.lam
        return self.kappa0 * (2.0 * x_min) ** self.lam

    def to_config(self):
        return {"name": self.name, "lambda": self.lam, **self.params}


BUILTIN_KERNELS = ("sum_power", "min_power", "additive")


def builtin_kernel(name: str, lam: float | None = None) -> Kernel:
    """Construct one of the built-in kernels.

    sum_power: (x+y)**lam for lam in (-inf, 1] minus {0} (class NEG or POS)
    min_power: min(x,y)**lam for lam in (0, 1] (class SPECIAL)
    additive:  x + y (lam = 1, class POS)
    """
    if name == "additive":
        if lam is not None and float(lam) != 1.0:
            raise ValidationError(f"additive kernel has lambda = 1, got {lam}")
        k = builtin_kernel("sum_power", 1.0)
        return Kernel(k.func, 1.0, 1.0, 1.0, ConditionClass.POS, k.dx, name="additive")
    if lam is None:
        raise ValidationError(f"kernel {name!r} needs a lambda")
    lam = float(lam)
    if lam == 0.0:
        raise ValidationError("lambda = 0 is not supported")
    if lam > 1.0:
        raise ValidationError(f"lambda must be <= 1, got {lam}")
    if name == "sum_power":
        f = SumPower(lam)
        if lam < 0:
            return Kernel(f, lam, 1.0, _neg_kappa1(lam), ConditionClass.NEG, f.dx, name=name)
        # POS derivative ratio lam * (r/(1+r))**(1-lam) for r >= 1 increases to lam
        return Kernel(f, lam, 1.0, lam, ConditionClass.POS, f.dx, name=name)
    if name == "min_power":
        if lam <= 0:
            raise ValidationError(f"min_power needs lambda in (0, 1], got {lam}")
        f = MinPower(lam)
        return Kernel(f, lam, 1.0, lam, ConditionClass.SPECIAL, f.dx, name=name)
    raise ValidationError(f"unknown kernel {name!r}; choose from {BUILTIN_KERNELS}")


def kernel_from_config(doc) -> Kernel:
    """Kernel from ``{"name": ..., "lambda": ...}`` (the value under a ``kernel`` key)."""
    if isinstance(doc, dict) and "kernel" in doc and isinstance(doc["kernel"], dict):
        doc = doc["kernel"]
    if not isinstance(doc, dict):
        raise ConfigError("kernel", "must be a table with 'name' and 'lambda'")
    unknown = set(doc) - {"name", "lambda"}
    if unknown:
        raise ConfigError(f"kernel.{sorted(unknown)[0]}", "unknown key")
    if "name" not in doc:
        raise ConfigError("kernel.name", "missing")
    name = doc["name"]
    if name not in BUILTIN_KERNELS:
        raise ConfigError("kernel.name", f"unknown kernel {name!r}; choose from {BUILTIN_KERNELS}")
    lam = doc.get("lambda")
    if lam is not None and not isinstance(lam, (int, float)):
        raise ConfigError("kernel.lambda", "must be a number")
    try:
        return builtin_kernel(name, lam)
    except ValidationError as exc:
        raise ConfigError("kernel.lambda", str(exc)) from None


@dataclass
class KernelReport:
    """Worst-case ratios found on the sample grid (a ratio <= tolerance passes)."""

    name: str
    condition_class: ConditionClass
    symmetry_error: float
    growth_ratio: float
    derivative_ratio: float
    derivative_method: str
    tolerance: float
    unchecked_points: list
    points: int

    @property
    def symmetric(self):
        return self.symmetry_error <= 1e-12

    @property
    def growth_ok(self):
        return self.growth_ratio <= 1.0 + 1e-8

    @property
    def derivative_ok(self):
        return self.derivative_ratio <= self.tolerance

    @property
    def passed(self):
        return self.symmetric and self.growth_ok and self.derivative_ok

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [
            f"{status} kernel={self.name} class={self.condition_class.value} points={self.points}",
            f"  symmetry   max rel diff = {self.symmetry_error:.3e} [{'ok' if self.symmetric else 'FAIL'}]",
            f"  growth     max K/majorant = {self.growth_ratio:.12g} [{'ok' if self.growth_ok else 'FAIL'}]",
            f"  derivative max ratio = {self.derivative_ratio:.12g} ({self.derivative_method}, "
            f"tol {self.tolerance:g}) [{'ok' if self.derivative_ok else 'FAIL'}]",
        ]
        if self.unchecked_points:
            lines.append(f"  unchecked derivative points: {len(self.unchecked_points)}")
        return "\n".join(lines)


def default_grid(points=41):
    """Log-spaced masses over [1e-4, 1e4]."""
    return np.logspace(-4.0, 4.0, points)


def verify_conditions(kernel: Kernel, grid=None) -> KernelReport:
    """Check symmetry, the kappa0 growth bound and the kappa1 derivative bound on grid x grid.

    This is a sampled smoke test, not a proof.  The derivative comes from
    ``kernel.dx`` when available (tolerance 1 + 1e-8) and otherwise from a
    central difference with relative step 1e-6 (tolerance 1 + 1e-3).
    Points where the kernel is not differentiable are listed as unchecked.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float).ravel()
    if np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise ValidationError("grid must contain finite positive masses")
    x, y = np.meshgrid(grid, grid, indexing="ij")
    lam = kernel.lam
    kxy = np.asarray(kernel(x, y), dtype=float)
    kyx = np.asarray(kernel(y, x), dtype=float)
    scale = np.maximum(np.abs(kxy), np.finfo(float).tiny)
    symmetry_error = float(np.max(np.abs(kxy - kyx) / scale))
    growth_ratio = float(np.max(kxy / kernel.majorant(x, y)))

    if kernel.dx is not None:
        deriv = np.asarray(kernel.dx(x, y), dtype=float)
        method, tol = "closed form", 1.0 + 1e-8
        bad = ~np.isfinite(deriv)
    else:
        h = 1e-6 * x
        fwd = (np.asarray(kernel(x + h, y)) - kxy) / h
        bwd = (kxy - np.asarray(kernel(x - h, y))) / h
        deriv = 0.5 * (fwd + bwd)
        method, tol = "central difference", 1.0 + 1e-3
        kink = np.abs(fwd - bwd) > 1e-3 * np.maximum(np.abs(deriv), np.abs(kxy) / x)
        bad = kink | ~np.isfinite(deriv)

    if kernel.condition_class is ConditionClass.NEG:
        weight = np.power(x, lam) + np.power(y, lam)
    else:
        weight = np.minimum(np.power(x, lam), np.power(y, lam))
    rhs = kernel.kappa1 * np.power(x, lam - 1.0) * np.power(y, lam)
    with np.errstate(invalid="ignore"):
        ratio = weight * np.abs(deriv) / rhs
    ratio = np.where(bad, -np.inf, ratio)
    derivative_ratio = float(np.max(ratio)) if np.any(~bad) else float("nan")
    unchecked = [(float(a), float(b)) for a, b in zip(x[bad], y[bad])]
    return KernelReport(
        name=kernel.name,
        condition_class=kernel.condition_class,
        symmetry_error=symmetry_error,
        growth_ratio=growth_ratio,
        derivative_ratio=derivative_ratio,
        derivative_method=method,
        tolerance=tol,
        unchecked_points=unchecked,
        points=int(x.size),
    )
