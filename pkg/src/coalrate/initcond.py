"""Discrete initial conditions mu_0^n = (1/n) sum delta_{x_i} close to a target mu_0 in d_lambda.

Atomless targets are sliced into cells of mu_0-mass exactly 1/n between two
cut-offs a_n < A_n; discrete targets on the integers are rounded with
cumulative floors.  Each builder has a closed-form bound C/sqrt(n) on the
resulting distance, exposed as ``bound_*`` functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special

from .errors import ValidationError
from .measures import DiscreteMeasure

__all__ = [
    "AtomlessTarget",
    "DiscreteTarget",
    "gamma_target",
    "exponential_target",
    "power_cutoff_target",
    "geometric_target",
    "dirac_target",
    "atomless_cutoffs",
    "discrete_cutoff",
    "build_atomless_neg",
    "build_atomless_pos",
    "build_discrete",
    "build_initial",
    "bound_atomless_neg",
    "bound_atomless_pos",
    "bound_discrete",
    "distance_bound",
    "TARGETS",
    "target_from_config",
]


@dataclass(frozen=True)
class AtomlessTarget:
    """Oracle bundle for an atomless measure mu_0 on (0, inf).

    ``cdf(x) = mu_0((0, x])`` and ``quantile(q) = inf{x : cdf(x) >= q}`` for
    q in [0, total_mass].  ``partial_moment(alpha, a, b)`` is the integral of
    x**alpha over (a, b]; it may return inf.
    """

    cdf: Callable
    quantile: Callable
    partial_moment: Callable
    total_mass: float
    name: str = "custom"
    tail_fn: Callable | None = None

    def moment(self, alpha):
        return float(self.partial_moment(alpha, 0.0, math.inf))

    def tail(self, x):
        if self.tail_fn is not None:
            return self.tail_fn(x)
        return self.total_mass - np.asarray(self.cdf(x), dtype=float)

    def head_moment(self, lam, a):
        return float(self.partial_moment(lam, 0.0, a))

    def tail_moment(self, lam, A):
        return float(self.partial_moment(lam, A, math.inf))


def _gamma_moment_piece(shape, alpha, a, b):
    """Gamma(shape+alpha)/Gamma(shape) times the regularized mass of (a, b] at shape+alpha."""
    s = shape + alpha
    if s <= 0:
        return math.inf
    pref = math.exp(math.lgamma(s) - math.lgamma(shape))
    if a >= s:
        piece = special.gammaincc(s, a) - (special.gammaincc(s, b) if math.isfinite(b) else 0.0)
    else:
        piece = (special.gammainc(s, b) if math.isfinite(b) else 1.0) - special.gammainc(s, a)
    return pref * float(piece)


def gamma_target(shape: float, scale: float = 1.0, mass: float = 1.0) -> AtomlessTarget:
    """mass * Gamma(shape, scale): density proportional to x**(shape-1) exp(-x/scale)."""
    if shape <= 0 or scale <= 0 or mass <= 0:
        raise ValidationError("gamma target needs shape, scale, mass > 0")

    def cdf(x):
        return mass * special.gammainc(shape, np.asarray(x, dtype=float) / scale)

    def tail(x):
        return mass * special.gammaincc(shape, np.asarray(x, dtype=float) / scale)

    def quantile(q):
        q = np.asarray(q, dtype=float) / mass
        if np.any((q < 0) | (q > 1 + 1e-12)):
            raise ValidationError(f"quantile level outside [0, {mass}]")
        return scale * special.gammaincinv(shape, np.clip(q, 0.0, 1.0))

    def partial_moment(alpha, a, b):
        return mass * scale**alpha * _gamma_moment_piece(shape, alpha, a / scale, b / scale)

    return AtomlessTarget(cdf, quantile, partial_moment, float(mass), f"gamma(shape={shape:g}, scale={scale:g})", tail)


def exponential_target(scale: float = 1.0, mass: float = 1.0) -> AtomlessTarget:
    return gamma_target(1.0, scale, mass)


def power_cutoff_target(power: float, cutoff: float = 1.0, mass: float = 1.0) -> AtomlessTarget:
    """Density proportional to x**power on (0, cutoff], with power > -1."""
    if power <= -1 or cutoff <= 0 or mass <= 0:
        raise ValidationError("power-cutoff target needs power > -1 and cutoff, mass > 0")
    p1 = power + 1.0

    def cdf(x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, cutoff)
        return mass * (x / cutoff) ** p1

    def quantile(q):
        q = np.asarray(q, dtype=float) / mass
        if np.any((q < 0) | (q > 1 + 1e-12)):
            raise ValidationError(f"quantile level outside [0, {mass}]")
        return cutoff * np.clip(q, 0.0, 1.0) ** (1.0 / p1)

    def partial_moment(alpha, a, b):
        e = p1 + alpha
        if e <= 0:
            return math.inf
        a, b = min(a, cutoff), min(b, cutoff)
        if b <= a:
            return 0.0
        return mass * p1 / e * cutoff**alpha * ((b / cutoff) ** e - (a / cutoff) ** e)

    return AtomlessTarget(cdf, quantile, partial_moment, float(mass), f"power(p={power:g}, cutoff={cutoff:g})")


@dataclass(frozen=True)
class DiscreteTarget:
    """Weights alpha_k on k = 1..K; ``tail_mass`` is sum_{k>K} alpha_k (0 for finite support)."""

    weights: np.ndarray
    name: str = "custom"
    tail_mass: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("discrete target weights must be finite, non-negative and non-empty")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def horizon(self):
        return self.weights.size

    @property
    def total_mass(self):
        return math.fsum(self.weights) + self.tail_mass

    def moment(self, alpha):
        k = np.arange(1, self.horizon + 1, dtype=float)
        return math.fsum(self.weights * np.power(k, float(alpha)))

    def measure(self):
        k = np.flatnonzero(self.weights) + 1
        return DiscreteMeasure(k, self.weights[k - 1])


def geometric_target(ratio: float = 0.5) -> DiscreteTarget:
    """alpha_k = ratio**k, enumerated until the weights underflow."""
    if not 0 < ratio < 1:
        raise ValidationError("geometric ratio must lie in (0, 1)")
    K = int(math.floor(math.log(np.finfo(float).tiny) / math.log(ratio)))
    k = np.arange(1, K + 1, dtype=float)
    return DiscreteTarget(np.power(ratio, k), f"geometric(ratio={ratio:g})")


def dirac_target(mass: int = 1, weight: float = 1.0) -> DiscreteTarget:
    if int(mass) != mass or mass < 1:
        raise ValidationError("dirac target needs a positive integer mass")
    w = np.zeros(int(mass))
    w[-1] = weight
    return DiscreteTarget(w, f"dirac({int(mass)})")


# cut-offs ------------------------------------------------------------------------


def _check_n(n):
    if int(n) != n or n < 1:
        raise ValidationError(f"n must be a positive integer, got {n}")
    return int(n)


def _finite_moment(target, alpha):
    m = target.moment(alpha)
    if not math.isfinite(m):
        raise ValidationError(f"target moment M_{alpha:g} is not finite; construction aborted")
    return m


def atomless_cutoffs(target: AtomlessTarget, n: int, lam: float):
    """(a_n, A_n) for the atomless builders.

    lam < 0: a_n = n**(-1/(2|lam|)) and A_n is the smallest A with
    tail lam-moment <= 1/sqrt(n).  lam > 0: A_n = n**(1/(2 lam)) and a_n is
    the largest a with head lam-moment <= 1/sqrt(n).  Roots are found to
    1e-12 relative and then moved outward so the inequality holds.
    """
    n = _check_n(n)
    level = 1.0 / math.sqrt(n)
    if lam < 0:
        a = n ** (-1.0 / (2.0 * abs(lam)))
        f = lambda A: target.tail_moment(lam, A) - level  # noqa: E731
        if f(a) <= 0:
            return a, a
        hi = max(2.0 * a, 1.0)
        while f(hi) > 0:
            hi *= 2.0
            if hi > 1e300:
                raise ValidationError("tail moment never drops below 1/sqrt(n)")
        A = optimize.brentq(f, a, hi, xtol=1e-300, rtol=1e-12)
        while f(A) > 0:
            A *= 1.0 + 1e-12
        return a, A
    if lam > 0:
        A = n ** (1.0 / (2.0 * lam))
        f = lambda x: target.head_moment(lam, x) - level  # noqa: E731
        if f(A) <= 0:
            return A, A
        a = optimize.brentq(f, 0.0, A, xtol=1e-300, rtol=1e-12)
        while a > 0 and f(a) > 0:
            a *= 1.0 - 1e-12
        return a, A
    raise ValidationError("lambda must be nonzero")


def _slice(target, a, A, n):
    """Points x_0 = a < x_1 < ... < x_N with mu_0((x_{i-1}, x_i]) = 1/n and x_N <= A."""
    qa = float(target.cdf(a))
    qA = float(target.cdf(A))
    N = int(math.floor(n * (qA - qa) * (1.0 + 1e-14)))
    while N > 0 and qa + N / n > qA:
        N -= 1
    if N == 0:
        raise ValidationError(f"no full cell of mass 1/{n} between a_n={a:.6g} and A_n={A:.6g}")
    levels = qa + np.arange(1, N + 1) / n
    try:
        xs = np.asarray(target.quantile(levels), dtype=float)
    except ValidationError:
        raise
    except Exception as exc:  # oracle failure aborts the construction
        raise ValidationError(f"quantile oracle failed: {exc}") from exc
    if xs.shape != levels.shape or not np.all(np.isfinite(xs)) or np.any(np.diff(xs) < 0):
        raise ValidationError("quantile oracle returned non-finite or decreasing points")
    return np.concatenate(([a], np.minimum(xs, A)))


def build_atomless_neg(target: AtomlessTarget, n: int, lam: float) -> DiscreteMeasure:
    """Weight 1/n at the right endpoint of each full cell in [a_n, A_n]."""
    if lam >= 0:
        raise ValidationError("build_atomless_neg needs lambda < 0")
    n = _check_n(n)
    _finite_moment(target, lam)
    _finite_moment(target, 2 * lam)
    a, A = atomless_cutoffs(target, n, lam)
    pts = _slice(target, a, A, n)
    return DiscreteMeasure.from_counts(pts[1:], np.ones(pts.size - 1, dtype=np.int64), n)


def build_atomless_pos(target: AtomlessTarget, n: int, lam: float) -> DiscreteMeasure:
    """Weight 1/n at the left endpoint of each full cell in [a_n, A_n]; the partial last cell is dropped."""
    if not 0 < lam <= 1:
        raise ValidationError("build_atomless_pos needs lambda in (0, 1]")
    n = _check_n(n)
    _finite_moment(target, lam)
    _finite_moment(target, 2 * lam)
    a, A = atomless_cutoffs(target, n, lam)
    pts = _slice(target, a, A, n)
    if pts[0] <= 0:
        raise ValidationError("a_n collapsed to 0; head moment grows too slowly")
    return DiscreteMeasure.from_counts(pts[:-1], np.ones(pts.size - 1, dtype=np.int64), n)


def _floor(x):
    """Floor that treats values within 1e-9 relative of an integer as that integer."""
    r = np.rint(x)
    snap = np.abs(x - r) <= 1e-9 * np.maximum(1.0, np.abs(x))
    return np.where(snap, r, np.floor(x)).astype(np.int64)


def discrete_cutoff(target: DiscreteTarget, n: int, lam: float) -> int:
    """A_n: smallest A with sum_{k>A} alpha_k k**lam <= 1/sqrt(n) (lam < 0), else floor(n**(1/(2 lam))) + 1."""
    n = _check_n(n)
    if lam > 0:
        return int(math.floor(n ** (1.0 / (2.0 * lam)) * (1.0 + 1e-15))) + 1
    if lam == 0:
        raise ValidationError("lambda must be nonzero")
    level = 1.0 / math.sqrt(n)
    k = np.arange(1, target.horizon + 1, dtype=float)
    terms = target.weights * np.power(k, lam)
    # suffix[A] = sum_{k > A} alpha_k k**lam; the unenumerated tail is bounded by tail_mass * (K+1)**lam
    suffix = np.concatenate((np.cumsum(terms[::-1])[::-1], [0.0])) + target.tail_mass * (target.horizon + 1.0) ** lam
    ok = np.flatnonzero(suffix <= level)
    if ok.size == 0:
        raise ValidationError(
            f"enumeration horizon K={target.horizon} reached before A_n was found: "
            f"sum_(k>K) alpha_k k^lam <= {suffix[-1]:.3e} > 1/sqrt(n) = {level:.3e}"
        )
    return max(int(ok[0]), 1)


def build_discrete(target: DiscreteTarget, n: int, lam: float) -> DiscreteMeasure:
    """(1/n) sum_k alpha_k^n delta_k with integer alpha_k^n from cumulative floors up to A_n."""
    n = _check_n(n)
    A = discrete_cutoff(target, n, lam)
    w = np.zeros(A)
    m = min(A, target.horizon)
    w[:m] = target.weights[:m]
    if lam < 0:
        cum = _floor(n * np.cumsum(w))
        counts = np.diff(np.concatenate(([0], cum)))
    else:
        _finite_moment(target, 2 * lam)
        # suffix sums over the full target, not just the first A_n weights
        full = np.concatenate((target.weights, [target.tail_mass]))
        suf = np.cumsum(full[::-1])[::-1]
        s = suf[: A + 1] if suf.size > A else np.concatenate((suf, np.full(A + 1 - suf.size, target.tail_mass)))
        fl = _floor(n * s)
        counts = fl[:-1] - fl[1:]
    if np.any(counts < 0):
        raise ValidationError("cumulative floors produced a negative count")
    keep = counts > 0
    if not np.any(keep):
        raise ValidationError(f"n={n} is too small: every rounded weight is zero")
    k = np.arange(1, A + 1)
    return DiscreteMeasure.from_counts(k[keep], counts[keep], n)


# bounds ----------------------------------------------------------------------------


def bound_atomless_neg(target: AtomlessTarget, n: int, lam: float) -> float:
    return (2.0 * target.moment(2 * lam) + 3.0) / (abs(lam) * math.sqrt(n))


def bound_atomless_pos(target: AtomlessTarget, n: int, lam: float) -> float:
    return 2.0 * (target.moment(2 * lam) + 1.0) / (lam * math.sqrt(n))


def bound_discrete(target: DiscreteTarget, n: int, lam: float) -> float:
    if lam < 0:
        return (1.0 + 2.0 / math.sqrt(n)) / (abs(lam) * math.sqrt(n))
    return (target.moment(2 * lam) + 4.0) / (lam * math.sqrt(n))


def build_initial(target, n: int, lam: float) -> DiscreteMeasure:
    """Dispatch on target type and the sign of lambda."""
    if isinstance(target, DiscreteTarget):
        return build_discrete(target, n, lam)
    if lam < 0:
        return build_atomless_neg(target, n, lam)
    return build_atomless_pos(target, n, lam)


def distance_bound(target, n: int, lam: float) -> float:
    if isinstance(target, DiscreteTarget):
        return bound_discrete(target, n, lam)
    if lam < 0:
        return bound_atomless_neg(target, n, lam)
    return bound_atomless_pos(target, n, lam)


TARGETS = {
    "gamma": gamma_target,
    "exponential": exponential_target,
    "power_cutoff": power_cutoff_target,
    "geometric": geometric_target,
    "dirac": dirac_target,
}


def target_from_config(doc: dict):
    """Target from ``{"name": ..., <parameters>}``."""
    from .errors import ConfigError

    if not isinstance(doc, dict) or "name" not in doc:
        raise ConfigError("target.name", "missing")
    name = doc["name"]
    if name not in TARGETS:
        raise ConfigError("target.name", f"unknown target {name!r}; choose from {sorted(TARGETS)}")
    params = {k: v for k, v in doc.items() if k != "name"}
    try:
        return TARGETS[name](**params)
    except TypeError as exc:
        raise ConfigError(f"target.{name}", str(exc)) from None
    except ValidationError as exc:
        raise ConfigError(f"target.{name}", str(exc)) from None
