"""Finite weighted measures on (0, inf) and the distance d_lambda between them.

For a measure mu the tail and distribution functions are

    F(x) = mu((x, inf)),    G(x) = mu((0, x]),

and for lambda in (-inf, 1] minus {0}

    d_lambda(mu, nu) = int_0^inf x**(lambda - 1) |E(x)| dx

with E = G_mu - G_nu when lambda < 0 and E = F_mu - F_nu when lambda > 0.
Between two discrete measures E is a step function, so the integral is a
finite sum of power increments.  Against a continuous reference the
integral is evaluated by fixed-order Gauss-Legendre on the segments where
the discrete side is constant.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import optimize

from .errors import InvariantViolation, QuadratureError, ValidationError

__all__ = [
    "DiscreteMeasure",
    "TruncatedMeasure",
    "TailFunction",
    "QuadratureConfig",
    "DistanceEstimate",
    "ThetaCheck",
    "moment",
    "d_lambda_discrete",
    "d_lambda_vs_reference",
    "theta_integral_check",
]


def _check_lambda(lam):
    lam = float(lam)
    if lam == 0.0:
        raise ValidationError("d_lambda is undefined for lambda = 0")
    if not lam <= 1.0:
        raise ValidationError(f"lambda must lie in (-inf, 1] minus {{0}}, got {lam}")
    return lam


class DiscreteMeasure:
    """Finite measure sum_i w_i delta_{x_i} with x_i > 0 and w_i > 0.

    Atoms are sorted by mass and atoms of equal mass are merged at
    construction, so two measures compare equal exactly when they are the
    same measure.
    """

    __slots__ = ("_masses", "_weights")

    def __init__(self, masses, weights):
        masses = np.asarray(masses, dtype=float).ravel()
        weights = np.asarray(weights, dtype=float).ravel()
        if masses.shape != weights.shape:
            raise ValidationError(
                f"masses and weights differ in length ({masses.size} vs {weights.size})"
            )
        if not (np.all(np.isfinite(masses)) and np.all(np.isfinite(weights))):
            raise ValidationError("masses and weights must be finite")
        if np.any(masses <= 0):
            bad = masses[masses <= 0][0]
            raise ValidationError(f"atom mass must be positive, got {bad!r}")
        if np.any(weights <= 0):
            bad = weights[weights <= 0][0]
            raise ValidationError(f"atom weight must be positive, got {bad!r}")
        order = np.argsort(masses, kind="stable")
        masses, weights = masses[order], weights[order]
        if masses.size > 1 and np.any(masses[1:] == masses[:-1]):
            masses, inverse = np.unique(masses, return_inverse=True)
            weights = np.bincount(inverse, weights=weights)
        masses.setflags(write=False)
        weights.setflags(write=False)
        self._masses = masses
        self._weights = weights

    @classmethod
    def from_atoms(cls, atoms):
        """Build from an iterable of ``(mass, weight)`` pairs."""
        atoms = list(atoms)
        if not atoms:
            return cls([], [])
        masses, weights = zip(*atoms)
        return cls(masses, weights)

    @classmethod
    def from_counts(cls, masses, counts, n):
        """Build ``(1/n) sum_i counts_i delta_{masses_i}`` keeping weights exact multiples of 1/n."""
        masses = np.asarray(masses, dtype=float).ravel()
        counts = np.asarray(counts).ravel()
        if np.any(counts <= 0):
            raise ValidationError("counts must be positive integers")
        uniq, inverse = np.unique(masses, return_inverse=True)
        summed = np.bincount(inverse, weights=counts).astype(np.int64)
        return cls(uniq, summed / float(n))

    @property
    def masses(self):
        return self._masses

    @property
    def weights(self):
        return self._weights

    def __len__(self):
        return self._masses.size

    def __iter__(self):
        return iter(zip(self._masses.tolist(), self._weights.tolist()))

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return np.array_equal(self._masses, other._masses) and np.array_equal(
            self._weights, other._weights
        )

    def __repr__(self):
        if len(self) <= 6:
            body = ", ".join(f"({m:g}, {w:g})" for m, w in self)
        else:
            body = f"{len(self)} atoms on [{self._masses[0]:g}, {self._masses[-1]:g}]"
        return f"DiscreteMeasure({body})"

    @property
    def total_mass(self):
        return math.fsum(self._weights)

    def moment(self, alpha):
        return moment(self, alpha)

    def cdf(self, x):
        """G(x) = mu((0, x]), vectorized over ``x``."""
        cum = np.concatenate(([0.0], np.cumsum(self._weights)))
        idx = np.searchsorted(self._masses, x, side="right")
        return cum[idx]

    def tail(self, x):
        """F(x) = mu((x, inf)), computed by reverse summation to keep small tails accurate."""
        rev = np.concatenate((np.cumsum(self._weights[::-1])[::-1], [0.0]))
        idx = np.searchsorted(self._masses, x, side="right")
        return rev[idx]

    def counts(self, n, rtol=1e-9):
        """Integer multiplicities k_i with w_i = k_i / n; raises if any weight is off-lattice."""
        scaled = self._weights * n
        counts = np.rint(scaled)
        off = np.abs(scaled - counts) > rtol * np.maximum(scaled, 1.0)
        off |= counts < 1
        if np.any(off):
            i = int(np.flatnonzero(off)[0])
            raise ValidationError(
                f"atom (mass={self._masses[i]!r}, weight={self._weights[i]!r}) is not an "
                f"integer multiple of 1/{n} (weight*n = {scaled[i]!r})"
            )
        return counts.astype(np.int64)

    # serialization -------------------------------------------------------

    def to_csv(self, path_or_buf=None):
        """Write ``mass,weight`` CSV; returns the text when no target is given."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["mass", "weight"])
        for m, w in self:
            writer.writerow([repr(m), repr(w)])
        return _emit(buf.getvalue(), path_or_buf)

    @classmethod
    def from_csv(cls, path_or_buf):
        text = _slurp(path_or_buf)
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["mass", "weight"]:
            raise ValidationError(f"measure CSV must start with header 'mass,weight', got {header}")
        masses, weights = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise ValidationError(f"line {lineno}: expected 2 columns, got {len(row)}")
            try:
                masses.append(float(row[0]))
                weights.append(float(row[1]))
            except ValueError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
        return cls(masses, weights)

    def to_json(self, path_or_buf=None):
        text = json.dumps({"atoms": [[m, w] for m, w in self]})
        return _emit(text, path_or_buf)

    @classmethod
    def from_json(cls, path_or_buf):
        try:
            doc = json.loads(_slurp(path_or_buf))
            atoms = doc["atoms"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"measure JSON must look like {{'atoms': [[mass, weight], ...]}}: {exc}") from None
        if any(len(a) != 2 for a in atoms):
            raise ValidationError("every atom must be a [mass, weight] pair")
        return cls.from_atoms(atoms)

    @classmethod
    def load(cls, path):
        """Load CSV or JSON, chosen by file extension."""
        if str(path).lower().endswith(".json"):
            return cls.from_json(path)
        return cls.from_csv(path)


def _emit(text, path_or_buf):
    if path_or_buf is None:
        return text
    if isinstance(path_or_buf, (str, os.PathLike)):
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)
    else:
        path_or_buf.write(text)
    return None


def _slurp(path_or_buf):
    if isinstance(path_or_buf, (str, os.PathLike)):
        with open(path_or_buf, newline="") as fh:
            return fh.read()
    return path_or_buf.read()


@dataclass(frozen=True)
class TruncatedMeasure:
    """A discrete measure known only up to a truncation.

    ``omitted(lam)`` bounds d_lambda between ``measure`` and the full
    measure; for dropped atoms at large mass this is
    sum_{dropped} w_k x_k**lam / |lam|.
    """

    measure: DiscreteMeasure
    omitted: Callable[[float], float]


class TailFunction:
    """Pointwise F (``mode='F'``) or G (``mode='G'``) of a measure-like object."""

    def __init__(self, source, mode="F"):
        if mode not in ("F", "G"):
            raise ValidationError("mode must be 'F' or 'G'")
        self.source = source
        self.mode = mode

    def __call__(self, x):
        if self.mode == "G":
            return self.source.cdf(x)
        if hasattr(self.source, "tail"):
            return self.source.tail(x)
        return self.source.total_mass - self.source.cdf(x)


def moment(mu: DiscreteMeasure, alpha: float) -> float:
    """M_alpha(mu) = sum_i w_i x_i**alpha."""
    if alpha == 0:
        return math.fsum(mu.weights)
    return math.fsum(mu.weights * np.power(mu.masses, float(alpha)))


def _power_increment(lo, hi, lam):
    """(hi**lam - lo**lam) / lam without cancellation when hi is close to lo."""
    return np.power(lo, lam) * np.expm1(lam * np.log1p((hi - lo) / lo)) / lam


def d_lambda_discrete(mu: DiscreteMeasure, nu: DiscreteMeasure, lam: float) -> float:
    """Exact d_lambda between two finite discrete measures."""
    lam = _check_lambda(lam)
    b = np.union1d(mu.masses, nu.masses)
    if b.size == 0:
        return 0.0
    if lam < 0:
        e = np.abs(mu.cdf(b) - nu.cdf(b))
        # E vanishes below b[0]; on [b_last, inf) it equals M0(mu) - M0(nu)
        inner = math.fsum(e[:-1] * _power_increment(b[:-1], b[1:], lam))
        last = e[-1] * b[-1] ** lam / -lam
        return inner + float(last)
    e = np.abs(mu.tail(b) - nu.tail(b))
    inner = math.fsum(e[:-1] * _power_increment(b[:-1], b[1:], lam))
    first = abs(mu.total_mass - nu.total_mass) * b[0] ** lam / lam
    return inner + float(first)


@dataclass(frozen=True)
class QuadratureConfig:
    """Settings for d_lambda against a continuous reference.

    nodes:         Gauss-Legendre nodes per segment.
    tail_rtol:     improper ends are truncated once the remaining tail bound
                   drops below ``tail_rtol`` times the running estimate.
    refine_rtol,
    refine_atol:   allowed disagreement between the panel rule and the
                   rule on halved panels before QuadratureError is raised.
    max_tail_panels: dyadic panels allowed at each improper end.
    """

    nodes: int = 16
    tail_rtol: float = 1e-12
    refine_rtol: float = 1e-8
    refine_atol: float = 1e-14
    max_tail_panels: int = 4000


class DistanceEstimate(NamedTuple):
    value: float
    error: float


def d_lambda_vs_reference(mu, ref, lam, quad: QuadratureConfig | None = None) -> DistanceEstimate:
    """d_lambda(mu, ref) with an error estimate.

    ``ref`` may be a DiscreteMeasure (exact, error 0), a TruncatedMeasure
    (exact on the retained atoms, error = the truncation bound), or any
    object exposing ``total_mass`` and a vectorized ``cdf`` (plus
    optionally ``tail``, ``quantile`` and ``partial_moment(alpha, a, b)``),
    which is integrated numerically.
    """
    lam = _check_lambda(lam)
    if isinstance(ref, DiscreteMeasure):
        return DistanceEstimate(d_lambda_discrete(mu, ref, lam), 0.0)
    if isinstance(ref, TruncatedMeasure):
        return DistanceEstimate(d_lambda_discrete(mu, ref.measure, lam), float(ref.omitted(lam)))
    return _ContinuousDistance(mu, ref, lam, quad or QuadratureConfig()).evaluate()


class _ContinuousDistance:
    """Gauss-Legendre evaluation of d_lambda against an atomless reference."""

    def __init__(self, mu, ref, lam, quad):
        if len(mu) == 0:
            raise ValidationError("continuous-reference distance needs at least one atom")
        self.mu, self.ref, self.lam, self.quad = mu, ref, lam, quad
        self.m0_ref = float(ref.total_mass)
        self.m0_mu = mu.total_mass
        self.nodes, self.gw = np.polynomial.legendre.leggauss(quad.nodes)
        self.has_quantile = hasattr(ref, "quantile")
        self.has_pm = hasattr(ref, "partial_moment")

    # E on a panel is (discrete part V) - (reference part R(x))
    def _ref_part(self, x):
        if self.lam < 0:
            return self.ref.cdf(x)
        if hasattr(self.ref, "tail"):
            return self.ref.tail(x)
        return self.m0_ref - self.ref.cdf(x)

    def _crossing(self, v, a, b):
        """Solve R(x) = v on (a, b) for monotone R."""
        if self.has_quantile:
            level = v if self.lam < 0 else self.m0_ref - v
            x = np.asarray(self.ref.quantile(level), dtype=float)
            return np.clip(x, a, b)
        out = np.empty_like(a)
        for k in range(a.size):
            out[k] = optimize.brentq(
                lambda s: float(self._ref_part(s)) - v[k], a[k], b[k], xtol=1e-15 * b[k], rtol=4e-16
            )
        return out

    def _split_crossings(self, a, b, v):
        ea = v - self._ref_part(a)
        eb = v - self._ref_part(b)
        cross = ea * eb < 0
        if not np.any(cross):
            return a, b, v
        idx = np.flatnonzero(cross)
        xs = self._crossing(v[idx], a[idx], b[idx])
        b_left = b.copy()
        b_left[idx] = xs
        return (
            np.concatenate((a, xs)),
            np.concatenate((b_left, b[idx])),
            np.concatenate((v, v[idx])),
        )

    def _rule(self, a, b, v):
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        x = mid[:, None] + half[:, None] * self.nodes[None, :]
        f = np.power(x, self.lam - 1.0) * np.abs(v[:, None] - self._ref_part(x))
        return (f * self.gw[None, :]).sum(axis=1) * half

    def _integrate(self, a, b, v):
        """(fine, |fine - coarse|) summed over panels."""
        a, b, v = self._split_crossings(a, b, v)
        keep = b > a
        a, b, v = a[keep], b[keep], v[keep]
        coarse = self._rule(a, b, v)
        mid = 0.5 * (a + b)
        fine = self._rule(a, mid, v) + self._rule(mid, b, v)
        return math.fsum(fine), math.fsum(np.abs(fine - coarse))

    def _left_bound(self, eps):
        lam = self.lam
        if lam > 0:
            r = float(self._ref_part(eps))
            sup = max(abs(self.m0_mu - r), abs(self.m0_mu - self.m0_ref))
            return sup * eps**lam / lam
        if not self.has_pm:
            raise ValidationError("lambda < 0 against a continuous reference needs partial_moment")
        return float(self.ref.partial_moment(lam, 0.0, eps)) / -lam

    def _right_bound(self, big):
        lam = self.lam
        if lam > 0:
            if not self.has_pm:
                raise ValidationError("lambda > 0 against a continuous reference needs partial_moment")
            return float(self.ref.partial_moment(lam, big, np.inf)) / lam
        g = float(self.ref.cdf(big))
        sup = max(abs(self.m0_mu - g), abs(self.m0_mu - self.m0_ref))
        return sup * big**lam / -lam

    def evaluate(self):
        lam, quad = self.lam, self.quad
        xs = self.mu.masses
        if lam < 0:
            levels = self.mu.cdf(xs)
            left_v, right_v = 0.0, self.m0_mu
        else:
            levels = self.mu.tail(xs)
            left_v, right_v = self.m0_mu, 0.0

        total, refine_err = self._integrate(xs[:-1], xs[1:], levels[:-1])

        chunk = 16
        # left end: dyadic panels toward 0
        hi = xs[0]
        left_bound = self._left_bound(hi)
        if not np.isfinite(left_bound):
            raise QuadratureError(
                f"reference has no finite M_{lam:g} near 0; d_lambda is not finite"
            )
        used = 0
        while left_bound > quad.tail_rtol * max(total, 1e-300):
            if used >= quad.max_tail_panels:
                raise QuadratureError(
                    f"left tail still contributes up to {left_bound:.3e} after {used} panels"
                )
            edges = hi * 0.5 ** np.arange(chunk + 1)
            val, e = self._integrate(edges[1:], edges[:-1], np.full(chunk, left_v))
            total += val
            refine_err += e
            hi = edges[-1]
            used += chunk
            left_bound = self._left_bound(hi)

        lo = xs[-1]
        right_bound = self._right_bound(lo)
        if not np.isfinite(right_bound):
            raise QuadratureError(
                f"reference has no finite M_{lam:g} at infinity; d_lambda is not finite"
            )
        used = 0
        while right_bound > quad.tail_rtol * max(total, 1e-300):
            if used >= quad.max_tail_panels:
                raise QuadratureError(
                    f"right tail still contributes up to {right_bound:.3e} after {used} panels"
                )
            edges = lo * 2.0 ** np.arange(chunk + 1)
            val, e = self._integrate(edges[:-1], edges[1:], np.full(chunk, right_v))
            total += val
            refine_err += e
            lo = edges[-1]
            used += chunk
            right_bound = self._right_bound(lo)

        if refine_err > quad.refine_rtol * abs(total) + quad.refine_atol:
            raise QuadratureError(
                f"panel refinement changed the result by {refine_err:.3e} "
                f"(estimate {total:.6e}); integrand is not resolved"
            )
        return DistanceEstimate(float(total), float(refine_err + left_bound + right_bound))


class ThetaCheck(NamedTuple):
    i1: float
    i2: float
    bound1: float
    bound2: float


def theta_integral_check(lam: float, eps: float, n: int) -> ThetaCheck:
    """Closed-form weighted integrals of the smoothing profile

        theta(x) = n**-0.5 on (0, 1],   x**(-2 lam - eps) n**-0.5 on (1, inf),

    namely I1 = int x**(lam-1) theta and I2 = int x**(2 lam - 1) theta,
    together with their bounds 2/(lam sqrt n) and (lam+eps)/(lam eps sqrt n).
    """
    if not 0 < lam <= 1:
        raise ValidationError(f"lambda must be in (0, 1], got {lam}")
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    if n < 1 or int(n) != n:
        raise ValidationError(f"n must be a positive integer, got {n}")
    root = math.sqrt(n)
    i1 = (1.0 / lam + 1.0 / (lam + eps)) / root
    i2 = (1.0 / (2.0 * lam) + 1.0 / eps) / root
    bound1 = 2.0 / (lam * root)
    bound2 = (lam + eps) / (lam * eps * root)
    if not (i1 <= bound1 and i2 <= bound2):
        raise InvariantViolation(
            f"theta integral bound failed at lam={lam}, eps={eps}, n={n}: "
            f"I1={i1} vs {bound1}, I2={i2} vs {bound2}"
        )
    return ThetaCheck(i1, i2, bound1, bound2)
