"""Deterministic Smoluchowski solutions used as comparison targets.

Two references are provided, both on integer masses:

* :func:`solve_discrete_ode` integrates the discrete coagulation system
  truncated at X_max with classical RK4.  Clusters formed above X_max leave
  the system; the lost mass is reported as the leak.
* :class:`GolovinSolution` is the closed-form solution for K = x + y
  started from delta_1,

      c_k(t) = (1 - s) (k s)**(k-1) exp(-k s) / k!,   s = 1 - exp(-t).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ReferenceInvalidError, StepSizeError, ValidationError
from .kernels import ConditionClass, Kernel
from .measures import DiscreteMeasure, TruncatedMeasure

__all__ = [
    "ReferenceSolution",
    "DiscreteODESolution",
    "GolovinSolution",
    "solve_discrete_ode",
    "golovin_analytic",
    "golovin_tail",
    "moment_growth_constant",
    "moments_weak_solution_check",
    "WeakSolutionReport",
]


class ReferenceSolution:
    """Common interface: concentrations c_k(t) on integer masses k >= 1."""

    t_max = math.inf

    def concentrations(self, t):
        """(k, c_k) arrays at time t."""
        raise NotImplementedError

    def omitted_moment(self, t, alpha):
        """Bound on sum_{k not returned} c_k k**alpha."""
        return 0.0

    def _check_time(self, t):
        if t < 0 or t > self.t_max * (1 + 1e-12):
            raise ValidationError(f"t={t} outside the reference horizon [0, {self.t_max}]")

    def measure(self, t):
        k, c = self.concentrations(t)
        keep = c > 0
        return DiscreteMeasure(k[keep], c[keep])

    def at(self, t):
        """The solution at time t as a TruncatedMeasure usable by d_lambda_vs_reference."""
        k, c = self.concentrations(t)
        keep = c > 0
        dropped = np.abs(c[~keep])
        kd = k[~keep].astype(float)
        meas = DiscreteMeasure(k[keep], c[keep])

        def omitted(lam, _t=t):
            extra = math.fsum(dropped * kd**lam) if dropped.size else 0.0
            return (self.omitted_moment(_t, lam) + extra) / abs(lam)

        return TruncatedMeasure(meas, omitted)

    def tail(self, t, x):
        """F(t, x) = sum_{k > x} c_k(t)."""
        k, c = self.concentrations(t)
        rev = np.concatenate((np.cumsum(c[::-1])[::-1], [0.0]))
        idx = np.searchsorted(k, np.floor(np.asarray(x, dtype=float)), side="right")
        return rev[np.minimum(idx, k.size)] + self.omitted_moment(t, 0.0)

    def cdf(self, t, x):
        """G(t, x) = sum_{k <= x} c_k(t)."""
        k, c = self.concentrations(t)
        cum = np.concatenate(([0.0], np.cumsum(c)))
        idx = np.searchsorted(k, np.asarray(x, dtype=float), side="right")
        return cum[idx]

    def moment(self, t, alpha):
        k, c = self.concentrations(t)
        return math.fsum(c * np.power(k.astype(float), float(alpha)))

    def to_csv(self, times, path_or_buf=None):
        """Long-format ``t,k,c_k`` export."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "k", "c_k"])
        for t in times:
            k, c = self.concentrations(float(t))
            for kk, cc in zip(k.tolist(), c.tolist()):
                w.writerow([repr(float(t)), int(kk), repr(cc)])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return None


class _Coagulation:
    """Right-hand side of the discrete system truncated at X_max.

    The state carries one extra slot: the mass that has left through
    mergers producing clusters larger than X_max.
    """

    def __init__(self, kernel, x_max):
        k = np.arange(1, x_max + 1, dtype=float)
        self.kmat = np.asarray(kernel(k[:, None], k[None, :]), dtype=float)
        i, j = np.indices((x_max, x_max))
        target = (i + j + 1).ravel()  # index of mass (i+1)+(j+1)
        self.mask = target < x_max
        self.target = target[self.mask]
        self.out_mass = (target[~self.mask] + 1).astype(float)
        self.x_max = x_max

    def __call__(self, state):
        c = state[:-1]
        prod = (self.kmat * np.outer(c, c)).ravel()
        gain = 0.5 * np.bincount(self.target, weights=prod[self.mask], minlength=self.x_max)
        loss = c * (self.kmat @ c)
        out = np.empty_like(state)
        out[:-1] = gain - loss
        out[-1] = 0.5 * float(prod[~self.mask] @ self.out_mass)
        return out


def _rk4(f, c, h):
    k1 = f(c)
    k2 = f(c + 0.5 * h * k1)
    k3 = f(c + 0.5 * h * k2)
    k4 = f(c + h * k3)
    return c + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class DiscreteODESolution(ReferenceSolution):
    """RK4 solution of the truncated system; also answers queries between steps."""

    def __init__(self, rhs, times, states, kernel, leak_tol):
        self._rhs = rhs
        self.times = times
        self.states = states
        self.kernel = kernel
        self.t_max = float(times[-1])
        self.h = float(times[1] - times[0]) if times.size > 1 else 0.0
        self.x_max = states.shape[1] - 1
        self.k = np.arange(1, self.x_max + 1)
        self.m1_initial = math.fsum(states[0, :-1] * self.k)
        self.leak_tol = leak_tol
        self.max_leak = float(states[:, -1].max())
        self.valid = self.max_leak <= leak_tol

    def _state(self, t):
        self._check_time(t)
        if self.h == 0.0:
            return self.states[0]
        idx = min(int(math.floor(t / self.h + 1e-9)), self.times.size - 1)
        rem = t - self.times[idx]
        s = self.states[idx]
        if rem > 1e-12 * max(self.h, 1.0):
            s = _rk4(self._rhs, s, rem)
        return s

    def leak(self, t):
        """Mass carried past X_max by time t (integrated outflow)."""
        return float(self._state(t)[-1])

    def mass_defect(self, t):
        """M1(0) - M1(t) computed from the concentrations."""
        return self.m1_initial - math.fsum(self._state(t)[:-1] * self.k)

    def require_valid(self):
        if not self.valid:
            raise ReferenceInvalidError(
                f"truncated ODE leaked {self.max_leak:.3e} of mass by t={self.t_max} "
                f"(tolerance {self.leak_tol:.1e}); raise x_max"
            )
        return self

    def concentrations(self, t):
        return self.k, self._state(t)[:-1].copy()

    def omitted_moment(self, t, alpha):
        # each unit of leaked mass sits at k > x_max, carrying at most x_max**(alpha-1) for alpha <= 1
        lost = max(self.leak(t), self.mass_defect(t), 0.0)
        if alpha <= 1:
            return lost * self.x_max ** (alpha - 1.0)
        return math.inf if lost > 0 else 0.0


def solve_discrete_ode(kernel: Kernel, c0, T: float, dt: float, leak_tol=1e-8, neg_tol=1e-12) -> DiscreteODESolution:
    """Integrate the truncated discrete Smoluchowski system with fixed-step RK4.

    ``c0[k-1]`` is the initial concentration of mass k, so X_max = len(c0).
    The step is ``dt``, shortened uniformly when T is not a multiple of it.
    Raises StepSizeError when a concentration drops below ``-neg_tol``; a
    leak above ``leak_tol`` only marks the solution invalid.
    """
    c0 = np.asarray(c0, dtype=float).ravel()
    if c0.size < 2:
        raise ValidationError("X_max must be at least 2")
    if dt <= 0 or T < 0:
        raise ValidationError("need dt > 0 and T >= 0")
    if np.any(c0 < 0):
        raise ValidationError("initial concentrations must be non-negative")
    rhs = _Coagulation(kernel, c0.size)
    steps = max(int(math.ceil(T / dt - 1e-9)), 1) if T > 0 else 0
    h = T / steps if steps else 0.0
    states = np.empty((steps + 1, c0.size + 1))
    states[0, :-1] = c0
    states[0, -1] = 0.0
    c = states[0]
    for s in range(steps):
        c = _rk4(rhs, c, h)
        low = c[:-1].min()
        if low < -neg_tol:
            raise StepSizeError(
                f"concentration {low:.3e} at mass {int(np.argmin(c[:-1])) + 1} after step {s + 1} "
                f"(t={(s + 1) * h:g}); reduce dt={dt:g}"
            )
        states[s + 1] = c
    times = np.arange(steps + 1) * h
    return DiscreteODESolution(rhs, times, states, kernel, leak_tol)


# Golovin ---------------------------------------------------------------------


def _golovin_log_c(t, k):
    s = -math.expm1(-t)
    k = np.asarray(k, dtype=float)
    return -t + (k - 1.0) * np.log(k * s) - k * s - special.gammaln(k + 1.0)


def golovin_analytic(t: float, k):
    """c_k(t) for K = x + y and c(0) = delta_1, vectorized over integer k >= 1."""
    if t < 0:
        raise ValidationError("t must be non-negative")
    k = np.asarray(k)
    if np.any(k < 1):
        raise ValidationError("masses k must be >= 1")
    if t == 0:
        return np.where(k == 1, 1.0, 0.0)
    with np.errstate(divide="ignore"):
        return np.exp(_golovin_log_c(t, k))


def _golovin_ratio(t):
    """rho with c_{k+1} <= rho c_k for all k: (1+1/k)**(k-1) < e gives rho = s e**(1-s)."""
    s = -math.expm1(-t)
    return s * math.exp(1.0 - s)


def _golovin_remainder(t, K, c_K, alpha):
    """Bound on sum_{k>K} c_k k**alpha from the geometric ratio test."""
    if c_K == 0.0:
        return 0.0
    q = _golovin_ratio(t) * (1.0 + 1.0 / K) ** max(alpha, 0.0)
    if q >= 1.0:
        return math.inf
    return c_K * K**alpha * q / (1.0 - q)


def _golovin_horizon(t, tol=1e-18, alpha=1.0):
    K = 64
    while True:
        cK = float(golovin_analytic(t, K))
        if _golovin_remainder(t, K, cK, alpha) <= tol:
            return K
        if K > 1 << 24:
            raise ValidationError(f"Golovin series converges too slowly at t={t}")
        K *= 2


def golovin_tail(t: float, x, return_bound=False):
    """F(t, x) = sum_{k > x} c_k(t), summed until the ratio-test remainder is negligible."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t == 0:
        out = np.where(x < 1, 1.0, 0.0)
        bound = np.zeros_like(out)
    else:
        lo = np.floor(x).astype(np.int64) + 1
        lo = np.maximum(lo, 1)
        K = max(_golovin_horizon(t, alpha=0.0), int(lo.max()) + 64)
        k = np.arange(1, K + 1)
        c = golovin_analytic(t, k)
        rev = np.concatenate((np.cumsum(c[::-1])[::-1], [0.0]))
        out = rev[np.minimum(lo - 1, K)]
        rem = _golovin_remainder(t, K, float(c[-1]), 0.0)
        out = out + rem
        bound = np.full_like(out, rem)
    if out.size == 1:
        out, bound = float(out[0]), float(bound[0])
    return (out, bound) if return_bound else out


class GolovinSolution(ReferenceSolution):
    """Closed-form reference for K = x + y, mu_0 = delta_1 (no gelation: t_max = inf)."""

    def __init__(self, tol=1e-18):
        self.tol = tol
        self._cache = {}

    def concentrations(self, t):
        self._check_time(t)
        hit = self._cache.get(t)
        if hit is None:
            K = 1 if t == 0 else _golovin_horizon(t, self.tol, alpha=1.0)
            k = np.arange(1, K + 1)
            hit = (k, golovin_analytic(t, k))
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[t] = hit
        k, c = hit
        return k, c.copy()

    def omitted_moment(self, t, alpha):
        if t == 0:
            return 0.0
        k, c = self.concentrations(t)
        return _golovin_remainder(t, int(k[-1]), float(c[-1]), alpha)

    def tail(self, t, x):
        return golovin_tail(t, x)

    def validate_against_ode(self, t=0.5, x_max=200, dt=1e-3, tol=1e-6):
        """Componentwise max |c_ode - c_golovin| at time t; raises above ``tol``."""
        from .kernels import builtin_kernel

        c0 = np.zeros(x_max)
        c0[0] = 1.0
        ode = solve_discrete_ode(builtin_kernel("additive"), c0, t, dt)
        _, c_ode = ode.concentrations(t)
        c_an = golovin_analytic(t, np.arange(1, x_max + 1))
        err = float(np.max(np.abs(c_ode - c_an)))
        if err > tol:
            raise ReferenceInvalidError(
                f"Golovin formula and RK4 solution disagree by {err:.3e} at t={t} (tolerance {tol:.1e})"
            )
        return err


# moment checks ------------------------------------------------------------------


def moment_growth_constant(lam: float, alpha: float, kappa0: float = 1.0) -> float:
    """C with K |(x+y)**a - x**a - y**a| <= C (x**a y**lam + x**lam y**a) for a > 1.

    From K <= kappa0 (x**lam + y**lam), the mean value theorem and
    (x+y)**(a-1) <= c_a (x**(a-1) + y**(a-1)) with c_a = max(1, 2**(a-2)):
    C = a kappa0 (1 + 3 c_a).
    """
    if alpha <= 1:
        raise ValidationError("the growth constant is only defined for alpha > 1")
    c_a = max(1.0, 2.0 ** (alpha - 2.0))
    return alpha * kappa0 * (1.0 + 3.0 * c_a)


@dataclass
class WeakSolutionReport:
    lam: float
    condition_class: ConditionClass
    times: np.ndarray
    series: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def reliable(self):
        return not self.failures


def _default_alphas(lam, cls):
    if cls is ConditionClass.POS:
        return (0.0, 2.0 * lam)
    return (lam,)


def moments_weak_solution_check(ref: ReferenceSolution, lam: float, condition_class, T: float,
                                times=None, alphas=None, kappa0: float = 1.0,
                                rtol: float = 1e-12) -> WeakSolutionReport:
    """Sample M_alpha(mu_s) on [0, T] and check the weak-solution moment conditions.

    alpha defaults to lam (classes NEG, SPECIAL) or (0, 2 lam) (class POS).
    Every series must be finite; series with alpha <= 1 must not increase
    (up to ``rtol`` relative rounding); series with alpha > 1 must stay
    below M_alpha(0) exp(t C M_lam(0)) with C from moment_growth_constant.
    """
    cls = ConditionClass(condition_class) if not isinstance(condition_class, ConditionClass) else condition_class
    times = np.linspace(0.0, T, 11) if times is None else np.asarray(times, dtype=float)
    alphas = _default_alphas(lam, cls) if alphas is None else tuple(alphas)
    report = WeakSolutionReport(lam, cls, times)
    m_lam0 = ref.moment(0.0, lam)
    for a in alphas:
        s = np.array([ref.moment(float(t), a) for t in times])
        report.series[a] = s
        if not np.all(np.isfinite(s)):
            report.failures.append(f"M_{a:g} is not finite on [0, {T}]")
            continue
        if a <= 1:
            rise = s[1:] - s[:-1] * (1.0 + rtol)
            bad = np.flatnonzero(rise > rtol * np.abs(s[:-1]))
            if bad.size:
                k = int(bad[0])
                report.failures.append(
                    f"M_{a:g} increased from {s[k]!r} to {s[k + 1]!r} between t={times[k]} and t={times[k + 1]}"
                )
        else:
            C = moment_growth_constant(lam, a, kappa0)
            bound = s[0] * np.exp(times * C * m_lam0)
            report.bounds[a] = bound
            over = np.flatnonzero(s > bound * (1.0 + rtol))
            if over.size:
                k = int(over[0])
                report.failures.append(f"M_{a:g}={s[k]!r} exceeds growth bound {bound[k]!r} at t={times[k]}")
    return report
