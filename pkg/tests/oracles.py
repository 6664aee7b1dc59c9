"""Independent reference computations used by several test modules.

None of these call into coalrate's integration code: they work from the
definition of d_lambda (or from antiderivatives) directly.
"""

import math

import numpy as np
from scipy import integrate

PANELS = 10**6


def _step_cdf(masses, weights, x):
    order = np.argsort(masses)
    m, w = np.asarray(masses, float)[order], np.asarray(weights, float)[order]
    cum = np.concatenate(([0.0], np.cumsum(w)))
    return cum[np.searchsorted(m, x, side="right")]


def _step_tail(masses, weights, x):
    return float(np.sum(weights)) - _step_cdf(masses, weights, x)


def midpoint_d_lambda(mu, nu, lam, u_max, panels=PANELS):
    """Midpoint rule for int x**(lam-1) |E(x)| dx after substituting u = x**lam.

    dx x**(lam-1) = du / |lam|, so the integral becomes int_0^u_max |E(u**(1/lam))| du / |lam|.
    The caller picks u_max so that E vanishes for u > u_max.
    Also returns the rigorous error bound h * sum|jumps of E| / |lam|
    (constant panels are integrated exactly; a panel containing a jump
    errs by at most h times that jump).
    """
    (mm, mw), (nm, nw) = mu, nu
    h = u_max / panels
    u = (np.arange(panels) + 0.5) * h
    x = u ** (1.0 / lam)
    if lam < 0:
        e = _step_cdf(mm, mw, x) - _step_cdf(nm, nw, x)
    else:
        e = _step_tail(mm, mw, x) - _step_tail(nm, nw, x)
    value = float(np.sum(np.abs(e))) * h / abs(lam)
    jumps = float(np.sum(mw) + np.sum(nw))
    return value, h * jumps / abs(lam)


def quad_d_lambda_continuous(masses, weights, lam, cdf, tail, breaks=()):
    """d_lambda between a discrete measure and a continuous one by adaptive scipy quadrature."""
    masses = np.sort(np.asarray(masses, float))
    pts = sorted(set(masses.tolist()) | set(float(b) for b in breaks))
    if lam < 0:
        f = lambda x: x ** (lam - 1) * abs(_step_cdf(masses, weights, x) - cdf(x))  # noqa: E731
    else:
        f = lambda x: x ** (lam - 1) * abs(_step_tail(masses, weights, x) - tail(x))  # noqa: E731
    edges = [0.0] + pts + [math.inf]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        val, _ = integrate.quad(f, a, b, limit=400, epsabs=1e-14, epsrel=1e-12)
        total += val
    return total


def golovin_c(t, k):
    """c_k(t) for the additive kernel from delta_1, straight from the formula with lgamma."""
    s = 1.0 - math.exp(-t)
    if t == 0:
        return 1.0 if k == 1 else 0.0
    return math.exp(-t + (k - 1) * math.log(k * s) - k * s - math.lgamma(k + 1))
