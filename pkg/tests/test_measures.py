import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from coalrate.errors import QuadratureError, ValidationError
from coalrate.initcond import exponential_target, gamma_target
from coalrate.measures import (
    DiscreteMeasure,
    QuadratureConfig,
    TailFunction,
    TruncatedMeasure,
    d_lambda_discrete,
    d_lambda_vs_reference,
    moment,
    theta_integral_check,
)

from oracles import midpoint_d_lambda, quad_d_lambda_continuous

LAMBDAS = (-2.0, -1.0, -0.5, 0.5, 1.0)


def test_canonicalization_sorts_and_merges():
    mu = DiscreteMeasure([3.0, 1.0, 3.0], [0.25, 0.5, 0.25])
    assert mu.masses.tolist() == [1.0, 3.0]
    assert mu.weights.tolist() == [0.5, 0.5]
    assert mu == DiscreteMeasure([1.0, 3.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        mu.masses[0] = 2.0


@pytest.mark.parametrize("masses,weights", [([0.0], [1.0]), ([-1.0], [1.0]), ([1.0], [0.0]), ([1.0], [np.nan])])
def test_rejects_nonpositive_or_nonfinite(masses, weights):
    with pytest.raises(ValidationError):
        DiscreteMeasure(masses, weights)


def test_moment_examples():
    assert moment(DiscreteMeasure([1, 2], [0.5, 0.5]), 0) == 1.0
    assert moment(DiscreteMeasure([2], [1]), 1) == 2.0
    assert moment(DiscreteMeasure([1, 4], [0.3, 0.7]), -1) == pytest.approx(0.475, rel=1e-15)


def test_tail_functions_are_right_continuous():
    mu = DiscreteMeasure([1.0, 2.0], [0.25, 0.75])
    assert mu.cdf([0.5, 1.0, 1.5, 2.0, 9.0]).tolist() == [0.0, 0.25, 0.25, 1.0, 1.0]
    assert mu.tail([0.5, 1.0, 1.5, 2.0, 9.0]).tolist() == [1.0, 0.75, 0.75, 0.0, 0.0]
    assert TailFunction(mu, "F")(1.0) == 0.75
    assert TailFunction(mu, "G")(1.0) == 0.25


def test_distance_hand_examples():
    a, b = DiscreteMeasure([1.0], [1.0]), DiscreteMeasure([2.0], [1.0])
    assert d_lambda_discrete(a, b, 1.0) == pytest.approx(1.0, rel=1e-15)
    assert d_lambda_discrete(a, b, -1.0) == pytest.approx(0.5, rel=1e-15)
    assert d_lambda_discrete(a, a, 0.5) == 0.0


def test_lambda_zero_rejected():
    a = DiscreteMeasure([1.0], [1.0])
    with pytest.raises(ValidationError):
        d_lambda_discrete(a, a, 0.0)


def test_unequal_total_mass_uses_improper_ends():
    # lam > 0: E = F differences reach down to 0; lam < 0: G differences reach to infinity
    a, b = DiscreteMeasure([1.0], [1.0]), DiscreteMeasure([1.0], [0.5])
    assert d_lambda_discrete(a, b, 1.0) == pytest.approx(0.5)  # int_0^1 0.5 dx
    assert d_lambda_discrete(a, b, -1.0) == pytest.approx(0.5)  # int_1^inf 0.5 x^-2 dx


def test_csv_and_json_roundtrip(tmp_path):
    mu = DiscreteMeasure([0.1, 2.0 / 3.0, 5.0], [1e-3, 0.3, 1.7])
    p = tmp_path / "m.csv"
    mu.to_csv(p)
    assert p.read_text().splitlines()[0] == "mass,weight"
    assert DiscreteMeasure.load(p) == mu
    q = tmp_path / "m.json"
    mu.to_json(q)
    assert DiscreteMeasure.load(q) == mu
    assert DiscreteMeasure.from_csv(io.StringIO("mass,weight\n2,1\n1,1\n2,1\n")) == DiscreteMeasure([1, 2], [1, 2])


def test_counts_names_the_offending_atom():
    mu = DiscreteMeasure([1.0, 3.0], [0.5, 0.25])
    assert mu.counts(4).tolist() == [2, 1]
    with pytest.raises(ValidationError, match="3"):
        DiscreteMeasure([1.0, 3.0], [0.5, 0.3]).counts(4)


# property tests ---------------------------------------------------------------------

masses_st = st.lists(st.floats(1e-3, 1e3, allow_nan=False), min_size=1, max_size=12, unique=True)


@st.composite
def measures(draw):
    m = draw(masses_st)
    w = draw(st.lists(st.floats(1e-3, 10.0), min_size=len(m), max_size=len(m)))
    return DiscreteMeasure(m, w)


lam_st = st.sampled_from(LAMBDAS)


@settings(max_examples=150, deadline=None)
@given(measures(), measures(), measures(), lam_st)
def test_metric_axioms(mu, nu, rho, lam):
    d = lambda a, b: d_lambda_discrete(a, b, lam)  # noqa: E731
    assert d(mu, mu) == 0.0
    assert d(mu, nu) == pytest.approx(d(nu, mu), rel=1e-12, abs=1e-15)
    assert d(mu, rho) <= (d(mu, nu) + d(nu, rho)) * (1 + 1e-12) + 1e-15


@settings(max_examples=150, deadline=None)
@given(measures(), measures(), lam_st)
def test_distance_below_moment_bound(mu, nu, lam):
    bound = (moment(mu, lam) + moment(nu, lam)) / abs(lam)
    assert d_lambda_discrete(mu, nu, lam) <= bound * (1 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(measures())
def test_moment_zero_is_weight_sum(mu):
    assert moment(mu, 0) == math.fsum(mu.weights)


# brute-force oracle ------------------------------------------------------------------


def _random_pair_generic(rng, atoms=20):
    def one():
        return np.exp(rng.uniform(np.log(0.05), np.log(20.0), atoms)), rng.uniform(0.1, 1.0, atoms)

    return one(), one()


@pytest.mark.parametrize("lam", LAMBDAS)
def test_midpoint_oracle_generic_atoms_within_rigorous_bound(lam):
    # with atoms at arbitrary positions the midpoint rule is only accurate to h * sum|jumps|
    rng = np.random.default_rng(7)
    for _ in range(5):
        (mm, mw), (nm, nw) = _random_pair_generic(rng)
        exact = d_lambda_discrete(DiscreteMeasure(mm, mw), DiscreteMeasure(nm, nw), lam)
        edge = min(mm.min(), nm.min()) if lam < 0 else max(mm.max(), nm.max())
        approx, err = midpoint_d_lambda((mm, mw), (nm, nw), lam, edge**lam)
        assert abs(approx - exact) <= err + 1e-12 * exact


def test_quadrature_against_exponential_closed_form():
    mu = DiscreteMeasure([1.0], [1.0])
    est = d_lambda_vs_reference(mu, exponential_target(), 1.0)
    assert est.value == pytest.approx(2.0 / math.e, rel=1e-12)
    assert est.error < 1e-10


def _exact_vs_gamma(masses, weights, lam, g):
    """Closed form built from partial moments: int_a^b x^(lam-1) H(x) dx for H = cdf or tail.

    Integration by parts gives int_a^b x^(lam-1) G = [x^lam G/lam]_a^b - int_a^b x^lam dmu / lam,
    and the absolute value is handled by splitting at the points where E changes sign.
    """
    from scipy import optimize

    order = np.argsort(masses)
    masses = np.asarray(masses, float)[order]
    w = np.asarray(weights, float)[order]
    cum = np.concatenate(([0.0], np.cumsum(w)))
    total = cum[-1]
    edges = [0.0] + masses.tolist() + [math.inf]
    out = 0.0
    for k, (a, b) in enumerate(zip(edges, edges[1:])):
        level = cum[k] if lam < 0 else total - cum[k]
        h = g.cdf if lam < 0 else g.tail
        # split where the continuous function crosses the constant level
        pts = [a, b]
        fa = float(h(a)) - level if a > 0 else (-level if lam < 0 else g.total_mass - level)
        fb = float(h(b)) - level if math.isfinite(b) else ((g.total_mass - level) if lam < 0 else -level)
        if fa * fb < 0:
            hi = b if math.isfinite(b) else max(2 * a, 1.0)
            while math.isinf(b) and (float(h(hi)) - level) * fa > 0:
                hi *= 2
            pts = [a, optimize.brentq(lambda x: float(h(x)) - level, max(a, 1e-300), hi, xtol=1e-15, rtol=1e-15), b]
        for lo, up in zip(pts, pts[1:]):
            out += abs(_signed_piece(lo, up, level, lam, g))
    return out


def _signed_piece(a, b, level, lam, g):
    """int_a^b x^(lam-1) (H(x) - level) dx with H = G (lam < 0) or F (lam > 0), exactly."""

    def pw(x):
        if x == 0.0:
            return 0.0 if lam > 0 else math.inf
        if math.isinf(x):
            return math.inf if lam > 0 else 0.0
        return x**lam

    pm = g.partial_moment(lam, a, b)
    if lam < 0:
        # G(x) = G(a) + mu((a, x]);  int_a^b x^(lam-1) mu((a,x]) dx = (b^lam mu((a,b]) - pm)/lam
        ga = float(g.cdf(a)) if a > 0 else 0.0
        mass_ab = (float(g.cdf(b)) if math.isfinite(b) else g.total_mass) - ga
        first = 0.0 if ga == level else (ga - level) * ((pw(b) - pw(a)) / lam)
        second = ((pw(b) * mass_ab if math.isfinite(b) else 0.0) - pm) / lam
        return first + second
    # F(x) = F(b) + mu((x, b]); int_a^b x^(lam-1) mu((x,b]) = (pm - a^lam mu((a,b]))/lam
    fb = float(g.tail(b)) if math.isfinite(b) else 0.0
    mass_ab = (float(g.tail(a)) if a > 0 else g.total_mass) - fb
    first = 0.0 if fb == level else (fb - level) * ((pw(b) - pw(a)) / lam)
    second = (pm - (pw(a) * mass_ab if a > 0 else 0.0)) / lam
    return first + second


@pytest.mark.parametrize("lam", [-1.0, -0.5, 0.5, 1.0])
def test_quadrature_against_partial_moment_oracle(lam):
    g = gamma_target(3.0)
    rng = np.random.default_rng(11)
    masses = np.sort(rng.uniform(0.2, 8.0, 6))
    weights = rng.uniform(0.05, 0.3, 6)
    exact = _exact_vs_gamma(masses, weights, lam, g)
    est = d_lambda_vs_reference(DiscreteMeasure(masses, weights), g, lam)
    assert est.value == pytest.approx(exact, rel=1e-10)
    assert abs(est.value - exact) <= max(est.error, 1e-12 * exact) * 10


@pytest.mark.parametrize("lam", [-1.0, 1.0])
def test_quadrature_against_scipy_quad(lam):
    g = gamma_target(3.0)
    masses, weights = np.array([0.5, 1.5, 4.0]), np.array([0.2, 0.5, 0.3])
    ref = quad_d_lambda_continuous(masses, weights, lam, g.cdf, g.tail, breaks=[1.0, 2.0, 3.0, 6.0, 10.0])
    est = d_lambda_vs_reference(DiscreteMeasure(masses, weights), g, lam)
    assert est.value == pytest.approx(ref, rel=1e-8)


def test_discrete_reference_consistency():
    a = DiscreteMeasure([1.0, 2.5, 7.0], [0.2, 0.3, 0.5])
    b = DiscreteMeasure([1.5, 2.5], [0.6, 0.4])
    for lam in LAMBDAS:
        est = d_lambda_vs_reference(a, b, lam)
        assert est == (d_lambda_discrete(a, b, lam), 0.0)
        t = d_lambda_vs_reference(a, TruncatedMeasure(b, lambda lam: 1e-9), lam)
        assert t.value == est.value and t.error == 1e-9


def test_refinement_within_error_estimate():
    g = gamma_target(3.0)
    mu = DiscreteMeasure([0.5, 1.5, 4.0], [0.2, 0.5, 0.3])
    coarse = d_lambda_vs_reference(mu, g, 1.0, QuadratureConfig(nodes=8))
    fine = d_lambda_vs_reference(mu, g, 1.0, QuadratureConfig(nodes=32))
    assert abs(coarse.value - fine.value) <= coarse.error + fine.error + 1e-15


def test_infinite_tail_moment_is_reported():
    # M_{-1.5} of Exp(1) diverges near 0, so the lower tail cannot be bounded
    with pytest.raises(QuadratureError):
        d_lambda_vs_reference(DiscreteMeasure([1.0], [1.0]), exponential_target(), -1.5)


def test_unresolved_integrand_is_reported():
    g = gamma_target(3.0)
    with pytest.raises(QuadratureError):
        d_lambda_vs_reference(
            DiscreteMeasure([1.0], [1.0]), g, 1.0, QuadratureConfig(nodes=1, refine_rtol=1e-15, refine_atol=0.0)
        )


# theta integrals --------------------------------------------------------------------


def test_theta_hand_example():
    c = theta_integral_check(1.0, 1.0, 4)
    assert c.i1 == pytest.approx(0.75) and c.bound1 == pytest.approx(1.0)
    assert c.i2 == pytest.approx(0.75) and c.bound2 == pytest.approx(1.0)


@pytest.mark.parametrize("lam,eps,n", [(0.3, 0.1, 10), (1.0, 0.01, 1), (0.7, 1.0, 10**4)])
def test_theta_integrals_match_numerical_quadrature(lam, eps, n):
    def theta(x):
        return (1.0 if x <= 1 else x ** (-2 * lam - eps)) / math.sqrt(n)

    i1 = sum(integrate.quad(lambda x: x ** (lam - 1) * theta(x), a, b, limit=200)[0] for a, b in [(0, 1), (1, np.inf)])
    i2 = sum(integrate.quad(lambda x: x ** (2 * lam - 1) * theta(x), a, b, limit=200)[0] for a, b in [(0, 1), (1, np.inf)])
    c = theta_integral_check(lam, eps, n)
    assert c.i1 == pytest.approx(i1, rel=1e-6)
    assert c.i2 == pytest.approx(i2, rel=1e-6)


def test_theta_rejects_bad_parameters():
    for args in [(0.0, 1.0, 1), (1.5, 1.0, 1), (0.5, 0.0, 1), (0.5, 1.0, 0)]:
        with pytest.raises(ValidationError):
            theta_integral_check(*args)
