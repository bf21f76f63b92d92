import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import chisquare

from msl.distributions import (
    FinitePoints,
    FlipProb,
    PowerLaw,
    ThresholdFamily,
    TwoPoint,
    UnsupportedFamily,
    Uniform,
    estimate_min_rho,
    excess_risk,
    lower_bound_class,
    make_asymmetry_pair,
    make_lower_bound_family,
    sample,
    two_point_class,
    validate_bernstein,
    validate_transfer_exponent,
)
from msl.hypothesis import Table, Threshold, Thresholds

UNIT = Thresholds((0.0, 1.0))
WIDE = Thresholds((0.0, 2.0))


def example_one():
    return ThresholdFamily(Uniform(0, 2), 0.5), ThresholdFamily(Uniform(0, 1), 0.5)


def example_two(rho):
    return ThresholdFamily(PowerLaw(rho), 0.0), ThresholdFamily(Uniform(0, 1), 0.0)


def test_sample_edge_cases(rng):
    assert sample(TwoPoint(0.5, 0.5), 0, rng).size == 0
    s = sample(TwoPoint(1.0, 1.0), 5, rng)
    x, y = s.expanded()
    assert x.tolist() == [1.0] * 5 and y.tolist() == [1] * 5


def test_two_point_mass_concentration(rng):
    n = 100_000
    x, _ = TwoPoint(0.5, 0.3).sample(n, rng).expanded()
    assert abs(np.mean(x == 1) - 0.5) <= 4 * math.sqrt(0.25 / n)


def test_finite_sampler_chi_square(rng):
    d = FinitePoints((0.1, 0.2, 0.3, 0.4), (0.9, 0.5, 0.2, 0.0))
    n = 100_000
    x, y = d.sample(n, rng).expanded()
    obs = np.array([[np.sum((x == i) & (y == s)) for s in (1, -1)] for i in range(4)]).ravel()
    exp = np.array([[m * e, m * (1 - e)] for m, e in zip(d.masses, d.etas)]).ravel() * n
    keep = exp > 0
    assert obs[~keep].sum() == 0
    assert chisquare(obs[keep], exp[keep]).pvalue > 1e-3


def test_threshold_sampler_chi_square(rng):
    d = ThresholdFamily(PowerLaw(2.0), 0.3, FlipProb(0.1))
    n = 100_000
    x, y = d.sample(n, rng).expanded()
    edges = np.linspace(0, 1, 11)
    obs, _ = np.histogram(x, edges)
    exp = np.diff(edges**2) * n
    assert chisquare(obs, exp).pvalue > 1e-3
    flipped = np.mean(y != Threshold(0.3).predict(x))
    assert abs(flipped - 0.1) < 4 * math.sqrt(0.09 / n)


@pytest.mark.parametrize("rho", [1.0, 1.5, 2.0, 3.0, 7.5])
def test_powerlaw_disagreement_matches_integration(rho):
    d = ThresholdFamily(PowerLaw(rho, 1.5), 0.0)
    f = PowerLaw(rho, 1.5).pdf
    for tau in (1e-3, 0.1, 0.77, 1.2):
        num, _ = quad(lambda t: float(f(t)), 0, tau, epsabs=0, epsrel=1e-13)
        assert d.disagreement(Threshold(tau), d.hstar) == pytest.approx(num, rel=1e-9)
        assert excess_risk(d, Thresholds((0.0, 1.5)), Threshold(tau)) == pytest.approx(num, rel=1e-9)


def test_noisy_threshold_risk_closed_form():
    d = ThresholdFamily(Uniform(0, 1), 0.5, FlipProb(0.2))
    assert d.risk(Threshold(0.5)) == pytest.approx(0.2)
    assert d.risk(Threshold(0.8)) == pytest.approx(0.2 + 0.6 * 0.3)
    assert excess_risk(d, UNIT, Threshold(0.8)) == pytest.approx(0.18)


def test_bayes_in_class():
    cls = two_point_class()
    assert TwoPoint(0.5, 0.8).bayes_in_class(cls) == Table((1, 1))
    P, _ = example_one()
    assert P.bayes_in_class(WIDE) == Threshold(0.5)
    P2, _ = example_two(2.0)
    assert P2.bayes_in_class(UNIT) == Threshold(0.0)


def test_unsupported_pairs_raise():
    with pytest.raises(UnsupportedFamily):
        TwoPoint(0.5, 0.5).risk(Threshold(0.1))
    with pytest.raises(UnsupportedFamily):
        ThresholdFamily(Uniform(), 0.5).risk(Table((1, 1)))


def test_bernstein_validator():
    d = TwoPoint(0.4, 0.7)
    assert validate_bernstein(d, two_point_class(), 2.0, 0.0).holds
    real = TwoPoint(0.4, 1.0)
    assert validate_bernstein(real, two_point_class(), 2.0, 1.0).holds
    # near-1/2 noise breaks the beta = 1 condition
    noisy = TwoPoint(0.4, 0.51)
    rep = validate_bernstein(noisy, two_point_class(), 2.0, 1.0)
    assert not rep.holds and rep.worst_ratio > 1
    assert rep.worst_hypothesis == Table((1, -1))


def test_transfer_validator_examples():
    P, D = example_one()
    assert validate_transfer_exponent(P, D, WIDE, 2.0, 1.0).holds
    assert validate_transfer_exponent(P, D, WIDE, 2.0, math.inf).holds
    P2, D2 = example_two(3.0)
    assert validate_transfer_exponent(P2, D2, UNIT, 2.0, 3.0).holds
    assert not validate_transfer_exponent(P2, D2, UNIT, 2.0, 2.8).holds


def test_transfer_is_asymmetric():
    P2, D2 = example_two(3.0)
    assert estimate_min_rho(D2, P2, UNIT, 2.0) <= 1.0 + 1e-3
    assert estimate_min_rho(P2, D2, UNIT, 2.0) == pytest.approx(3.0, rel=0.05)


@pytest.mark.parametrize(
    "dist",
    [
        ThresholdFamily(Uniform(0, 1), 0.5),
        ThresholdFamily(PowerLaw(2.0), 0.0),
        ThresholdFamily(Uniform(0, 1), 0.3, FlipProb(0.2)),
    ],
)
def test_self_transfer_exponent_is_one(dist):
    assert estimate_min_rho(dist, dist, UNIT, 2.0) == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize(
    "dist, cls",
    [
        (TwoPoint(0.4, 0.8), two_point_class()),
        (FinitePoints((0.5, 0.25, 0.25), (1.0, 0.9, 0.2)), lower_bound_class(2)),
    ],
)
def test_self_transfer_on_finite_support(dist, cls):
    # excess risks are bounded away from zero, so exponents below 1 also pass
    assert validate_transfer_exponent(dist, dist, cls, 2.0, 1.0).holds
    assert estimate_min_rho(dist, dist, cls, 2.0) <= 1.0 + 1e-3


def test_asymmetry_pair():
    P, D = make_asymmetry_pair(0.0, 1000, 0.08)
    assert P.mass_x1 == 1.0
    assert P.eta_x1 == pytest.approx(0.5 - 0.08 / math.sqrt(1000))
    cls = two_point_class()
    assert P.bayes_in_class(cls) == D.bayes_in_class(cls) == Table((1, -1))
    assert validate_bernstein(D, cls, 2.0, 0.0).holds
    with pytest.raises(ValueError):
        make_asymmetry_pair(0.0, 10, 0.2)


def test_lower_bound_family_structure():
    sig = (1, -1, 1)
    fam = make_lower_bound_family([1.0, 2.0, math.inf], 1.0, 0.1, 3, sig)
    assert fam[0].masses[0] == pytest.approx(0.9)
    assert fam[0].etas[1:].tolist() == [1.0, 0.0, 1.0]
    assert fam[2].masses.tolist() == [1.0, 0.0, 0.0, 0.0]
    cls = lower_bound_class(3)
    for d in fam[:2]:
        best = d.bayes_in_class(cls)
        assert best.labels[1:] == sig


@pytest.mark.parametrize("beta", [0.0, 0.3, 1.0])
def test_lower_bound_family_conditions(beta):
    sig = (1, -1, -1, 1)
    rhos = [1.0, 1.5, 2.0, 4.0, math.inf]
    fam = make_lower_bound_family(rhos + [1.0], beta, 0.2, 4, sig)
    cls = lower_bound_class(4)
    target = fam[-1]
    for d, r in zip(fam, rhos):
        assert validate_transfer_exponent(d, target, cls, 2.0, r).holds
        assert validate_bernstein(d, cls, 2.0, beta).holds
