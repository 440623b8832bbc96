#!/usr/bin/env python3
"""Tests for dioph.py: best approximations, omega estimators, continued fractions, extremality."""

import math
from fractions import Fraction

import numpy as np
import pytest

from cifs import middle_thirds, touching_binary
from dioph import (
    best_approx,
    continued_fraction,
    diophantine_report,
    extremality_experiment,
    named_point,
    omega_estimate,
)
from thermo import Atom, AtomicWeights, DensityWeights, GibbsWeights, Potential, conformal_weights

FIBONACCI = [1, 2, 3, 5, 8, 13, 21, 34, 55, 89]


def test_golden_records_are_fibonacci():
    records = best_approx(named_point("golden"), 100)
    assert [r.q for r in records] == FIBONACCI
    errors = [r.error for r in records]
    assert all(a > b for a, b in zip(errors, errors[1:]))


def test_exact_rational_hits():
    report = diophantine_report([0.5], 10)
    assert report.exact_rational_hit
    assert report.records[-1].q == 2
    assert report.omega_hat == math.inf
    pair = diophantine_report([1 / 2, 1 / 3], 10)
    assert pair.exact_rational_hit and pair.records[-1].q == 6
    assert pair.records[-1].p == (3, 2)


def test_golden_omega():
    omega, omega_mult = omega_estimate("golden", 10**5)
    assert omega == pytest.approx(2.0, abs=0.01)
    assert omega_mult == omega
    assert omega_estimate("golden", 999) == (2.0, 2.0)


def test_liouville_and_pair_floors():
    liouville = diophantine_report("liouville", 10**4)
    assert liouville.omega_ratio >= 2.99
    assert any(r.q == 100 for r in liouville.records)
    assert liouville.omega_hat > 2.2 and liouville.vwa
    pair = diophantine_report("sqrt2,sqrt3", 10**4)
    assert pair.dim == 2
    assert pair.omega_ratio >= 1.5
    assert pair.omega_hat >= 1.5 - 0.1
    assert omega_estimate("sqrt2,sqrt3", 10**4)[0] == pair.omega_hat
    assert pair.omega_mult_ratio >= pair.omega_ratio


def test_omega_never_decreases_and_keeps_the_dirichlet_floor():
    rng = np.random.default_rng(3)
    for d in (1, 2):
        for x in rng.uniform(0.01, 0.99, size=(10, d)):
            hats = [omega_estimate(x, q)[0] for q in (100, 1000, 5000, 10**4, 3 * 10**4)]
            assert all(a <= b for a, b in zip(hats, hats[1:]))
            assert hats[-1] >= 1 + 1 / d - 0.1
            ratios = [diophantine_report(x, q).omega_ratio for q in (100, 1000, 10**4)]
            assert all(a <= b for a, b in zip(ratios, ratios[1:]))
            assert ratios[-1] >= 1 + 1 / d - 0.1
    for name in ("pi", "liouville", "sqrt2"):
        hats = [omega_estimate(name, q)[0] for q in (10, 100, 1000, 10**4, 10**5)]
        assert all(a <= b for a, b in zip(hats, hats[1:]))
        assert min(hats) >= 2.0


def test_records_use_optimal_numerators():
    x = named_point("sqrt2,sqrt3")
    for r in best_approx(x, 2000):
        for i in range(2):
            for delta in (-1, 1):
                assert abs(x[i] - (r.p[i] + delta) / r.q) > abs(x[i] - r.p[i] / r.q)


def test_continued_fraction_examples():
    golden = continued_fraction("golden", 30)
    assert golden.quotients == [0] + [1] * 29
    third = continued_fraction(Fraction(1, 3))
    assert third.quotients == [0, 3] and third.terminated
    assert continued_fraction("1/3").quotients == [0, 3]
    assert continued_fraction(0.5).terminated
    assert continued_fraction(1 / 3).precision_limited


def test_pi_convergents_match_best_approximations():
    cf = continued_fraction("pi", 6)
    assert cf.quotients[:5] == [0, 7, 15, 1, 292]
    assert cf.convergents[3] == (16, 113)
    last = best_approx(named_point("pi"), 113)[-1]
    assert (last.p, last.q) == ((16,), 113)
    x = math.pi - 3
    for p, q in cf.convergents[1:5]:
        assert abs(x - p / q) < 1 / q**2


def test_convergents_are_best_approximations():
    rng = np.random.default_rng(7)
    for x in rng.uniform(0, 1, size=100):
        cf = continued_fraction(float(x), 40)
        convergent_qs = {q for _, q in cf.convergents if q <= 10**4}
        record_qs = {r.q for r in best_approx([x], 10**4)}
        assert convergent_qs <= record_qs


def test_liouville_continued_fraction_has_huge_quotient():
    cf = continued_fraction("liouville", 50)
    assert cf.terminated or len(cf.quotients) == 50
    assert max(cf.quotients) > 10**10


def test_named_point_errors():
    assert named_point("golden")[0] == pytest.approx((math.sqrt(5) - 1) / 2)
    assert len(named_point("sqrt2, pi")) == 2
    with pytest.raises(ValueError):
        named_point("not a number!")
    with pytest.raises(ValueError):
        named_point("I")
    with pytest.raises(ValueError):
        best_approx([0.3], 0)


def test_extremality_middle_thirds():
    cantor = middle_thirds()
    report = extremality_experiment(conformal_weights(cantor), cantor, n_points=200, q_max=10**4, seed=1)
    assert not report.downgraded
    assert report.depth >= 26
    assert report.fractions()[0.5] <= 0.05
    assert set(report.fractions()) == {0.1, 0.25, 0.5}
    assert len(report.rows()) == 200


def test_extremality_rational_atoms_are_exact_hits():
    binary = touching_binary()
    atoms = AtomicWeights(binary, [Atom((), (0,), 0.5), Atom((1,), (0,), 0.5)])
    report = extremality_experiment(atoms, binary, n_points=50, q_max=100)
    assert report.exact_hits == 50
    assert np.all(np.isinf(report.omegas))
    assert all(f == 1.0 for f in report.fractions().values())


def test_extremality_lebesgue_median():
    binary = touching_binary()
    report = extremality_experiment(DensityWeights(binary), binary, n_points=100, q_max=10**4, seed=2)
    assert report.noise_floor == 0.0
    assert 2.0 <= report.median <= 2.15


def test_extremality_downgraded_when_weights_too_shallow():
    binary = touching_binary()
    values = {(0, 0): 0.0, (0, 1): -1.0, (1, 0): -0.5, (1, 1): -0.2}
    gw = GibbsWeights(binary, Potential.tabulated(2, values), level=6)
    report = extremality_experiment(gw, binary, n_points=20, q_max=1000)
    assert report.depth == 6
    assert report.downgraded
    assert report.reliable_exponent < 3
