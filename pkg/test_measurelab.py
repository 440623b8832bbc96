#!/usr/bin/env python3
"""Tests for measurelab.py: mass brackets, local dimension, decay, escape."""

import math

import numpy as np
import pytest

from cifs import middle_thirds, reducible_plane, schottky_system, touching_binary, gauss_system
from measurelab import (
    DecayMode,
    DecayProbe,
    DegenerateProbeError,
    EscapeConfig,
    EventSet,
    Hyperplane,
    LevelError,
    Sphere,
    UndefinedDimensionError,
    ball_mass,
    decay_fit,
    dimension_zero_witness,
    escape_bound_check,
    federer_check,
    global_decay_scan,
    kappa_r_search,
    local_dimension,
    neighborhood_mass,
    probe_grid,
    probe_seed,
    sample_surfaces,
    thickening_mass,
)
from thermo import AtomicWeights, DensityWeights, GibbsWeights, Potential, conformal_weights

DELTA = math.log(2) / math.log(3)


@pytest.fixture(scope="module")
def cantor():
    return middle_thirds()


@pytest.fixture(scope="module")
def conformal(cantor):
    return conformal_weights(cantor)


@pytest.fixture(scope="module")
def binary():
    return touching_binary()


@pytest.fixture(scope="module")
def lebesgue(binary):
    return DensityWeights(binary)


@pytest.fixture(scope="module")
def schottky_weights():
    return conformal_weights(schottky_system(), level=10)


def test_ball_mass_examples(cantor, conformal):
    b = ball_mass(conformal, cantor, [0.0], 1 / 3, level=2)
    assert b.lower == pytest.approx(0.5) and b.upper == pytest.approx(0.5)
    assert ball_mass(conformal, cantor, [5.0], 1.0).upper == 0.0
    huge = ball_mass(conformal, cantor, [0.3], 10.0)
    assert huge.lower == pytest.approx(1.0) and huge.upper == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ball_mass(conformal, cantor, [0.0], 0.0)


def test_level_beyond_weight_table(binary):
    values = {(0, 0): 0.0, (0, 1): -1.0, (1, 0): -0.5, (1, 1): -0.2}
    gw = GibbsWeights(binary, Potential.tabulated(2, values), level=5)
    ball_mass(gw, binary, [0.5], 0.1, level=5)
    with pytest.raises(LevelError):
        ball_mass(gw, binary, [0.5], 0.1, level=6)


def test_neighborhood_examples(cantor, conformal):
    gap = neighborhood_mass(conformal, cantor, Hyperplane.point(0.5), 0.3, [0.5], 0.5)
    assert gap.upper == 0.0
    for n in range(1, 7):
        m = neighborhood_mass(conformal, cantor, Hyperplane.point(0.0), 2 * 3.0**-n, [0.5], 0.5)
        assert m.lower == pytest.approx(2.0**-n) and m.upper == pytest.approx(2.0**-n)
    wide = neighborhood_mass(conformal, cantor, Hyperplane.point(0.3), 10.0, [0.2], 0.3, level=10)
    ball = ball_mass(conformal, cantor, [0.2], 0.3, level=10)
    assert (wide.lower, wide.upper) == pytest.approx((ball.lower, ball.upper))


def test_brackets_tighten_under_refinement(cantor, schottky_weights):
    rng = np.random.default_rng(4)
    skew = GibbsWeights(cantor, Potential.bernoulli([1 / 3, 2 / 3]))
    sys2 = schottky_weights.system
    for _ in range(10):
        x, rho = rng.uniform(0, 1, size=1), rng.uniform(0.01, 0.4)
        coarse, fine = ball_mass(skew, cantor, x, rho, level=4), ball_mass(skew, cantor, x, rho, level=9)
        assert coarse.lower <= fine.lower + 1e-12 and fine.upper <= coarse.upper + 1e-12
        assert fine.lower <= fine.upper
        z, r = rng.uniform(-0.6, 0.6, size=2), rng.uniform(0.05, 0.5)
        coarse, fine = ball_mass(schottky_weights, sys2, z, r, level=3), ball_mass(schottky_weights, sys2, z, r, level=6)
        assert coarse.lower <= fine.lower + 1e-12 and fine.upper <= coarse.upper + 1e-12


def test_neighborhood_monotone_in_beta(cantor, conformal):
    rng = np.random.default_rng(8)
    for _ in range(10):
        c, x = rng.uniform(0, 1), rng.uniform(0, 1, size=1)
        masses = [neighborhood_mass(conformal, cantor, Hyperplane.point(c), b, x, 0.4, level=8).value
                  for b in (0.01, 0.05, 0.1, 0.3, 1.0)]
        assert all(a <= b + 1e-12 for a, b in zip(masses, masses[1:]))


def test_local_dimension_of_typical_cantor_points(cantor, conformal):
    pts, _ = conformal.sample_points(np.random.default_rng(2), 5, 40)
    rho = [0.5 * 3.0**-n for n in range(1, 21)]
    slopes = [local_dimension(conformal, cantor, p, rho).slope for p in pts]
    assert np.median(slopes) == pytest.approx(DELTA, abs=0.03)


def test_local_dimension_point_mass_and_lebesgue(cantor, binary, lebesgue):
    rho = [2.0**-k for k in range(1, 11)]
    point = GibbsWeights(cantor, Potential.bernoulli([1, 0]))
    assert local_dimension(point, cantor, [0.0], rho).slope == pytest.approx(0.0, abs=1e-12)
    atom = AtomicWeights.point_mass(cantor, (0,))
    assert local_dimension(atom, cantor, [0.0], rho).slope == pytest.approx(0.0, abs=1e-12)
    fit = local_dimension(lebesgue, binary, [0.5], [2.0**-k for k in range(2, 13)])
    assert fit.slope == pytest.approx(1.0, abs=0.01)


def test_local_dimension_undefined_in_a_gap(cantor, conformal):
    with pytest.raises(UndefinedDimensionError):
        local_dimension(conformal, cantor, [0.5], [0.1, 0.05, 0.01])


def test_federer_examples(cantor, conformal, binary, lebesgue):
    centers, _ = conformal.sample_points(np.random.default_rng(6), 10, 40)
    report = federer_check(conformal, cantor, 3.0, centers, [3.0**-n for n in range(1, 7)])
    assert report.skipped == 0
    assert report.worst_ratio <= 4.0
    flat = federer_check(lebesgue, binary, 2.0, np.array([[0.0], [0.25], [0.5], [0.9], [1.0]]),
                         [2.0**-k for k in range(1, 9)])
    assert flat.worst_ratio <= 2.0 + 1e-9


def test_federer_fails_for_skewed_measure_on_touching_maps(binary):
    skew = GibbsWeights(binary, Potential.bernoulli([1 / 3, 2 / 3]))

    def worst(n_max):
        centers = np.array([[0.5 + 2.0**-n] for n in range(2, n_max + 1)])
        return federer_check(skew, binary, 2.0, centers, [2.0**-n for n in range(2, n_max + 1)]).worst_ratio

    shallow, deep = worst(6), worst(10)
    assert deep >= shallow
    assert deep > 50.0


def test_decay_fit_middle_thirds_absolute(cantor, conformal):
    betas = [3.0**-k for k in range(1, 8)]
    centers = np.array([[0.0], [2 / 3]])
    # balls three times smaller around the same centres see the same ratios
    finer = probe_grid(cantor, DecayMode.ABSOLUTE, centers, [3.0**-4, 3.0**-5], betas)
    report = decay_fit(conformal, cantor, DecayMode.ABSOLUTE, centers=centers,
                       rho_grid=[3.0**-n for n in range(1, 4)], beta_grid=betas, holdout=finer)
    assert report.alpha >= 0.55
    assert report.alpha <= DELTA + 0.05
    assert len(report.holdout) == len(finer)
    assert report.violations == 0 and report.passed
    for p in report.probes:
        if not p.degenerate:
            assert p.ratio <= report.C1 * p.beta**report.alpha * (1 + 1e-9)


def test_decay_fit_takes_the_worst_surface_per_beta(binary, lebesgue):
    probes = [DecayProbe((0.5,), 0.25, 2.0**-k, Hyperplane.point(0.5)) for k in range(2, 7)]
    probes += [DecayProbe((0.5,), 0.25, 2.0**-k, Sphere((0.5,), 0.1)) for k in range(2, 7)]
    report = decay_fit(lebesgue, binary, "absolute", probes=probes)
    point_ratios = [p.ratio for p in report.probes[:5]]
    assert point_ratios == pytest.approx([2.0**-k for k in range(2, 7)])
    # the sphere is two points in d = 1, so its thickening holds twice the mass
    assert report.alpha == pytest.approx(1.0, abs=1e-9)
    assert report.C1 == pytest.approx(2.0, rel=1e-9)


def test_decay_fit_counts_held_out_violations(binary, lebesgue):
    probes = [DecayProbe((x,), 0.25, 2.0**-k, Hyperplane.point(x + 0.125))
              for x in (0.0, 0.5) for k in range(2, 9)]
    holdout = [DecayProbe((1.0,), 0.25, 2.0**-3, Hyperplane.point(0.875)),
               DecayProbe((-0.2,), 0.25, 2.0**-3, Hyperplane.point(0.0))]
    report = decay_fit(lebesgue, binary, "absolute", probes=probes, holdout=holdout)
    assert report.alpha == pytest.approx(1.0, abs=1e-9)
    assert report.holdout[0].ratio == pytest.approx(0.25)
    assert report.holdout[1].ratio == pytest.approx(0.625)
    assert report.violations == 1
    assert not report.passed
    assert [r["set"] for r in report.rows()].count("holdout") == 2


def test_decay_fit_sampled_centres_are_reproducible(cantor, conformal):
    kwargs = dict(rho_grid=[1 / 3], beta_grid=[3.0**-k for k in range(1, 5)], seed=5)
    first = decay_fit(conformal, cantor, DecayMode.ABSOLUTE, **kwargs)
    second = decay_fit(conformal, cantor, DecayMode.ABSOLUTE, **kwargs)
    assert first.rows() == second.rows()
    assert (first.alpha, first.C1, first.violations) == (second.alpha, second.C1, second.violations)
    assert first.holdout and first.alpha > 0
    held = {p.center for p in first.holdout}
    assert held.isdisjoint({p.center for p in first.probes})
    for p in first.probes:
        if not p.degenerate:
            assert p.ratio <= first.C1 * p.beta**first.alpha * (1 + 1e-9)


def test_decay_fit_fails_for_entropy_zero_measure(cantor):
    orbit = AtomicWeights.periodic_orbit(cantor, (0, 1))
    centers = np.array([orbit.atom_point(a) for a in orbit.atoms])
    report = decay_fit(orbit, cantor, "quasi", gamma=1.0, centers=centers,
                       rho_grid=[2.0**-k for k in range(1, 7)])
    assert report.alpha <= 0.0
    assert not report.passed


def test_decay_fit_lebesgue_point(binary, lebesgue):
    probes = []
    for x, rho in ((0.0, 0.25), (0.5, 0.25)):
        for k in range(2, 9):
            probes.append(DecayProbe((x,), rho, 2.0**-k, Hyperplane.point(x + rho / 2)))
    report = decay_fit(lebesgue, binary, "absolute", probes=probes)
    assert report.alpha == pytest.approx(1.0, abs=1e-9)
    assert report.C1 == pytest.approx(2.0, rel=1e-9)
    assert report.worst.center == (0.0,)


def test_decay_fit_degenerate(binary, lebesgue):
    probes = [DecayProbe((5.0,), 0.25, 0.5, Hyperplane.point(5.0))]
    with pytest.raises(DegenerateProbeError):
        decay_fit(lebesgue, binary, "absolute", probes=probes)


def test_decay_fit_decaying_mode_uses_support_samples(cantor, conformal):
    report = decay_fit(conformal, cantor, DecayMode.DECAYING, centers=np.array([[0.0]]),
                       rho_grid=[1 / 3], beta_grid=[3.0**-k for k in range(1, 5)])
    assert all(p.samples > 0 for p in report.probes)
    assert report.alpha > 0


def test_global_decay_middle_thirds(cantor, conformal):
    surfaces = sample_surfaces(cantor, 100, np.random.default_rng(0))
    report = global_decay_scan(conformal, cantor, surfaces, [3.0**-k for k in range(1, 9)])
    assert 0.3 < report.exponent < 1.0
    assert not report.irreducibility_witness


def test_global_decay_flags_reducible_plane():
    plane = reducible_plane()
    gw = conformal_weights(plane)
    axis = Hyperplane((0.0, 1.0), 0.0)
    surfaces = [axis] + sample_surfaces(plane, 5, np.random.default_rng(1))
    report = global_decay_scan(gw, plane, surfaces, [2.0**-k for k in range(1, 7)])
    assert report.exponent == pytest.approx(0.0, abs=1e-9)
    assert report.irreducibility_witness
    assert report.worst_surface == axis


def test_global_decay_schottky_positive(schottky_weights):
    sys = schottky_weights.system
    surfaces = sample_surfaces(sys, 10, np.random.default_rng(3))
    report = global_decay_scan(schottky_weights, sys, surfaces, [2.0**-k for k in range(1, 6)], level=6)
    assert report.exponent > 0


def test_kappa_r_search(cantor, conformal):
    cfg = kappa_r_search(conformal, cantor, r_max=1)
    assert cfg is not None and cfg.r == 1 and cfg.kappa == 0.125
    plane = reducible_plane()
    assert kappa_r_search(conformal_weights(plane), plane, r_max=2, depth=2) is None
    gauss = gauss_system(20)
    cfg = kappa_r_search(DensityWeights(gauss, "gauss"), gauss, r_max=1, depth=2, max_cylinders=40)
    assert cfg is not None and cfg.kappa > 0


def test_escape_bound_middle_thirds(cantor, conformal):
    pts, _ = conformal.sample_points(np.random.default_rng(9), 3, 40)
    for x in pts:
        for k in range(1, 13):
            cfg = EscapeConfig(0.125, 1, k=k, rho=3.0 ** -(k - 1))
            report = escape_bound_check(conformal, cantor, cfg, Hyperplane.point(float(x[0])), trials=10_000)
            assert report.trials == 10_000
            assert report.observed <= 0.875**k + 3 * report.stderr
            assert report.passed
    eight = escape_bound_check(conformal, cantor, EscapeConfig(0.125, 1, k=8, rho=3.0**-7),
                               Hyperplane.point(0.0), trials=2000)
    assert eight.bound == pytest.approx(0.875**8)
    assert eight.observed <= 0.344


def test_escape_bound_is_reproducible(cantor, conformal):
    cfg = EscapeConfig(0.125, 1, k=5, rho=3.0**-4)
    runs = [escape_bound_check(conformal, cantor, cfg, Hyperplane.point(0.25), trials=5000, seed=11)
            for _ in range(2)]
    assert runs[0] == runs[1]


def test_escape_bound_edge_cases(cantor, conformal):
    trivial = escape_bound_check(conformal, cantor, EscapeConfig(0.125, 1, k=0, rho=0.1),
                                 Hyperplane.point(0.0), trials=500)
    assert trivial.bound == 1.0 and trivial.passed
    far = escape_bound_check(conformal, cantor, EscapeConfig(0.125, 1, k=2, rho=0.1),
                             Hyperplane.point(5.0), omega=(0, 1), trials=500)
    assert far.observed == 0.0
    with pytest.raises(ValueError):
        escape_bound_check(conformal, cantor, EscapeConfig(0.125, 1), Hyperplane.point(0.0), trials=99)
    with pytest.raises(ValueError):
        EscapeConfig(1.5, 1)


def test_dimension_zero_witness_grows_without_bound(cantor):
    atom = AtomicWeights.point_mass(cantor, (0,))
    rho = [2.0**-k for k in (5, 20, 50, 100)]
    rows = dimension_zero_witness(atom, cantor, [0.0], rho, [0.1, 0.5, 1.0])
    for row in rows:
        assert row["ratio"] == pytest.approx(row["rho"] ** -row["alpha"], rel=1e-9)
    smallest = [r for r in rows if r["rho"] == 2.0**-100 and r["alpha"] == 0.1][0]
    assert smallest["ratio"] > 1e3


def test_event_sets_restrict_mass(cantor, conformal, binary, lebesgue):
    left = EventSet([(0,)])
    assert ball_mass(conformal, cantor, [0.5], 1.0, event=left).value == pytest.approx(0.5)
    assert ball_mass(lebesgue, binary, [0.5], 1.0, event=EventSet([(1,), (1, 0)])).value == pytest.approx(0.5)
    orbit = AtomicWeights.periodic_orbit(cantor, (0, 1))
    assert ball_mass(orbit, cantor, [0.5], 1.0, event=left).value == pytest.approx(0.5)
    assert EventSet([(1,), (1, 0)]).words == ((1,),)


def test_surfaces_and_seeds(cantor):
    plane = reducible_plane()
    for s in sample_surfaces(plane, 20, np.random.default_rng(0), kind="mixed"):
        if isinstance(s, Hyperplane):
            assert np.linalg.norm(s.normal) == pytest.approx(1.0)
        else:
            assert s.radius > 0
    with pytest.raises(ValueError):
        sample_surfaces(cantor, 3, np.random.default_rng(0), kind="torus")
    with pytest.raises(ValueError):
        Hyperplane((0.5, 0.5), 0.0)
    with pytest.raises(ValueError):
        Sphere((0.0,), 0.0)
    assert probe_seed(1, "a", 0.5) == probe_seed(1, "a", 0.5)
    assert probe_seed(1, "a", 0.5) != probe_seed(2, "a", 0.5)
    band = thickening_mass(conformal_weights(cantor), cantor, Sphere((0.5,), 0.5), 1e-3)
    assert band.upper > 0


def test_periodic_word_is_not_quasi_decaying(cantor):
    orbit = AtomicWeights.periodic_orbit(cantor, (0, 1))
    x = orbit.atom_point(orbit.atoms[0])
    alphas = [round(0.1 * i, 1) for i in range(1, 11)]
    dyadic = [2.0**-k for k in range(2, 21)]
    rows = dimension_zero_witness(orbit, cantor, x, dyadic, alphas)
    for alpha in alphas:
        ratios = [r["ratio"] for r in rows if r["alpha"] == alpha]
        assert ratios == pytest.approx([rho**-alpha for rho in dyadic], rel=1e-9)
        if alpha >= 0.5:
            assert max(ratios) > 1e3
    # 2^(20 alpha) stays below 10^3 for alpha < 0.5; the grid has to run further down
    deeper = dimension_zero_witness(orbit, cantor, x, [2.0**-k for k in range(21, 101)], alphas)
    for alpha in alphas:
        assert max(r["ratio"] for r in deeper if r["alpha"] == alpha) > 1e3
