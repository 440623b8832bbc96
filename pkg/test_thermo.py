#!/usr/bin/env python3
"""Tests for thermo.py: pressure, Bowen dimension, measures, h/chi."""

import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from cifs import (
    SystemDefinitionError,
    gauss_system,
    load_system,
    middle_thirds,
    schottky_system,
    similarity_system,
    touching_binary,
)
from thermo import (
    AtomicWeights,
    DensityWeights,
    DivergentPressureError,
    Estimate,
    GibbsWeights,
    InapplicableFormulaError,
    IrregularSystemError,
    Potential,
    bowen_dimension,
    conformal_weights,
    entropy,
    gibbs_ratio_check,
    hofbauer_dimension,
    lyapunov,
    measure_from_spec,
    pressure,
    thermo_report,
)

LOG2_LOG3 = math.log(2) / math.log(3)
BUNDLED = sorted(p.name for p in (Path(__file__).parent / "configs").glob("*.json")
                 if json.loads(p.read_text()).get("kind") != "toral")


@pytest.fixture(scope="module")
def cantor():
    return middle_thirds()


@pytest.fixture(scope="module")
def binary():
    return touching_binary()


def test_pressure_examples(cantor, binary):
    assert pressure(binary, Potential.bernoulli([1 / 3, 2 / 3])).value == pytest.approx(0.0, abs=1e-12)
    assert pressure(cantor, Potential.geometric(0.0)).value == pytest.approx(math.log(2))
    assert pressure(cantor, Potential.geometric(LOG2_LOG3)).value == pytest.approx(0.0, abs=1e-12)
    assert pressure(cantor, Potential.tabulated(1, {(0,): 0.0, (1,): 0.0})).value == pytest.approx(math.log(2))


def test_pressure_divergent_for_small_s():
    with pytest.raises(DivergentPressureError):
        pressure(gauss_system(20), Potential.geometric(0.4))


def test_moebius_pressure_is_bracketed():
    sys = schottky_system()
    coarse, fine = pressure(sys, Potential.geometric(0.5), 4), pressure(sys, Potential.geometric(0.5), 8)
    assert coarse.error > 0 and fine.error > 0
    assert fine.error <= coarse.error
    assert abs(fine.value - coarse.value) <= coarse.error + fine.error


def test_bowen_dimension_examples(cantor, binary):
    assert bowen_dimension(cantor).value == pytest.approx(0.6309297536, abs=1e-6)
    assert bowen_dimension(binary).value == pytest.approx(1.0, abs=1e-9)
    quarter = similarity_system("quarter", [Fraction(1, 4)] * 2, [(0,), (Fraction(3, 4),)])
    assert bowen_dimension(quarter).value == pytest.approx(0.5, abs=1e-9)
    assert abs(pressure(cantor, Potential.geometric(bowen_dimension(cantor).value)).value) < 1e-9


def test_bowen_dimension_irregular():
    crowded = similarity_system("crowded", [0.5] * 3, [(0,), (0.25,), (0.5,)])
    with pytest.raises(IrregularSystemError):
        bowen_dimension(crowded)


def test_bernoulli_gibbs_constant_is_one(binary):
    gw = GibbsWeights(binary, Potential.bernoulli([1 / 3, 2 / 3]))
    assert gw.is_product and gw.distortion_certificate == 1.0
    check = gibbs_ratio_check(binary, gw, pairs=200)
    assert check.passed
    assert check.min_ratio == pytest.approx(1.0) and check.max_ratio == pytest.approx(1.0)
    assert gw.weight((1, 1, 0)) == pytest.approx(4 / 27)


def test_conformal_weights_on_moebius_system():
    gw = conformal_weights(schottky_system(), level=8)
    assert not gw.is_product
    assert sum(gw.child_weights(())) == pytest.approx(1.0, abs=1e-12)
    for w in [(0,), (1, 2), (2, 0, 1)]:
        assert gw.child_weights(w).sum() == pytest.approx(gw.weight(w), rel=1e-12)
    assert gw.distortion_certificate >= 1.0
    assert gibbs_ratio_check(gw.system, gw, pairs=200).passed


def test_tabulated_two_letter_potential(binary):
    values = {(0, 0): 0.0, (0, 1): -1.0, (1, 0): -0.5, (1, 1): -0.2}
    gw = GibbsWeights(binary, Potential.tabulated(2, values), level=10)
    assert gw.weight(()) == 1.0
    assert gw.child_weights((0, 1)).sum() == pytest.approx(gw.weight((0, 1)))
    assert gibbs_ratio_check(binary, gw, pairs=200).passed


@pytest.mark.parametrize("config", BUNDLED)
def test_gibbs_ratios_on_bundled_systems(config):
    sys = load_system(Path(__file__).parent / "configs" / config)
    gw = conformal_weights(sys)
    check = gibbs_ratio_check(sys, gw, pairs=1000)
    assert check.pairs == 1000
    assert check.passed, (check.min_ratio, check.max_ratio, check.certificate)
    if not sys.is_infinite:
        uniform = GibbsWeights(sys, Potential.bernoulli([1.0] * sys.alphabet_size))
        flat = gibbs_ratio_check(sys, uniform, pairs=1000)
        assert uniform.distortion_certificate == 1.0 and flat.passed
        assert flat.min_ratio == pytest.approx(1.0) and flat.max_ratio == pytest.approx(1.0)


def test_entropy_examples(cantor, binary):
    assert entropy(GibbsWeights(binary, Potential.bernoulli([1, 1]))).value == pytest.approx(math.log(2))
    h = entropy(GibbsWeights(binary, Potential.bernoulli([1 / 3, 2 / 3]))).value
    assert h == pytest.approx(math.log(3) - 2 / 3 * math.log(2), abs=1e-12)
    assert h == pytest.approx(0.6365, abs=1e-4)
    assert entropy(AtomicWeights.point_mass(cantor, (0,))).value == 0.0
    assert entropy(GibbsWeights(binary, Potential.bernoulli([1, 0]))).value == 0.0


def test_lyapunov_examples(cantor, binary):
    assert lyapunov(binary, DensityWeights(binary)).value == pytest.approx(math.log(2))
    assert lyapunov(cantor, conformal_weights(cantor)).value == pytest.approx(math.log(3))
    gauss = gauss_system(50)
    chi = lyapunov(gauss, DensityWeights(gauss, "gauss"), samples=40000, seed=5)
    assert chi.value == pytest.approx(math.pi**2 / (6 * math.log(2)), abs=0.05)
    assert "divergent" not in chi.flags


def test_hofbauer_examples(cantor, binary):
    assert hofbauer_dimension(DensityWeights(binary)).value == pytest.approx(1.0, abs=1e-9)
    skew = GibbsWeights(binary, Potential.bernoulli([1 / 3, 2 / 3]))
    assert hofbauer_dimension(skew).value == pytest.approx(0.9183, abs=1e-4)
    assert hofbauer_dimension(conformal_weights(cantor)).value == pytest.approx(LOG2_LOG3, abs=1e-3)


def test_hofbauer_inapplicable(binary):
    gw = GibbsWeights(binary, Potential.bernoulli([1, 1]))
    with pytest.raises(InapplicableFormulaError):
        hofbauer_dimension(gw, chi=Estimate(0.0))
    with pytest.raises(InapplicableFormulaError):
        hofbauer_dimension(gw, chi=Estimate(3.0, flags=("divergent",)))


def test_atomic_weights(cantor, binary):
    orbit = AtomicWeights.periodic_orbit(cantor, (0, 1))
    assert orbit.weight((0,)) == pytest.approx(0.5)
    assert orbit.weight((0, 1, 0)) == pytest.approx(0.5)
    assert orbit.weight((0, 0)) == 0.0
    atom = AtomicWeights.point_mass(binary, (0,), prefix=(1,))
    assert atom.atom_point(atom.atoms[0])[0] == 0.5
    pts, radii = atom.sample_points(np.random.default_rng(0), 5, 10)
    assert np.all(pts[:, 0] == 0.5) and np.all(radii == 0)


def test_density_weights():
    gauss = gauss_system(50)
    dw = DensityWeights(gauss, "gauss")
    assert dw.weight((1,)) == pytest.approx(1 - math.log2(1.5))
    assert dw.tail_mass == pytest.approx(math.log2(52 / 51))
    words = dw.sample_letters(np.random.default_rng(1), 50, 3, prefix=(2,))
    assert np.all(words[:, 0] == 2)


def test_measure_from_spec(cantor, binary):
    assert measure_from_spec(binary, {"type": "bernoulli", "weights": ["1/3", "2/3"]}).weight((1,)) \
        == pytest.approx(2 / 3)
    assert measure_from_spec(cantor, {"type": "periodic", "word": "0,1"}).weight((1,)) == pytest.approx(0.5)
    assert isinstance(measure_from_spec(binary, {"type": "density", "density": "lebesgue"}), DensityWeights)
    assert measure_from_spec(cantor, None).name == "conformal"
    with pytest.raises(ValueError):
        measure_from_spec(cantor, {"type": "fractal-dust"})
    with pytest.raises(SystemDefinitionError, match="malformed"):
        measure_from_spec(cantor, {"type": "geometric"})
    with pytest.raises(SystemDefinitionError):
        measure_from_spec(binary, {"type": "atoms", "atoms": [{"mass": 1}]})


def test_thermo_report_rows(cantor):
    report = thermo_report(cantor, conformal_weights(cantor), level=8, samples=1000)
    rows = {r["quantity"]: r for r in report.rows()}
    assert rows["delta"]["value"] == pytest.approx(0.630930, abs=1e-6)
    assert rows["entropy"]["value"] == pytest.approx(math.log(2))
    assert set(rows["delta"]) == {"quantity", "value", "error", "level"}
