#!/usr/bin/env python3
"""Tests for cifs.py: composition, coding, diameters, axioms, system files."""

import json
import math
from fractions import Fraction

import numpy as np
import pytest

from cifs import (
    BoxSeed,
    LetterOutOfRangeError,
    OutsideSeedError,
    SystemDefinitionError,
    apply_word,
    coding_point,
    coding_points,
    cylinder_diameter,
    derivative_bounds,
    gauss_system,
    load_system,
    middle_thirds,
    reducible_plane,
    save_system,
    schottky_system,
    similarity_system,
    system_from_dict,
    system_to_dict,
    touching_binary,
    validate,
)
from symbolic import EmptyWordError

GOLDEN = (math.sqrt(5) - 1) / 2


@pytest.fixture(scope="module")
def cantor():
    return middle_thirds()


@pytest.fixture(scope="module")
def gauss():
    return gauss_system(50)


def test_apply_word_examples(cantor, gauss):
    assert apply_word(cantor, (0, 0), 1.0)[0] == pytest.approx(1 / 9)
    assert apply_word(cantor, (), 0.4)[0] == pytest.approx(0.4)
    assert apply_word(gauss, (1, 1), 0.0)[0] == pytest.approx(0.5)


def test_apply_word_composes_last_letter_first(cantor):
    # u_0(u_1(1)) = (1/3 + 2/3) / 3
    assert apply_word(cantor, (0, 1), 1.0)[0] == pytest.approx(1 / 3)
    assert apply_word(cantor, (1, 0), 1.0)[0] == pytest.approx(2 / 3 + 1 / 9)


def test_apply_word_errors(cantor, gauss):
    with pytest.raises(LetterOutOfRangeError):
        apply_word(cantor, (0, 2), 0.5)
    with pytest.raises(LetterOutOfRangeError):
        apply_word(gauss, (0,), 0.5)
    with pytest.raises(OutsideSeedError):
        apply_word(cantor, (0,), 1.5)


def test_coding_point(cantor, gauss):
    res = coding_point(cantor, (0,) * 10)
    assert res.point[0] == pytest.approx(0.0, abs=1e-4)
    assert res.error_radius == pytest.approx(3.0**-10)
    res = coding_point(cantor, (1, 1))
    assert 8 / 9 <= res.point[0] <= 1.0
    assert res.error_radius == pytest.approx(1 / 9)
    res = coding_point(gauss, (1,) * 20)
    assert abs(res.point[0] - GOLDEN) < 1e-8
    with pytest.raises(EmptyWordError):
        coding_point(cantor, ())


def test_cylinder_diameter_and_derivatives(cantor, gauss):
    for n in range(6):
        assert cylinder_diameter(cantor, (1,) * n) == pytest.approx(3.0**-n)
    assert derivative_bounds(cantor, (0, 1, 1, 0)) == pytest.approx((3.0**-4, 3.0**-4))
    lo, hi = derivative_bounds(gauss, (2,))
    assert lo == pytest.approx(1 / 9) and hi == pytest.approx(1 / 4)
    # cylinder [1,1] of the Gauss system is [1/2, 2/3]
    true_diam = 2 / 3 - 1 / 2
    d = cylinder_diameter(gauss, (1, 1))
    assert true_diam - 1e-12 <= d <= gauss.distortion_constant * true_diam


def test_moebius_derivative_bounds_against_dense_grid():
    sys = schottky_system()
    for w in [(0,), (1, 2), (2, 0, 1)]:
        lo, hi = derivative_bounds(sys, w)
        pts = sys.seed.grid(81)
        z = pts[:, 0] + 1j * pts[:, 1]
        M = np.eye(2, dtype=complex)
        for a in w:
            M = M @ sys.branches[a].matrix()
        vals = abs(np.linalg.det(M)) / np.abs(M[1, 0] * z + M[1, 1]) ** 2
        assert lo <= vals.min() * (1 + 1e-9)
        assert hi >= vals.max() * (1 - 1e-9)
        assert vals.min() <= lo * 1.05 and vals.max() >= hi / 1.05


def test_monotone_and_geometric_decay():
    rng = np.random.default_rng(11)
    for sys in (middle_thirds(), gauss_system(20), schottky_system()):
        s_max = sys.s_max
        first = sys.first_letter
        for _ in range(40):
            n = int(rng.integers(1, 6))
            w = tuple(int(a) for a in rng.integers(first, first + sys.alphabet_size, size=n))
            ext = w + tuple(int(a) for a in rng.integers(first, first + sys.alphabet_size, size=3))
            d_w, d_ext = cylinder_diameter(sys, w), cylinder_diameter(sys, ext)
            assert d_ext <= d_w * (1 + 1e-9)
            assert d_w <= s_max ** len(w) * sys.seed.diameter * (1 + 1e-9)
            outer, inner = coding_point(sys, w), coding_point(sys, ext)
            assert np.linalg.norm(outer.point - inner.point) <= outer.error_radius * (1 + 1e-9)


def test_similarity_exactness():
    sys = similarity_system("two", [Fraction(1, 4), Fraction(1, 2)], [(0,), (Fraction(1, 2),)])
    lo, hi = derivative_bounds(sys, (0, 1, 1))
    assert lo == hi == pytest.approx(1 / 16)
    assert cylinder_diameter(sys, (0, 1, 1, 0)) == pytest.approx(
        cylinder_diameter(sys, (0, 1)) * cylinder_diameter(sys, (1, 0)))


def test_coding_points_vectorised(cantor):
    letters = np.array([[0, 0, 1], [1, 1, 1]])
    pts, radii = coding_points(cantor, letters)
    for row, p, r in zip(letters, pts, radii):
        ref = coding_point(cantor, tuple(row))
        assert p[0] == pytest.approx(ref.point[0])
        assert r == pytest.approx(ref.error_radius)


def test_validate_middle_thirds(cantor):
    report = validate(cantor)
    assert report.passed
    assert report.check("uniform_contraction").value == pytest.approx(1 / 3)
    ssc = report.check("strong_separation")
    assert ssc.passed and ssc.value == pytest.approx(1 / 3)


def test_validate_touching_binary():
    report = validate(touching_binary())
    assert report.check("open_set_condition").passed
    assert not report.check("strong_separation").passed


def test_validate_gauss(gauss):
    report = validate(gauss)
    assert report.check("uniform_contraction").passed
    assert report.check("uniform_contraction").value == pytest.approx(1 / 4)
    decay = report.check("contraction_decay")
    assert decay.passed and decay.value == pytest.approx(1 / 50**2)
    assert report.check("open_set_condition").passed


def test_validate_schottky_and_plane():
    report = validate(schottky_system())
    assert report.passed and report.check("strong_separation").passed
    assert 2.0 <= schottky_system().distortion_constant < 100.0
    assert validate(reducible_plane()).check("strong_separation").passed


def test_bad_definitions():
    with pytest.raises(SystemDefinitionError):
        similarity_system("bad", [1.5], [(0,)])
    with pytest.raises(SystemDefinitionError):
        BoxSeed((1,), (0,))
    with pytest.raises(SystemDefinitionError):
        system_from_dict({"kind": "julia", "seed": {"type": "box", "lo": [0], "hi": [1]}})
    with pytest.raises(SystemDefinitionError):
        system_from_dict({"kind": "similarity", "seed": {"type": "polygon"}, "maps": []})
    with pytest.raises(SystemDefinitionError, match="ratio"):
        system_from_dict({"seed": {"type": "box", "lo": [0], "hi": [1]}, "maps": [{"translation": [0]}]})
    with pytest.raises(SystemDefinitionError, match="hi"):
        system_from_dict({"seed": {"type": "box", "lo": [0]}, "maps": []})
    with pytest.raises(SystemDefinitionError):
        system_from_dict([{"ratio": "1/3"}])


def test_rational_round_trip(tmp_path, cantor):
    path = tmp_path / "cantor.json"
    save_system(cantor, path)
    raw = json.loads(path.read_text())
    assert raw["maps"][1]["translation"] == ["2/3"]
    again = load_system(path)
    assert again == cantor
    assert system_to_dict(again) == raw
