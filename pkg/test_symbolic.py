#!/usr/bin/env python3
"""Tests for symbolic.py: words, prefixes, shift, ultrametric."""

import numpy as np
import pytest

from symbolic import (
    EmptyWordError,
    InvalidWordError,
    SymbolicMetricParams,
    all_words,
    as_word,
    is_prefix,
    longest_common_prefix,
    periodic_extension,
    shift,
    symbolic_dist,
)


def test_longest_common_prefix_examples():
    assert longest_common_prefix((0, 1, 1), (0, 1, 0)) == (0, 1)
    assert longest_common_prefix((2, 2), (2, 2)) == (2, 2)
    assert longest_common_prefix((0, 5, 5), (1, 5, 5)) == ()


def test_symbolic_dist_examples():
    half = SymbolicMetricParams(0.5)
    assert symbolic_dist((0, 1), (0, 0), half) == 0.5
    assert symbolic_dist((0, 1), (0, 1), half) == 0.25
    assert symbolic_dist((0, 1), (1, 1), SymbolicMetricParams(1 / 3)) == 1.0


def test_metric_params_reject_bad_lambda():
    for lam in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            SymbolicMetricParams(lam)


def test_shift():
    assert shift((3, 1, 4)) == (1, 4)
    assert shift((7,)) == ()
    w = (1, 2, 3, 4)
    for _ in range(len(w)):
        w = shift(w)
    assert w == ()
    with pytest.raises(EmptyWordError):
        shift(())


def test_as_word_validation():
    assert as_word([0, 2, 1]) == (0, 2, 1)
    with pytest.raises(InvalidWordError):
        as_word([0, -1])
    with pytest.raises(InvalidWordError):
        as_word([0, 3], alphabet_size=3)
    with pytest.raises(InvalidWordError):
        as_word([0.5])


def test_ultrametric_on_random_triples():
    rng = np.random.default_rng(7)
    params = SymbolicMetricParams(0.4)
    for _ in range(500):
        a, b, c = (tuple(rng.integers(0, 2, size=6)) for _ in range(3))
        assert symbolic_dist(a, c, params) <= max(symbolic_dist(a, b, params), symbolic_dist(b, c, params))
        assert symbolic_dist(a, b, params) == symbolic_dist(b, a, params)


def test_prefix_is_maximal():
    rng = np.random.default_rng(3)
    for _ in range(300):
        a = tuple(rng.integers(0, 3, size=5))
        b = tuple(rng.integers(0, 3, size=int(rng.integers(0, 6))))
        p = longest_common_prefix(a, b)
        assert is_prefix(p, a) and is_prefix(p, b)
        if len(p) < min(len(a), len(b)):
            assert not (is_prefix(a[:len(p) + 1], b) and is_prefix(b[:len(p) + 1], a))


def test_enumeration_and_periodic_extension():
    words = list(all_words(2, 3))
    assert len(words) == 8 and words[0] == (0, 0, 0) and words[-1] == (1, 1, 1)
    assert periodic_extension((0, 1), 5) == (0, 1, 0, 1, 0)
    assert periodic_extension((2,), 3) == (2, 2, 2)
