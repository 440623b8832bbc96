#!/usr/bin/env python3
"""
SYMBOLIC LAYER - WORDS, CYLINDERS, SHIFT
========================================

Finite words over a dense integer alphabet 0..m-1 (or 0..inf lazily).
A word w addresses the cylinder [w] of all infinite sequences that start
with w. Infinite sequences only ever appear as finite truncations.

Features:
- longest common prefix and the ultrametric dist(a, b) = lambda^|a ^ b|
- the left shift
- enumeration, periodic extension and random words for samplers
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Word = Tuple[int, ...]
EMPTY: Word = ()


class InvalidWordError(ValueError):
    """A letter is not a non-negative integer (or exceeds the alphabet)."""


class EmptyWordError(ValueError):
    """An operation needs at least one letter."""


def as_word(letters: Iterable[int], alphabet_size: Optional[int] = None) -> Word:
    """Normalise any integer iterable into an immutable Word."""
    out = []
    for a in letters:
        if isinstance(a, (bool, float)) or int(a) != a:
            raise InvalidWordError(f"letter {a!r} is not an integer")
        a = int(a)
        if a < 0:
            raise InvalidWordError(f"letter {a} is negative")
        if alphabet_size is not None and a >= alphabet_size:
            raise InvalidWordError(f"letter {a} outside alphabet of size {alphabet_size}")
        out.append(a)
    return tuple(out)


@dataclass(frozen=True)
class SymbolicMetricParams:
    lam: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.lam < 1.0):
            raise ValueError(f"lambda must lie in (0,1), got {self.lam}")


# ============================================================================
# CORE OPERATIONS
# ============================================================================

def longest_common_prefix(a: Sequence[int], b: Sequence[int]) -> Word:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return tuple(a[:n])


def symbolic_dist(a: Sequence[int], b: Sequence[int], params: SymbolicMetricParams) -> float:
    """
    lambda^|a ^ b|.

    Words are cylinder representatives, so equal words give the upper
    bound lambda^|a| rather than 0.
    """
    return params.lam ** len(longest_common_prefix(a, b))


def shift(w: Sequence[int]) -> Word:
    if len(w) == 0:
        raise EmptyWordError("cannot shift the empty word")
    return tuple(w[1:])


def is_prefix(p: Sequence[int], w: Sequence[int]) -> bool:
    return len(p) <= len(w) and tuple(w[:len(p)]) == tuple(p)


def concat(*words: Sequence[int]) -> Word:
    return tuple(itertools.chain.from_iterable(words))


def all_words(m: int, n: int) -> Iterator[Word]:
    """Lexicographic enumeration of the m^n words of length n."""
    return itertools.product(range(m), repeat=n)


def periodic_extension(w: Sequence[int], depth: int) -> Word:
    """The truncation to `depth` letters of the periodic sequence w w w ..."""
    if len(w) == 0:
        raise EmptyWordError("periodic extension of the empty word")
    reps = -(-depth // len(w))
    return (tuple(w) * reps)[:depth]


def random_word(probabilities: Sequence[float], depth: int, rng: np.random.Generator) -> Word:
    """i.i.d. letters with the given distribution (Bernoulli word)."""
    p = np.asarray(probabilities, dtype=float)
    p = p / p.sum()
    return tuple(int(a) for a in rng.choice(len(p), size=depth, p=p))
