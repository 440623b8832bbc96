#!/usr/bin/env python3
"""
THERMODYNAMIC FORMALISM - POTENTIALS, PRESSURE, CYLINDER MEASURES
=================================================================

Features:
- potentials: geometric s*log|u'|, bernoulli log p_a, tabulated (locally constant)
- pressure from level sums, bracketed by the inf/sup sums (sub/supermultiplicative)
- Bowen dimension as the root of s -> P(s*log|u'|) (scipy brentq)
- cylinder measures on the symbolic space:
    GibbsWeights    Gibbs weights of a potential
    AtomicWeights   finitely many eventually periodic words (periodic orbits, atoms)
    DensityWeights  densities on an interval pulled back through the coding
- word and point samplers, Lyapunov exponent, entropy, Hofbauer dimension h/chi
- Gibbs ratio check against the certified constant C_g
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp, zeta

from cifs import BranchKind, CifsSystem, CylinderMaps, SystemDefinitionError, coding_points, parse_number
from symbolic import Word, as_word, periodic_extension

logger = logging.getLogger(__name__)

LEVEL_SUM_CAP = 200_000
CERTIFICATE_WORD_CAP = 4_000
ENTROPY_WORD_CAP = 500_000
PRODUCT_MAX_LEVEL = 400
LETTER_CAP = 10**15


class DivergentPressureError(ValueError):
    """The level sum of the potential does not converge (non-summable)."""


class IrregularSystemError(ValueError):
    """s -> P(s) has no sign change on the bracketing interval."""


class InapplicableFormulaError(ValueError):
    pass


class LevelError(ValueError):
    """Requested level exceeds what the weight table supports."""


# ============================================================================
# ESTIMATES
# ============================================================================

@dataclass(frozen=True)
class Estimate:
    """A value with a non-negative error bar, the level it was computed at and flags."""
    value: float
    error: float = 0.0
    level: int = 0
    flags: Tuple[str, ...] = ()

    def __float__(self) -> float:
        return float(self.value)

    @property
    def lower(self) -> float:
        return self.value - self.error

    @property
    def upper(self) -> float:
        return self.value + self.error


# ============================================================================
# POTENTIALS
# ============================================================================

class PotentialKind(Enum):
    GEOMETRIC = "geometric"
    BERNOULLI = "bernoulli"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class Potential:
    kind: PotentialKind
    s: float = 0.0
    weights: Tuple[float, ...] = ()
    depth: int = 1
    values: Tuple[Tuple[Word, float], ...] = ()
    holder_exponent: float = 1.0

    def __post_init__(self):
        if self.holder_exponent <= 0:
            raise ValueError("Hoelder exponent must be positive")
        if self.kind is PotentialKind.BERNOULLI:
            w = np.asarray(self.weights, dtype=float)
            if w.size == 0 or np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
                raise ValueError(f"bernoulli weights must be non-negative with positive sum: {self.weights}")
        if self.kind is PotentialKind.TABULATED and self.depth < 1:
            raise ValueError("tabulated potentials need depth >= 1")

    @classmethod
    def geometric(cls, s: float, holder_exponent: float = 1.0) -> "Potential":
        return cls(PotentialKind.GEOMETRIC, s=float(s), holder_exponent=holder_exponent)

    @classmethod
    def bernoulli(cls, weights: Sequence[float]) -> "Potential":
        return cls(PotentialKind.BERNOULLI, weights=tuple(float(p) for p in weights))

    @classmethod
    def tabulated(cls, depth: int, values: Dict[Word, float]) -> "Potential":
        items = tuple(sorted((as_word(k), float(v)) for k, v in values.items()))
        return cls(PotentialKind.TABULATED, depth=depth, values=items)

    @property
    def table(self) -> Dict[Word, float]:
        return dict(self.values)

    def first_letter_only(self, sys: CifsSystem) -> bool:
        if self.kind is PotentialKind.BERNOULLI:
            return True
        if self.kind is PotentialKind.TABULATED:
            return self.depth == 1
        return sys.kind is BranchKind.SIMILARITY

    def letter_log_weights(self, sys: CifsSystem) -> np.ndarray:
        """phi on [a] for potentials depending on the first letter only."""
        if self.kind is PotentialKind.BERNOULLI:
            if len(self.weights) != sys.alphabet_size:
                raise ValueError(f"{len(self.weights)} bernoulli weights for {sys.alphabet_size} letters")
            with np.errstate(divide="ignore"):
                return np.log(np.asarray(self.weights, dtype=float))
        if self.kind is PotentialKind.TABULATED:
            table = self.table
            return np.array([table[(a,)] for a in sys.letters])
        ratios = np.array([float(br.ratio) for br in sys.branches])
        return self.s * np.log(ratios)


def _tail_exponent(sys: CifsSystem) -> float:
    """Convergence exponent of sum_a (sup|u_a'|)^s; the Gauss family has sup|u_a'| = 1/a^2."""
    return 0.5 if sys.kind is BranchKind.GAUSS else 0.0


def geometric_tail(sys: CifsSystem, s: float) -> float:
    """sum_{a > m_max} (sup|u_a'|)^s, zero for finite alphabets."""
    if not sys.is_infinite:
        return 0.0
    if 2.0 * s <= 1.0:
        raise DivergentPressureError(f"sum of a^(-2s) diverges for s={s:g} <= 1/2")
    return float(zeta(2.0 * s, sys.truncation + 1))


# ============================================================================
# LEVEL SUMS
# ============================================================================

def _enumerate_level(sys: CifsSystem, n: int) -> Tuple[np.ndarray, CylinderMaps]:
    """All words of length n over the (truncated) alphabet with composed maps."""
    m = sys.alphabet_size
    letters = np.array(list(sys.letters), dtype=np.int64)
    words = np.zeros((1, 0), dtype=np.int64)
    maps = sys.identity_maps(1)
    for _ in range(n):
        parent = np.repeat(np.arange(len(words)), m)
        child = np.tile(letters, len(words))
        maps = sys.extend_maps(maps.take(parent), child)
        words = np.column_stack([words[parent], child])
    return words, maps


@lru_cache(maxsize=32)
def _level_log_derivatives(sys: CifsSystem, n: int) -> Tuple[np.ndarray, np.ndarray]:
    _, maps = _enumerate_level(sys, n)
    lo, hi = sys.derivative_bounds_maps(maps)
    return np.log(lo), np.log(hi)


def feasible_level(sys: CifsSystem, n: int, cap: int = LEVEL_SUM_CAP) -> int:
    m = max(sys.alphabet_size, 2)
    top = max(1, int(math.floor(math.log(cap) / math.log(m))))
    if n > top:
        logger.info("%s: level %d needs %d^%d words, using level %d", sys.name, n, m, n, top)
    return max(1, min(n, top))


def _window_extrema(pot: Potential, m_letters: Sequence[int]) -> Tuple[Dict[Word, float], Dict[Word, float]]:
    """max/min of tabulated values over all completions of every prefix."""
    table = pot.table
    for key in (tuple(w) for w in np.ndindex(*([len(m_letters)] * pot.depth))):
        word = tuple(m_letters[i] for i in key)
        if word not in table:
            raise ValueError(f"tabulated potential misses word {word}")
    hi: Dict[Word, float] = {}
    lo: Dict[Word, float] = {}
    for word, v in table.items():
        for k in range(pot.depth + 1):
            p = word[:k]
            hi[p] = max(hi.get(p, -math.inf), v)
            lo[p] = min(lo.get(p, math.inf), v)
    return lo, hi


def _tabulated_birkhoff_range(pot: Potential, words: np.ndarray, lo_tab, hi_tab) -> Tuple[np.ndarray, np.ndarray]:
    n = words.shape[1]
    s_lo = np.zeros(len(words))
    s_hi = np.zeros(len(words))
    for i, w in enumerate(words):
        w = tuple(int(a) for a in w)
        for j in range(n):
            window = w[j:j + pot.depth]
            s_lo[i] += lo_tab[window]
            s_hi[i] += hi_tab[window]
    return s_lo, s_hi


def pressure(sys: CifsSystem, pot: Potential, n: int = 8) -> Estimate:
    """
    Pressure of pot.

    Exact for potentials of the first letter. Otherwise the level-n sums of
    exp(inf S_n phi) and exp(sup S_n phi) bracket P from below and above;
    the value is their midpoint and the error half the gap.
    """
    if n < 1:
        raise ValueError("pressure level must be >= 1")
    if pot.first_letter_only(sys):
        logw = pot.letter_log_weights(sys)
        tail = geometric_tail(sys, pot.s) if pot.kind is PotentialKind.GEOMETRIC else 0.0
        return Estimate(float(logsumexp(logw) if tail == 0 else np.log(np.exp(logw).sum() + tail)), 0.0, 1)

    n = feasible_level(sys, n)
    flags: Tuple[str, ...] = ()
    if pot.kind is PotentialKind.GEOMETRIC:
        log_lo, log_hi = _level_log_derivatives(sys, n)
        z_lo, z_hi = pot.s * log_lo, pot.s * log_hi
        upper = float(logsumexp(z_hi))
        if sys.is_infinite:
            tail = geometric_tail(sys, pot.s)
            log1, hi1 = _level_log_derivatives(sys, 1)
            z1 = float(np.exp(pot.s * hi1).sum())
            extra = (z1 + tail) ** n - z1**n
            upper = float(np.log(np.exp(upper) + extra))
            flags = (f"truncated m_max={sys.truncation}", f"tail={tail:.3e}")
        lower = float(logsumexp(z_lo))
    else:
        words, _ = _enumerate_level(sys, n)
        lo_tab, hi_tab = _window_extrema(pot, list(sys.letters))
        s_lo, s_hi = _tabulated_birkhoff_range(pot, words, lo_tab, hi_tab)
        lower, upper = float(logsumexp(s_lo)), float(logsumexp(s_hi))
    lower, upper = lower / n, upper / n
    return Estimate((lower + upper) / 2.0, (upper - lower) / 2.0, n, flags)


def bowen_dimension(sys: CifsSystem, n: int = 8, tol: float = 1e-13) -> Estimate:
    """Root of s -> P(s log|u'|) on [0, d] (above the convergence exponent for infinite alphabets)."""
    lo = _tail_exponent(sys) + 1e-6 if sys.is_infinite else 0.0
    hi = float(sys.dim)

    def f(s: float) -> float:
        return float(pressure(sys, Potential.geometric(s), n))

    f_lo, f_hi = f(lo), f(hi)
    if f_lo == 0.0:
        return Estimate(lo, 0.0, n)
    # the midpoint of a bracketed pressure may stay positive slightly past d
    while sys.is_infinite and f_lo > 0 and f_hi > 0 and hi < 2.0 * sys.dim:
        hi += 0.25
        f_hi = f(hi)
    if f_lo * f_hi > 0:
        raise IrregularSystemError(
            f"{sys.name}: P(s) has no sign change on [{lo:g}, {hi:g}] (P={f_lo:.3g}, {f_hi:.3g})")
    delta = brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    p_err = pressure(sys, Potential.geometric(delta), n).error
    error = 0.0
    if p_err > 0:
        h = 1e-4
        slope = abs(f(min(delta + h, hi)) - f(max(delta - h, lo))) / (min(delta + h, hi) - max(delta - h, lo))
        error = p_err / slope if slope > 0 else math.inf
    if delta > sys.dim:
        error = max(error, delta - sys.dim)
        delta = float(sys.dim)
    return Estimate(float(delta), error, n)


# ============================================================================
# CYLINDER MEASURES
# ============================================================================

class CylinderMeasure:
    """A probability measure on A^N given by its cylinder weights."""

    name = "measure"
    system: CifsSystem
    max_level: Optional[int] = None

    @property
    def is_product(self) -> bool:
        return False

    @property
    def tail_mass(self) -> float:
        return 0.0

    def weight(self, w: Sequence[int]) -> float:
        raise NotImplementedError

    def child_weights(self, w: Sequence[int]) -> np.ndarray:
        """weight(w a) for a in system.letters."""
        raise NotImplementedError

    def child_probabilities(self, w: Sequence[int]) -> np.ndarray:
        cw = self.child_weights(w)
        total = cw.sum()
        return cw / total if total > 0 else cw

    def letter_mass(self, a: int) -> float:
        return self.weight((a,))

    def check_level(self, level: int) -> None:
        if self.max_level is not None and level > self.max_level:
            raise LevelError(f"level {level} exceeds the weight table of {self.name} (max {self.max_level})")

    # -- samplers -----------------------------------------------------------

    def sample_letters(self, rng: np.random.Generator, n: int, depth: int,
                       prefix: Sequence[int] = ()) -> np.ndarray:
        """n words of length |prefix| + depth drawn from the measure conditioned on [prefix]."""
        letters = np.array(list(self.system.letters))
        out = np.zeros((n, len(prefix) + depth), dtype=np.int64)
        out[:, :len(prefix)] = prefix
        for i in range(n):
            w = list(prefix)
            for _ in range(depth):
                p = self.child_probabilities(w)
                w.append(int(letters[rng.choice(len(letters), p=p)]))
            out[i] = w
        return out

    def sample_points(self, rng: np.random.Generator, n: int, depth: int) -> Tuple[np.ndarray, np.ndarray]:
        """(points, error radii) of n coded samples."""
        return coding_points(self.system, self.sample_letters(rng, n, depth))

    def sample_lyapunov_terms(self, rng: np.random.Generator, n: int, depth: int) -> np.ndarray:
        """log(1/|u'_{w1}(pi(sigma w))|) for n sampled words."""
        words = self.sample_letters(rng, n, depth)
        tails, _ = coding_points(self.system, words[:, 1:])
        return _log_inverse_derivative(self.system, words[:, 0], tails)

    # -- enumeration --------------------------------------------------------

    def level_words(self, n: int, cap: int = ENTROPY_WORD_CAP) -> Tuple[List[Word], np.ndarray]:
        """All positive-weight words of length n with their weights."""
        self.check_level(n)
        words: List[Word] = [()]
        weights = np.array([1.0])
        letters = list(self.system.letters)
        for _ in range(n):
            nxt, nw = [], []
            for w, wt in zip(words, weights):
                probs = self.child_probabilities(w)
                for a, p in zip(letters, probs):
                    if p > 0:
                        nxt.append(w + (a,))
                        nw.append(wt * p)
            if len(nxt) > cap:
                raise LevelError(f"{len(nxt)} positive-weight words at level {n} exceed the cap {cap}")
            words, weights = nxt, np.array(nw)
        return words, weights


def _log_inverse_derivative(sys: CifsSystem, first: np.ndarray, points: np.ndarray) -> np.ndarray:
    maps = sys.extend_maps(sys.identity_maps(len(first)), first)
    if sys.kind is BranchKind.SIMILARITY:
        return -np.log(np.linalg.norm(maps.A[:, :, 0], axis=1))
    M = maps.M
    z = points[:, 0] + (0j if sys.dim == 1 else 1j * points[:, 1])
    det = np.abs(M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0])
    return 2.0 * np.log(np.abs(M[:, 1, 0] * z + M[:, 1, 1])) - np.log(det)


def _attracting_fixed_points(M: np.ndarray) -> np.ndarray:
    """Attracting fixed point of each Moebius matrix (roots of c z^2 + (d - a) z - b)."""
    a, b, c, d = M[:, 0, 0], M[:, 0, 1], M[:, 1, 0], M[:, 1, 1]
    da = d - a
    sq = np.sqrt(da * da + 4.0 * b * c)
    sign = np.where((np.conj(da) * sq).real >= 0, 1.0, -1.0)
    q = -0.5 * (da + sign * sq)
    with np.errstate(all="ignore"):
        z1 = q / c
        z2 = -b / q
        roots = np.stack([z1, z2], axis=1)
        size = np.abs(c[:, None] * roots + d[:, None])
    size = np.where(np.isfinite(size) & np.isfinite(roots), size, -1.0)
    pick = np.argmax(size, axis=1)
    return roots[np.arange(len(M)), pick]


class GibbsWeights(CylinderMeasure):
    """
    Gibbs weights of a potential.

    First-letter potentials give the product measure with p_a = exp(phi_a - P)
    and C_g = 1. Other potentials are split top-down: the children of w get
    weight(w) * g(w a) / sum_b g(w b) with g(v) = exp(S_|v| phi(tau_v)),
    tau_v the periodic extension of v.
    """

    name = "gibbs"

    def __init__(self, system: CifsSystem, potential: Potential, level: int = 12,
                 pressure_level: int = 8, certificate_depth: int = 4):
        self.system = system
        self.potential = potential
        self.level = level
        self._product = potential.first_letter_only(system)
        self._cache: Dict[Word, float] = {(): 1.0}
        self._child_cache: Dict[Word, np.ndarray] = {}
        self.pressure_estimate = pressure(system, potential, pressure_level)
        self.pressure = float(self.pressure_estimate)
        if self._product:
            logw = potential.letter_log_weights(system)
            with np.errstate(invalid="ignore"):
                p = np.exp(logw - logsumexp(logw))
            self.letter_probs = np.nan_to_num(p)
            self.max_level = None
            self.distortion_certificate = 1.0
        else:
            self.letter_probs = self.child_probabilities(())
            self.max_level = level
            self.certificate_depth = min(level, certificate_depth)
            self.distortion_certificate = self._certify()

    @property
    def is_product(self) -> bool:
        return self._product

    @property
    def tail_mass(self) -> float:
        if self.potential.kind is PotentialKind.GEOMETRIC and self.system.is_infinite:
            return geometric_tail(self.system, self.potential.s) / math.exp(self.pressure)
        return 0.0

    # -- weights ------------------------------------------------------------

    def _log_g(self, words: np.ndarray) -> np.ndarray:
        """S_|v| phi(tau_v) for every row v."""
        sys, pot = self.system, self.potential
        if pot.kind is PotentialKind.GEOMETRIC:
            maps = sys.letter_array_maps(words)
            z = _attracting_fixed_points(maps.M)
            M = maps.M
            det = np.abs(M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0])
            return pot.s * (np.log(det) - 2.0 * np.log(np.abs(M[:, 1, 0] * z + M[:, 1, 1])))
        table = pot.table
        out = np.zeros(len(words))
        for i, v in enumerate(words):
            v = tuple(int(a) for a in v)
            for j in range(len(v)):
                out[i] += table[periodic_extension(v[j:] + v[:j], pot.depth)]
        return out

    def child_weights(self, w: Sequence[int]) -> np.ndarray:
        return self.weight(w) * self.child_probabilities(w)

    def child_probabilities(self, w: Sequence[int]) -> np.ndarray:
        """g(w a) / sum_b g(w b); defined at every depth, unlike weight()."""
        if self._product:
            return self.letter_probs
        w = tuple(w)
        if w not in self._child_cache:
            letters = np.array(list(self.system.letters))
            rows = np.column_stack([np.tile(np.array(w, dtype=np.int64), (len(letters), 1)), letters])
            log_g = self._log_g(rows)
            self._child_cache[w] = np.exp(log_g - logsumexp(log_g))
        return self._child_cache[w]

    def sample_letters(self, rng, n, depth, prefix=()):
        if not self._product:
            return super().sample_letters(rng, n, depth, prefix)
        tail = rng.choice(len(self.letter_probs), size=(n, depth), p=self.letter_probs) + self.system.first_letter
        head = np.tile(np.asarray(prefix, dtype=np.int64), (n, 1))
        return np.hstack([head, tail.astype(np.int64)])

    def weight(self, w: Sequence[int]) -> float:
        w = tuple(w)
        if self._product:
            first = self.system.first_letter
            return float(np.prod([self.letter_probs[a - first] for a in w])) if w else 1.0
        if w in self._cache:
            return self._cache[w]
        if self.max_level is not None and len(w) > self.max_level:
            raise LevelError(f"word of length {len(w)} beyond Gibbs table level {self.max_level}")
        parent = self.weight(w[:-1])
        value = parent * float(self.child_probabilities(w[:-1])[w[-1] - self.system.first_letter])
        self._cache[w] = value
        return value

    # -- Gibbs property ------------------------------------------------------

    def birkhoff_range(self, words: Sequence[Word]) -> Tuple[np.ndarray, np.ndarray]:
        """Range of S_|w| phi(tau) over tau in [w]."""
        sys, pot = self.system, self.potential
        if pot.kind is PotentialKind.GEOMETRIC:
            maps = sys.cylinder_maps(words)
            lo, hi = sys.derivative_bounds_maps(maps)
            return pot.s * np.log(lo), pot.s * np.log(hi)
        lo_tab, hi_tab = _window_extrema(pot, list(sys.letters))
        lengths = {len(w) for w in words}
        s_lo, s_hi = np.zeros(len(words)), np.zeros(len(words))
        for k in lengths:
            idx = [i for i, w in enumerate(words) if len(w) == k]
            arr = np.array([words[i] for i in idx], dtype=np.int64).reshape(len(idx), k)
            lo_k, hi_k = _tabulated_birkhoff_range(pot, arr, lo_tab, hi_tab)
            s_lo[idx], s_hi[idx] = lo_k, hi_k
        return s_lo, s_hi

    def _certify(self) -> float:
        """Worst Gibbs ratio bound over every word up to certificate_depth."""
        m = self.system.alphabet_size
        while self.certificate_depth > 1 and m**self.certificate_depth > CERTIFICATE_WORD_CAP:
            self.certificate_depth -= 1
        first = self.system.first_letter
        words: List[Word] = [tuple(a + first for a in row)
                             for k in range(1, self.certificate_depth + 1)
                             for row in np.ndindex(*([m] * k))]
        s_lo, s_hi = self.birkhoff_range(words)
        n = np.array([len(w) for w in words])
        log_w = np.log([self.weight(w) for w in words])
        worst = np.maximum(log_w - (s_lo - n * self.pressure), (s_hi - n * self.pressure) - log_w)
        return float(np.exp(max(0.0, float(np.max(worst)))))


@dataclass(frozen=True)
class Atom:
    """The eventually periodic word prefix + period period period ..."""
    prefix: Word
    period: Word
    mass: float

    def letters(self, n: int) -> Word:
        if n <= len(self.prefix):
            return self.prefix[:n]
        return self.prefix + periodic_extension(self.period, n - len(self.prefix))


class AtomicWeights(CylinderMeasure):
    """Finitely many atoms on eventually periodic words; entropy zero."""

    name = "atoms"

    def __init__(self, system: CifsSystem, atoms: Sequence[Atom]):
        if not atoms:
            raise ValueError("atomic measure needs at least one atom")
        total = sum(a.mass for a in atoms)
        if total <= 0 or any(a.mass < 0 for a in atoms):
            raise ValueError("atom masses must be non-negative with positive sum")
        for a in atoms:
            system.check_letters(np.array(a.prefix + a.period))
            if not a.period:
                raise ValueError("atoms need a non-empty period")
        self.system = system
        self.atoms = tuple(Atom(a.prefix, a.period, a.mass / total) for a in atoms)
        self.max_level = None

    @classmethod
    def periodic_orbit(cls, system: CifsSystem, word: Sequence[int]) -> "AtomicWeights":
        """Shift-invariant measure on the orbit of the periodic sequence word word word ..."""
        word = as_word(word)
        rotations = [word[i:] + word[:i] for i in range(len(word))]
        return cls(system, [Atom((), r, 1.0 / len(word)) for r in rotations])

    @classmethod
    def point_mass(cls, system: CifsSystem, period: Sequence[int], prefix: Sequence[int] = ()) -> "AtomicWeights":
        return cls(system, [Atom(as_word(prefix), as_word(period), 1.0)])

    def weight(self, w: Sequence[int]) -> float:
        w = tuple(w)
        return float(sum(a.mass for a in self.atoms if a.letters(len(w)) == w))

    def child_weights(self, w: Sequence[int]) -> np.ndarray:
        w = tuple(w)
        first = self.system.first_letter
        out = np.zeros(self.system.alphabet_size)
        for a in self.atoms:
            word = a.letters(len(w) + 1)
            if word[:-1] == w:
                out[word[-1] - first] += a.mass
        return out

    def sample_letters(self, rng, n, depth, prefix=()):
        prefix = tuple(prefix)
        matching = [a for a in self.atoms if a.letters(len(prefix)) == prefix]
        if not matching:
            raise ValueError(f"cylinder {prefix} has zero mass")
        masses = np.array([a.mass for a in matching])
        pick = rng.choice(len(matching), size=n, p=masses / masses.sum())
        return np.array([matching[i].letters(len(prefix) + depth) for i in pick], dtype=np.int64)

    def atom_point(self, atom: Atom) -> np.ndarray:
        sys = self.system
        maps = sys.cylinder_maps([atom.period])
        if sys.kind is BranchKind.SIMILARITY:
            A, t = maps.A[0], maps.t[0]
            x = np.linalg.solve(np.eye(sys.dim) - A, t)
        else:
            z = _attracting_fixed_points(maps.M)[0]
            x = np.array([z.real] if sys.dim == 1 else [z.real, z.imag])
        if atom.prefix:
            x = sys.apply_maps(sys.cylinder_maps([atom.prefix]), x[None, :])[0]
        return x

    def sample_points(self, rng, n, depth):
        masses = np.array([a.mass for a in self.atoms])
        pick = rng.choice(len(self.atoms), size=n, p=masses)
        pts = np.array([self.atom_point(self.atoms[i]) for i in pick])
        return pts, np.zeros(n)


class DensityWeights(CylinderMeasure):
    """
    Absolutely continuous measure on an interval seed, pulled back through the
    coding: weight(w) = F(right end of u_w(X)) - F(left end).
    """

    name = "density"
    DENSITIES = ("lebesgue", "gauss")

    def __init__(self, system: CifsSystem, density: str = "lebesgue"):
        if system.dim != 1:
            raise ValueError("density measures are defined on interval seeds only")
        if density not in self.DENSITIES:
            raise ValueError(f"unknown density {density!r}; choose from {self.DENSITIES}")
        if density == "gauss" and (float(system.seed.lo[0]), float(system.seed.hi[0])) != (0.0, 1.0):
            raise ValueError("the Gauss density lives on [0, 1]")
        self.system = system
        self.density = density
        self.max_level = None
        self._lo = float(system.seed.lo[0])
        self._hi = float(system.seed.hi[0])

    def cdf(self, x: np.ndarray) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self._lo, self._hi)
        if self.density == "gauss":
            return np.log1p(x) / math.log(2.0)
        return (x - self._lo) / (self._hi - self._lo)

    def inverse_cdf(self, u: np.ndarray) -> np.ndarray:
        if self.density == "gauss":
            return np.expm1(u * math.log(2.0))
        return self._lo + u * (self._hi - self._lo)

    def _interval_mass(self, maps: CylinderMaps) -> np.ndarray:
        reg = self.system.regions(maps)
        return self.cdf(reg.hi[:, 0]) - self.cdf(reg.lo[:, 0])

    def weight(self, w: Sequence[int]) -> float:
        return float(self._interval_mass(self.system.cylinder_maps([tuple(w)]))[0])

    def child_weights(self, w: Sequence[int]) -> np.ndarray:
        sys = self.system
        letters = np.array(list(sys.letters))
        maps = sys.cylinder_maps([tuple(w)])
        maps = sys.extend_maps(maps.take(np.zeros(len(letters), dtype=np.int64)), letters)
        return self._interval_mass(maps)

    @property
    def tail_mass(self) -> float:
        if not self.system.is_infinite:
            return 0.0
        return float(max(0.0, 1.0 - self.child_weights(()).sum()))

    def itinerary(self, x: np.ndarray, depth: int) -> np.ndarray:
        """Coding sequences of the points x (inverse branches applied repeatedly)."""
        sys = self.system
        x = np.asarray(x, dtype=float).copy()
        out = np.zeros((len(x), depth), dtype=np.int64)
        if sys.kind is BranchKind.GAUSS:
            for i in range(depth):
                inv = 1.0 / np.maximum(x, 1.0 / LETTER_CAP)
                a = np.clip(np.floor(inv), 1, LETTER_CAP)
                out[:, i] = a.astype(np.int64)
                x = np.clip(inv - a, 0.0, 1.0)
            return out
        letters = np.array(list(sys.letters))
        level1 = sys.extend_maps(sys.identity_maps(len(letters)), letters)
        reg = sys.regions(level1)
        for i in range(depth):
            inside = (x[:, None] >= reg.lo[None, :, 0] - 1e-15) & (x[:, None] <= reg.hi[None, :, 0] + 1e-15)
            gap = np.minimum(np.abs(x[:, None] - reg.lo[None, :, 0]), np.abs(x[:, None] - reg.hi[None, :, 0]))
            pick = np.where(inside.any(axis=1), np.argmax(inside, axis=1), np.argmin(gap, axis=1))
            out[:, i] = letters[pick]
            chosen = level1.take(pick)
            if sys.kind is BranchKind.SIMILARITY:
                x = (x - chosen.t[:, 0]) / chosen.A[:, 0, 0]
            else:
                M = chosen.M
                z = x + 0j
                x = ((M[:, 1, 1] * z - M[:, 0, 1]) / (-M[:, 1, 0] * z + M[:, 0, 0])).real
            x = np.clip(x, self._lo, self._hi)
        return out

    def sample_letters(self, rng, n, depth, prefix=()):
        prefix = tuple(prefix)
        maps = self.system.cylinder_maps([prefix])
        reg = self.system.regions(maps)
        u = rng.uniform(self.cdf(reg.lo[0, 0]), self.cdf(reg.hi[0, 0]), size=n)
        x = self.inverse_cdf(u)
        words = self.itinerary(x, len(prefix) + depth)
        words[:, :len(prefix)] = prefix
        return words

    def sample_points(self, rng, n, depth):
        return self.inverse_cdf(rng.uniform(size=n))[:, None], np.zeros(n)

    def sample_lyapunov_terms(self, rng, n, depth):
        x = self.inverse_cdf(rng.uniform(size=n))
        first = self.itinerary(x, 1)[:, 0]
        if self.system.kind is BranchKind.GAUSS:
            # x = 1/(a + y) so |u_a'(y)| = x^2
            return -2.0 * np.log(x)
        return _log_inverse_derivative(self.system, first, x[:, None])


# ============================================================================
# CONSTRUCTORS
# ============================================================================

def conformal_weights(sys: CifsSystem, level: int = 12, n: int = 8) -> GibbsWeights:
    """Gibbs weights of delta*log|u'| with delta the Bowen dimension."""
    delta = bowen_dimension(sys, n)
    gw = GibbsWeights(sys, Potential.geometric(delta.value), level=level, pressure_level=n)
    gw.name = "conformal"
    return gw


def _parse_word(text: Any) -> Word:
    if isinstance(text, str):
        return as_word(int(t) for t in text.split(",") if t.strip())
    return as_word(text)


def measure_from_spec(sys: CifsSystem, spec: Optional[Dict[str, Any]] = None, level: int = 12) -> CylinderMeasure:
    """Build the measure described by the "measure" block of a system file."""
    spec = spec if spec is not None else (sys.measure_spec or {"type": "conformal"})
    if not isinstance(spec, dict):
        raise SystemDefinitionError(f"measure block must be an object, got {spec!r}")
    try:
        return _measure_from_spec(sys, spec, level)
    except (KeyError, TypeError, AttributeError, IndexError) as exc:
        raise SystemDefinitionError(f"measure block {spec!r}: missing or malformed field {exc}") from exc


def _measure_from_spec(sys: CifsSystem, spec: Dict[str, Any], level: int) -> CylinderMeasure:
    kind = spec.get("type", "conformal")
    if kind == "conformal":
        return conformal_weights(sys, level)
    if kind == "geometric":
        return GibbsWeights(sys, Potential.geometric(float(parse_number(spec["s"]))), level)
    if kind == "bernoulli":
        return GibbsWeights(sys, Potential.bernoulli([float(parse_number(p)) for p in spec["weights"]]), level)
    if kind == "uniform":
        return GibbsWeights(sys, Potential.bernoulli([1.0] * sys.alphabet_size), level)
    if kind == "tabulated":
        values = {_parse_word(k): float(parse_number(v)) for k, v in spec["values"].items()}
        return GibbsWeights(sys, Potential.tabulated(int(spec["depth"]), values), level)
    if kind == "periodic":
        return AtomicWeights.periodic_orbit(sys, _parse_word(spec["word"]))
    if kind == "point":
        return AtomicWeights.point_mass(sys, _parse_word(spec["period"]), _parse_word(spec.get("prefix", [])))
    if kind == "atoms":
        return AtomicWeights(sys, [Atom(_parse_word(a.get("prefix", [])), _parse_word(a["period"]),
                                        float(parse_number(a.get("mass", 1))))
                                   for a in spec["atoms"]])
    if kind == "density":
        return DensityWeights(sys, spec.get("density", "lebesgue"))
    raise ValueError(f"unknown measure type {kind!r}")


# ============================================================================
# LYAPUNOV EXPONENT, ENTROPY, HOFBAUER DIMENSION
# ============================================================================

def letter_tail_exponent(measure: CylinderMeasure) -> Optional[float]:
    """Power-law exponent t of the letter masses mu[a] ~ a^(-t) near the truncation."""
    sys = measure.system
    if not sys.is_infinite:
        return None
    m = sys.truncation
    if isinstance(measure, DensityWeights):
        a, b = m, 2 * m
    else:
        a, b = max(1, m // 2), m
    hi, lo = measure.letter_mass(a), measure.letter_mass(b)
    if lo <= 0 or hi <= 0:
        return math.inf
    return math.log(hi / lo) / math.log(b / a)


def lyapunov(sys: CifsSystem, gw: CylinderMeasure, n: int = 30, samples: int = 20000,
             seed: int = 0) -> Estimate:
    """chi = integral of log(1/|u'_{w1}(pi(sigma w))|); exact for similarity systems."""
    if sys.kind is BranchKind.SIMILARITY:
        ratios = np.array([float(br.ratio) for br in sys.branches])
        masses = np.array([gw.letter_mass(a) for a in sys.letters])
        return Estimate(float(np.dot(masses, -np.log(ratios))), 0.0, 1)
    flags: Tuple[str, ...] = ()
    t_hat = letter_tail_exponent(gw)
    if t_hat is not None:
        flags += (f"tail_exponent={t_hat:.3f}",)
        if t_hat <= 1.01:
            flags += ("divergent",)
            logger.warning("%s: letter masses decay like a^-%.3f, Lyapunov exponent may be infinite",
                           sys.name, t_hat)
    rng = np.random.default_rng(seed)
    terms = gw.sample_lyapunov_terms(rng, samples, n)
    err = float(np.std(terms, ddof=1) / math.sqrt(len(terms))) if len(terms) > 1 else math.inf
    return Estimate(float(np.mean(terms)), err, n, flags)


def entropy(gw: CylinderMeasure, n: int = 10) -> Estimate:
    """(1/n) sum -w log w over level-n cylinders; exact -sum p log p for product weights."""
    if gw.is_product:
        p = gw.letter_probs[gw.letter_probs > 0]
        return Estimate(float(-np.sum(p * np.log(p))), 0.0, 1)
    if isinstance(gw, AtomicWeights) and len(gw.atoms) == 1:
        return Estimate(0.0, 0.0, n)

    def block_entropy(k: int) -> float:
        _, w = gw.level_words(k)
        w = w[w > 0]
        return float(-np.sum(w * np.log(w)))

    h_n = block_entropy(n)
    h_prev = block_entropy(n - 1) if n > 1 else 0.0
    value = h_n / n
    return Estimate(value, abs(value - (h_n - h_prev)), n)


def hofbauer_dimension(gw: CylinderMeasure, n: int = 12, samples: int = 20000, seed: int = 0,
                       chi: Optional[Estimate] = None, h: Optional[Estimate] = None) -> Estimate:
    """h/chi with the error bars propagated."""
    sys = gw.system
    chi = chi if chi is not None else lyapunov(sys, gw, n=max(n, 20), samples=samples, seed=seed)
    if "divergent" in chi.flags or not math.isfinite(chi.value):
        raise InapplicableFormulaError("Lyapunov exponent diverges; h/chi is undefined")
    if chi.value <= 0:
        raise InapplicableFormulaError(f"Lyapunov exponent {chi.value:g} <= 0")
    h = h if h is not None else entropy(gw, n)
    value = h.value / chi.value
    error = (h.error + value * chi.error) / chi.value
    return Estimate(value, error, n, chi.flags)


# ============================================================================
# GIBBS RATIO CHECK
# ============================================================================

@dataclass
class GibbsCheck:
    pairs: int
    min_ratio: float
    max_ratio: float
    certificate: float

    @property
    def passed(self) -> bool:
        tol = 1e-9
        return self.min_ratio >= (1 - tol) / self.certificate and self.max_ratio <= self.certificate * (1 + tol)


def gibbs_ratio_check(sys: CifsSystem, gw: GibbsWeights, pairs: int = 1000, seed: int = 0,
                      tail_depth: int = 30) -> GibbsCheck:
    """weight(w) / exp(S_|w| phi(tau) - P|w|) over sampled w and tau in [w]."""
    rng = np.random.default_rng(seed)
    pot = gw.potential
    max_len = gw.certificate_depth if not gw.is_product else 8
    ratios = np.zeros(pairs)
    for i in range(pairs):
        k = int(rng.integers(1, max_len + 1))
        tau = gw.sample_letters(rng, 1, k + tail_depth)[0]
        w = tuple(int(a) for a in tau[:k])
        if pot.kind is PotentialKind.BERNOULLI or (pot.kind is PotentialKind.TABULATED and pot.depth == 1):
            logw = pot.letter_log_weights(sys)
            s_n = float(sum(logw[a - sys.first_letter] for a in w))
        elif pot.kind is PotentialKind.TABULATED:
            table = pot.table
            s_n = float(sum(table[tuple(int(a) for a in tau[j:j + pot.depth])] for j in range(k)))
        else:
            tail_point, _ = coding_points(sys, tau[None, k:])
            maps = sys.cylinder_maps([w])
            if sys.kind is BranchKind.SIMILARITY:
                deriv = np.linalg.norm(maps.A[0, :, 0])
            else:
                M = maps.M[0]
                z = tail_point[0, 0] + (0j if sys.dim == 1 else 1j * tail_point[0, 1])
                deriv = abs(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]) / abs(M[1, 0] * z + M[1, 1]) ** 2
            s_n = pot.s * math.log(deriv)
        ratios[i] = math.exp(math.log(gw.weight(w)) - (s_n - k * gw.pressure))
    return GibbsCheck(pairs, float(ratios.min()), float(ratios.max()), gw.distortion_certificate)


# ============================================================================
# REPORT
# ============================================================================

@dataclass
class ThermoReport:
    system: str
    measure: str
    pressure: Optional[Estimate]
    dimension: Optional[Estimate]
    lyapunov: Estimate
    entropy: Estimate
    hofbauer: Optional[Estimate]
    tail_mass: float = 0.0
    notes: List[str] = field(default_factory=list)

    def rows(self) -> List[Dict[str, Any]]:
        out = []
        for name, est in (("pressure", self.pressure), ("delta", self.dimension), ("lyapunov", self.lyapunov),
                          ("entropy", self.entropy), ("hofbauer", self.hofbauer)):
            if est is not None:
                out.append({"quantity": name, "value": est.value, "error": est.error, "level": est.level})
        out.append({"quantity": "tail_mass", "value": self.tail_mass, "error": 0.0, "level": 1})
        return out


def thermo_report(sys: CifsSystem, measure: CylinderMeasure, level: int = 10, samples: int = 20000,
                  seed: int = 0) -> ThermoReport:
    notes: List[str] = []
    pres = measure.pressure_estimate if isinstance(measure, GibbsWeights) else None
    try:
        delta: Optional[Estimate] = bowen_dimension(sys)
    except (IrregularSystemError, DivergentPressureError) as exc:
        delta = None
        notes.append(str(exc))
    chi = lyapunov(sys, measure, n=max(level, 20), samples=samples, seed=seed)
    h = entropy(measure, level)
    try:
        hof: Optional[Estimate] = hofbauer_dimension(measure, level, chi=chi, h=h)
    except InapplicableFormulaError as exc:
        hof = None
        notes.append(str(exc))
    return ThermoReport(sys.name, measure.name, pres, delta, chi, h, hof, measure.tail_mass, notes)
