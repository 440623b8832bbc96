#!/usr/bin/env python3
"""
CONFORMAL ITERATED FUNCTION SYSTEMS
===================================

Branch maps u_a of a compact seed set X into itself, composed along words:

    u_w = u_{w1} o u_{w2} o ... o u_{wn}

so the LAST letter acts first. The coding map sends an infinite word to the
single point of the nested images u_{w|n}(X).

Features:
- similarity branches in any dimension (ratio, orthogonal part, translation)
- Moebius branches, real coefficients on an interval or complex ones on R^2
- the Gauss family x -> 1/(a + x), letters a = 1, 2, ... truncated at m_max
- exact image regions (intervals, disks) and exact derivative bounds over X
- axiom checks: seed/cone, maps into seed, uniform contraction, distortion,
  open set and strong separation conditions
- vectorised composition of many words at once (used by every cover)

System file (JSON)
------------------
    {
      "name": "cantor",
      "kind": "similarity" | "moebius" | "gauss",
      "dim": 1,
      "seed": {"type": "box", "lo": [0], "hi": [1]}
            | {"type": "disk", "center": [0, 0], "radius": 1},
      "maps": [{"ratio": "1/3", "translation": [0], "orthogonal": [[1]]}, ...]
            | [{"a": [re, im], "b": ..., "c": ..., "d": ...}, ...],
      "truncation": 50,               (gauss only)
      "measure": {...}                (see thermo.measure_from_spec)
    }

Numbers may be JSON numbers or rational strings such as "2/3". Rational
strings are held as Fraction and written back unchanged.
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from symbolic import EmptyWordError, as_word

logger = logging.getLogger(__name__)

Number = Union[int, float, Fraction]

SEED_TOL = 1e-9
DISTORTION_DEPTH = 6
DISTORTION_SAMPLE_CAP = 4000
DISTORTION_SAFETY = 2.0


class SystemDefinitionError(ValueError):
    """The system file or constructor arguments do not describe a valid CIFS."""


class LetterOutOfRangeError(ValueError):
    pass


class OutsideSeedError(ValueError):
    pass


class BranchKind(Enum):
    SIMILARITY = "similarity"
    MOEBIUS = "moebius"
    GAUSS = "gauss"


# ============================================================================
# NUMBERS
# ============================================================================

def parse_number(value: Any) -> Number:
    """JSON number or rational string ("1/3", "0.25", "2") -> number."""
    if isinstance(value, bool):
        raise SystemDefinitionError(f"boolean is not a number: {value!r}")
    if isinstance(value, (int, float, Fraction)):
        return value
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise SystemDefinitionError(f"cannot parse number {value!r}") from exc
    raise SystemDefinitionError(f"expected a number, got {value!r}")


def format_number(value: Number) -> Union[int, float, str]:
    if isinstance(value, Fraction):
        return str(value)
    return value


def parse_complex(value: Any) -> Tuple[Number, Number]:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise SystemDefinitionError(f"complex number needs [re, im], got {value!r}")
        return parse_number(value[0]), parse_number(value[1])
    return parse_number(value), 0


# ============================================================================
# SEED SETS
# ============================================================================

@dataclass(frozen=True)
class BoxSeed:
    """Axis-aligned box [lo_1, hi_1] x ... x [lo_d, hi_d]."""
    lo: Tuple[Number, ...]
    hi: Tuple[Number, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or not self.lo:
            raise SystemDefinitionError("box seed needs matching non-empty lo/hi")
        if any(float(h) <= float(l) for l, h in zip(self.lo, self.hi)):
            raise SystemDefinitionError("box seed must have non-empty interior")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @cached_property
    def lo_arr(self) -> np.ndarray:
        return np.array([float(v) for v in self.lo])

    @cached_property
    def hi_arr(self) -> np.ndarray:
        return np.array([float(v) for v in self.hi])

    @property
    def center(self) -> np.ndarray:
        return (self.lo_arr + self.hi_arr) / 2.0

    @property
    def half_widths(self) -> np.ndarray:
        return (self.hi_arr - self.lo_arr) / 2.0

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi_arr - self.lo_arr))

    def contains(self, points: np.ndarray, tol: float = SEED_TOL) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lo_arr - tol) & (pts <= self.hi_arr + tol), axis=1)

    def grid(self, n: int) -> np.ndarray:
        axes = [np.linspace(l, h, n) for l, h in zip(self.lo_arr, self.hi_arr)]
        return np.array(list(itertools.product(*axes)))

    def boundary_grid(self, n: int) -> np.ndarray:
        if self.dim == 1:
            return self.grid(n)
        pts = self.grid(n)
        on_face = np.any(np.isclose(pts, self.lo_arr) | np.isclose(pts, self.hi_arr), axis=1)
        return pts[on_face]

    def complex_distance_range(self, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Min and max of |z - p| over the box viewed inside C (d <= 2)."""
        p = np.asarray(p, dtype=complex)
        if self.dim == 1:
            l, h = self.lo_arr[0], self.hi_arr[0]
            nearest = np.clip(p.real, l, h) + 0j
            far = np.maximum(np.abs(p - l), np.abs(p - h))
            return np.abs(p - nearest), far
        (lx, ly), (hx, hy) = self.lo_arr, self.hi_arr
        nearest = np.clip(p.real, lx, hx) + 1j * np.clip(p.imag, ly, hy)
        corners = np.array([lx + 1j * ly, lx + 1j * hy, hx + 1j * ly, hx + 1j * hy])
        far = np.max(np.abs(p[..., None] - corners), axis=-1)
        return np.abs(p - nearest), far

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "box", "lo": [format_number(v) for v in self.lo],
                "hi": [format_number(v) for v in self.hi]}


@dataclass(frozen=True)
class DiskSeed:
    """Closed disk in R^2 = C."""
    origin: Tuple[Number, Number]
    radius: Number

    def __post_init__(self):
        if len(self.origin) != 2:
            raise SystemDefinitionError("disk seeds live in dimension 2")
        if float(self.radius) <= 0:
            raise SystemDefinitionError("disk radius must be positive")

    @property
    def dim(self) -> int:
        return 2

    @property
    def center(self) -> np.ndarray:
        return np.array([float(v) for v in self.origin])

    @property
    def diameter(self) -> float:
        return 2.0 * float(self.radius)

    @property
    def z0(self) -> complex:
        return complex(float(self.origin[0]), float(self.origin[1]))

    def contains(self, points: np.ndarray, tol: float = SEED_TOL) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.linalg.norm(pts - self.center, axis=1) <= float(self.radius) + tol

    def grid(self, n: int) -> np.ndarray:
        r = float(self.radius)
        xs = np.linspace(-r, r, n)
        pts = np.array([(x, y) for x in xs for y in xs if x * x + y * y <= r * r])
        return pts + self.center

    def boundary_grid(self, n: int) -> np.ndarray:
        t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        return self.center + float(self.radius) * np.column_stack([np.cos(t), np.sin(t)])

    def complex_distance_range(self, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        dist = np.abs(np.asarray(p, dtype=complex) - self.z0)
        r = float(self.radius)
        return np.maximum(dist - r, 0.0), dist + r

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "disk", "center": [format_number(v) for v in self.origin],
                "radius": format_number(self.radius)}


Seed = Union[BoxSeed, DiskSeed]


# ============================================================================
# BRANCH MAPS
# ============================================================================

@dataclass(frozen=True)
class SimilarityBranch:
    """x -> ratio * O x + translation."""
    ratio: Number
    translation: Tuple[Number, ...]
    orthogonal: Optional[Tuple[Tuple[Number, ...], ...]] = None

    def __post_init__(self):
        if not (0 < float(self.ratio) < 1):
            raise SystemDefinitionError(f"similarity ratio must lie in (0,1), got {self.ratio}")
        o = self.orthogonal_arr
        if not np.allclose(o @ o.T, np.eye(len(self.translation)), atol=1e-9):
            raise SystemDefinitionError("orthogonal part is not orthogonal")

    @property
    def orthogonal_arr(self) -> np.ndarray:
        d = len(self.translation)
        if self.orthogonal is None:
            return np.eye(d)
        return np.array([[float(v) for v in row] for row in self.orthogonal])

    def affine(self) -> Tuple[np.ndarray, np.ndarray]:
        return float(self.ratio) * self.orthogonal_arr, np.array([float(v) for v in self.translation])

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"ratio": format_number(self.ratio),
                               "translation": [format_number(v) for v in self.translation]}
        if self.orthogonal is not None:
            out["orthogonal"] = [[format_number(v) for v in row] for row in self.orthogonal]
        return out


@dataclass(frozen=True)
class MoebiusBranch:
    """z -> (a z + b) / (c z + d); coefficients stored as (re, im) pairs."""
    a: Tuple[Number, Number]
    b: Tuple[Number, Number]
    c: Tuple[Number, Number]
    d: Tuple[Number, Number]

    def matrix(self) -> np.ndarray:
        return np.array([[complex(*map(float, self.a)), complex(*map(float, self.b))],
                         [complex(*map(float, self.c)), complex(*map(float, self.d))]])

    @property
    def is_real(self) -> bool:
        return all(float(v[1]) == 0.0 for v in (self.a, self.b, self.c, self.d))

    @classmethod
    def from_complex(cls, a: complex, b: complex, c: complex, d: complex) -> "MoebiusBranch":
        return cls(*[(complex(v).real, complex(v).imag) for v in (a, b, c, d)])

    def to_dict(self) -> Dict[str, Any]:
        return {k: [format_number(v[0]), format_number(v[1])]
                for k, v in zip("abcd", (self.a, self.b, self.c, self.d))}


def gauss_matrices(letters: np.ndarray) -> np.ndarray:
    """Matrices [[0, 1], [1, a]] of x -> 1/(a + x)."""
    a = np.asarray(letters, dtype=float)
    out = np.zeros(a.shape + (2, 2), dtype=complex)
    out[..., 0, 1] = 1.0
    out[..., 1, 0] = 1.0
    out[..., 1, 1] = a
    return out


Branch = Union[SimilarityBranch, MoebiusBranch]


# ============================================================================
# COMPOSED MAPS AND REGIONS (vectorised over many words)
# ============================================================================

@dataclass
class CylinderMaps:
    """Composed maps u_w for a batch of words (affine A, t or Moebius M)."""
    A: Optional[np.ndarray] = None
    t: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.M) if self.M is not None else len(self.A)

    def take(self, idx: np.ndarray) -> "CylinderMaps":
        if self.M is not None:
            return CylinderMaps(M=self.M[idx])
        return CylinderMaps(A=self.A[idx], t=self.t[idx])


@dataclass
class Regions:
    """Images u_w(X): boxes (lo, hi) or balls (center, radius), one per word."""
    kind: str
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.lo) if self.kind == "box" else len(self.center)

    @property
    def centers(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0 if self.kind == "box" else self.center

    @property
    def diameters(self) -> np.ndarray:
        if self.kind == "box":
            return np.linalg.norm(self.hi - self.lo, axis=1)
        return 2.0 * self.radius

    def point_distance_range(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest and farthest Euclidean distance from x to each region."""
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            nearest = np.clip(x, self.lo, self.hi)
            near = np.linalg.norm(nearest - x, axis=1)
            far_corner = np.where(np.abs(self.lo - x) > np.abs(self.hi - x), self.lo, self.hi)
            far = np.linalg.norm(far_corner - x, axis=1)
            return near, far
        dist = np.linalg.norm(self.center - x, axis=1)
        return np.maximum(dist - self.radius, 0.0), dist + self.radius

    def projection_range(self, normal: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Range of <normal, y> over each region."""
        normal = np.asarray(normal, dtype=float)
        if self.kind == "box":
            mid = self.centers @ normal
            half = ((self.hi - self.lo) / 2.0) @ np.abs(normal)
            return mid - half, mid + half
        mid = self.center @ normal
        return mid - self.radius, mid + self.radius

    def take(self, idx: np.ndarray) -> "Regions":
        if self.kind == "box":
            return Regions("box", lo=self.lo[idx], hi=self.hi[idx])
        return Regions("ball", center=self.center[idx], radius=self.radius[idx])


def _normalise(M: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(M), axis=(-2, -1), keepdims=True)
    return M / np.where(scale > 0, scale, 1.0)


def _moebius_apply(M: np.ndarray, z: np.ndarray) -> np.ndarray:
    return (M[..., 0, 0] * z + M[..., 0, 1]) / (M[..., 1, 0] * z + M[..., 1, 1])


# ============================================================================
# THE SYSTEM
# ============================================================================

@dataclass(frozen=True)
class CodingResult:
    point: np.ndarray
    error_radius: float
    depth: int


@dataclass(frozen=True)
class CifsSystem:
    """Alphabet, branch maps and seed set of a conformal IFS."""
    name: str
    kind: BranchKind
    seed: Seed
    branches: Tuple[Branch, ...] = ()
    truncation: Optional[int] = None
    measure_spec: Optional[Dict[str, Any]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind is BranchKind.GAUSS:
            if self.truncation is None or self.truncation < 1:
                raise SystemDefinitionError("gauss family needs a truncation level m_max >= 1")
            if not isinstance(self.seed, BoxSeed) or self.seed.dim != 1:
                raise SystemDefinitionError("gauss family acts on an interval seed")
            return
        if not self.branches:
            raise SystemDefinitionError("a system needs at least one branch")
        if self.kind is BranchKind.SIMILARITY:
            for br in self.branches:
                if not isinstance(br, SimilarityBranch) or len(br.translation) != self.dim:
                    raise SystemDefinitionError("similarity branches must match the seed dimension")
        else:
            if self.dim > 2:
                raise SystemDefinitionError("Moebius branches act on R or R^2 = C only")
            for br in self.branches:
                if not isinstance(br, MoebiusBranch):
                    raise SystemDefinitionError("mixed branch kinds in one system")
                if abs(np.linalg.det(br.matrix())) == 0:
                    raise SystemDefinitionError("Moebius branch with zero determinant")
                if self.dim == 1 and not br.is_real:
                    raise SystemDefinitionError("interval Moebius branches need real coefficients")

    # ------------------------------------------------------------------
    # alphabet
    # ------------------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.seed.dim

    @property
    def is_infinite(self) -> bool:
        return self.kind is BranchKind.GAUSS

    @property
    def first_letter(self) -> int:
        return 1 if self.is_infinite else 0

    @property
    def alphabet_size(self) -> int:
        """Number of letters actually enumerated (m, or m_max when truncated)."""
        return self.truncation if self.is_infinite else len(self.branches)

    @property
    def letters(self) -> range:
        return range(self.first_letter, self.first_letter + self.alphabet_size)

    @property
    def is_conformal_moebius(self) -> bool:
        return self.kind is not BranchKind.SIMILARITY

    def check_letters(self, letters: np.ndarray) -> np.ndarray:
        arr = np.asarray(letters, dtype=np.int64)
        if arr.size == 0:
            return arr
        if self.is_infinite:
            bad = arr < 1
        else:
            bad = (arr < 0) | (arr >= len(self.branches))
        if np.any(bad):
            raise LetterOutOfRangeError(f"letter {int(arr[bad][0])} not in the alphabet of {self.name}")
        return arr

    # ------------------------------------------------------------------
    # per-letter tables
    # ------------------------------------------------------------------

    @cached_property
    def _affine_tables(self) -> Tuple[np.ndarray, np.ndarray]:
        pairs = [br.affine() for br in self.branches]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    @cached_property
    def _moebius_table(self) -> np.ndarray:
        return np.array([br.matrix() for br in self.branches])

    def letter_matrices(self, letters: np.ndarray) -> np.ndarray:
        letters = self.check_letters(letters)
        if self.kind is BranchKind.GAUSS:
            return gauss_matrices(letters)
        return self._moebius_table[letters]

    # ------------------------------------------------------------------
    # composition
    # ------------------------------------------------------------------

    def identity_maps(self, n: int = 1) -> CylinderMaps:
        if self.kind is BranchKind.SIMILARITY:
            return CylinderMaps(A=np.tile(np.eye(self.dim), (n, 1, 1)), t=np.zeros((n, self.dim)))
        return CylinderMaps(M=np.tile(np.eye(2, dtype=complex), (n, 1, 1)))

    def extend_maps(self, maps: CylinderMaps, letters: np.ndarray) -> CylinderMaps:
        """u_w -> u_w o u_a, row by row."""
        letters = self.check_letters(letters)
        if self.kind is BranchKind.SIMILARITY:
            A_tab, t_tab = self._affine_tables
            A_a, t_a = A_tab[letters], t_tab[letters]
            A = np.einsum("nij,njk->nik", maps.A, A_a)
            t = np.einsum("nij,nj->ni", maps.A, t_a) + maps.t
            return CylinderMaps(A=A, t=t)
        M = np.einsum("nij,njk->nik", maps.M, self.letter_matrices(letters))
        return CylinderMaps(M=_normalise(M))

    def cylinder_maps(self, words: Sequence[Sequence[int]]) -> CylinderMaps:
        """Composed maps for a ragged list of words."""
        n = len(words)
        maps = self.identity_maps(n)
        depth = max((len(w) for w in words), default=0)
        for i in range(depth):
            rows = np.array([j for j, w in enumerate(words) if len(w) > i], dtype=np.int64)
            letters = np.array([words[j][i] for j in rows], dtype=np.int64)
            ext = self.extend_maps(maps.take(rows), letters)
            if maps.M is not None:
                maps.M[rows] = ext.M
            else:
                maps.A[rows] = ext.A
                maps.t[rows] = ext.t
        return maps

    def letter_array_maps(self, letters: np.ndarray) -> CylinderMaps:
        """Composed maps for an (N, D) array of equal-length words."""
        letters = np.atleast_2d(np.asarray(letters, dtype=np.int64))
        maps = self.identity_maps(letters.shape[0])
        for i in range(letters.shape[1]):
            maps = self.extend_maps(maps, letters[:, i])
        return maps

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------

    def _to_complex(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return pts[:, 0] + 0j if self.dim == 1 else pts[:, 0] + 1j * pts[:, 1]

    def _from_complex(self, z: np.ndarray) -> np.ndarray:
        if self.dim == 1:
            return z.real[:, None]
        return np.column_stack([z.real, z.imag])

    def apply_maps(self, maps: CylinderMaps, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind is BranchKind.SIMILARITY:
            return np.einsum("nij,nj->ni", maps.A, pts) + maps.t
        return self._from_complex(_moebius_apply(maps.M, self._to_complex(pts)))

    def derivative_bounds_maps(self, maps: CylinderMaps) -> Tuple[np.ndarray, np.ndarray]:
        """lo <= |u_w'(x)| <= hi for x in X, exact for box and disk seeds."""
        if self.kind is BranchKind.SIMILARITY:
            r = np.linalg.norm(maps.A[:, :, 0], axis=1)
            return r, r.copy()
        M = maps.M
        det = np.abs(M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0])
        c, d = M[:, 1, 0], M[:, 1, 1]
        if isinstance(self.seed, DiskSeed):
            mid = np.abs(c * self.seed.z0 + d)
            spread = np.abs(c) * float(self.seed.radius)
            near, far = np.maximum(mid - spread, 0.0), mid + spread
        elif self.dim == 1:
            l, h = self.seed.lo_arr[0], self.seed.hi_arr[0]
            vl, vh = (c * l + d).real, (c * h + d).real
            near = np.where(vl * vh <= 0, 0.0, np.minimum(np.abs(vl), np.abs(vh)))
            far = np.maximum(np.abs(vl), np.abs(vh))
        else:
            nonzero = np.abs(c) > 0
            pole = np.where(nonzero, -d / np.where(nonzero, c, 1.0), 0.0)
            dmin, dmax = self.seed.complex_distance_range(pole)
            near = np.where(nonzero, np.abs(c) * dmin, np.abs(d))
            far = np.where(nonzero, np.abs(c) * dmax, np.abs(d))
        with np.errstate(divide="ignore"):
            hi = np.where(near > 0, det / np.where(near > 0, near, 1.0) ** 2, np.inf)
        return det / far**2, hi

    def regions(self, maps: CylinderMaps) -> Regions:
        seed = self.seed
        if self.kind is BranchKind.SIMILARITY:
            c = np.einsum("nij,j->ni", maps.A, seed.center) + maps.t
            if isinstance(seed, DiskSeed):
                r = np.linalg.norm(maps.A[:, :, 0], axis=1) * float(seed.radius)
                return Regions("ball", center=c, radius=r)
            half = np.einsum("nij,j->ni", np.abs(maps.A), seed.half_widths)
            return Regions("box", lo=c - half, hi=c + half)
        M = maps.M
        if self.dim == 1:
            ends = np.stack([_moebius_apply(M, seed.lo_arr[0] + 0j).real,
                             _moebius_apply(M, seed.hi_arr[0] + 0j).real], axis=1)
            return Regions("box", lo=ends.min(axis=1)[:, None], hi=ends.max(axis=1)[:, None])
        if isinstance(seed, DiskSeed):
            z0, R = seed.z0, float(seed.radius)
            c, d = M[:, 1, 0], M[:, 1, 1]
            nonzero = np.abs(c) > 0
            pole = np.where(nonzero, -d / np.where(nonzero, c, 1.0), 0.0)
            # reflection of the pole in the seed circle maps to the image centre
            reflected = np.where(nonzero, z0 + R**2 / np.conj(np.where(nonzero, pole - z0, 1.0)), z0)
            centre = _moebius_apply(M, reflected)
            radius = np.abs(_moebius_apply(M, z0 + R + 0j) - centre)
            return Regions("ball", center=self._from_complex(centre), radius=radius)
        _, hi = self.derivative_bounds_maps(maps)
        centre = _moebius_apply(M, self._to_complex(seed.center[None, :]))
        return Regions("ball", center=self._from_complex(centre), radius=hi * seed.diameter / 2.0)

    # ------------------------------------------------------------------
    # cached system constants
    # ------------------------------------------------------------------

    @cached_property
    def contraction(self) -> Tuple[float, int, float]:
        """
        (s_max, iterate, witness).

        s_max is a per-letter contraction rate. When some single branch has
        sup|u_a'| = 1 (the Gauss digit 1), the second iterate is used and
        s_max = sqrt(sup over |w| = 2 of sup|u_w'|).
        """
        letters = np.array(list(self.letters))
        _, hi1 = self.derivative_bounds_maps(self.extend_maps(self.identity_maps(len(letters)), letters))
        s1 = float(np.max(hi1))
        if s1 < 1.0 - 1e-12:
            return s1, 1, s1
        pairs = np.array(list(itertools.product(letters, repeat=2)))
        _, hi2 = self.derivative_bounds_maps(self.letter_array_maps(pairs))
        s2 = float(np.max(hi2))
        return math.sqrt(s2), 2, s2

    @property
    def s_max(self) -> float:
        return self.contraction[0]

    @cached_property
    def distortion_constant(self) -> float:
        """K_bd: safety factor times the worst hi/lo over words up to depth 6."""
        if self.kind is BranchKind.SIMILARITY:
            return 1.0
        rng = np.random.default_rng(0)
        m = self.alphabet_size
        worst = 1.0
        for depth in range(1, DISTORTION_DEPTH + 1):
            if m**depth <= DISTORTION_SAMPLE_CAP:
                words = np.array(list(itertools.product(self.letters, repeat=depth)))
            else:
                words = rng.integers(self.first_letter, self.first_letter + m,
                                     size=(DISTORTION_SAMPLE_CAP, depth))
            lo, hi = self.derivative_bounds_maps(self.letter_array_maps(words))
            worst = max(worst, float(np.max(hi / lo)))
        return DISTORTION_SAFETY * worst


# ============================================================================
# WORD-LEVEL OPERATIONS
# ============================================================================

def _word_maps(sys: CifsSystem, w: Sequence[int]) -> CylinderMaps:
    w = as_word(w)
    maps = sys.identity_maps(1)
    for a in w:
        maps = sys.extend_maps(maps, np.array([a]))
    return maps


def apply_word(sys: CifsSystem, w: Sequence[int], x: Union[float, Sequence[float]]) -> np.ndarray:
    """u_w(x) = u_{w1}(u_{w2}(... u_{wn}(x))); the empty word is the identity."""
    pt = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
    if pt.shape[1] != sys.dim:
        raise OutsideSeedError(f"point has dimension {pt.shape[1]}, system has {sys.dim}")
    if not sys.seed.contains(pt)[0]:
        raise OutsideSeedError(f"point {pt[0].tolist()} lies outside the seed set")
    return sys.apply_maps(_word_maps(sys, w), pt)[0]


def cylinder_diameter(sys: CifsSystem, w: Sequence[int]) -> float:
    """Upper bound D_w on diam(pi([w])): the diameter of the image u_w(X)."""
    return float(sys.regions(_word_maps(sys, w)).diameters[0])


def derivative_bounds(sys: CifsSystem, w: Sequence[int]) -> Tuple[float, float]:
    lo, hi = sys.derivative_bounds_maps(_word_maps(sys, w))
    return float(lo[0]), float(hi[0])


def cylinder_region(sys: CifsSystem, w: Sequence[int]) -> Regions:
    return sys.regions(_word_maps(sys, w))


def coding_point(sys: CifsSystem, w: Sequence[int]) -> CodingResult:
    """u_w(x0) for the seed centre x0; every extension codes within error_radius."""
    if len(w) == 0:
        raise EmptyWordError("coding needs at least one letter")
    point = apply_word(sys, w, sys.seed.center)
    return CodingResult(point=point, error_radius=cylinder_diameter(sys, w), depth=len(w))


def coding_points(sys: CifsSystem, letters: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised coding_point over an (N, D) letter array: (points, radii)."""
    maps = sys.letter_array_maps(letters)
    n = len(maps)
    pts = sys.apply_maps(maps, np.tile(sys.seed.center, (n, 1)))
    return pts, sys.regions(maps).diameters


# ============================================================================
# VALIDATION
# ============================================================================

@dataclass
class AxiomCheck:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass
class ValidationReport:
    system: str
    checks: List[AxiomCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.name != "strong_separation")

    def check(self, name: str) -> AxiomCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def rows(self) -> List[Dict[str, Any]]:
        return [{"axiom": c.name, "status": "PASS" if c.passed else "FAIL",
                 "value": c.value, "detail": c.detail} for c in self.checks]


def _level_one_separation(sys: CifsSystem) -> Tuple[float, float]:
    """(worst overlap, smallest gap) between distinct level-1 images."""
    letters = np.array(list(sys.letters))
    reg = sys.regions(sys.extend_maps(sys.identity_maps(len(letters)), letters))
    worst_overlap, min_gap = 0.0, math.inf
    for i, j in itertools.combinations(range(len(letters)), 2):
        if reg.kind == "box":
            sep = np.max(np.maximum(reg.lo[i] - reg.hi[j], reg.lo[j] - reg.hi[i]))
            if sep < 0:
                overlap = float(np.min(np.minimum(reg.hi[i], reg.hi[j]) - np.maximum(reg.lo[i], reg.lo[j])))
                worst_overlap = max(worst_overlap, overlap)
            min_gap = min(min_gap, float(sep))
        else:
            sep = float(np.linalg.norm(reg.center[i] - reg.center[j]) - reg.radius[i] - reg.radius[j])
            worst_overlap = max(worst_overlap, -sep)
            min_gap = min(min_gap, sep)
    return worst_overlap, min_gap


def validate(sys: CifsSystem, grid: int = 65) -> ValidationReport:
    """Check the CIFS axioms numerically. Failures are entries, never exceptions."""
    report = ValidationReport(system=sys.name)
    cone_ok = isinstance(sys.seed, (BoxSeed, DiskSeed))
    report.checks.append(AxiomCheck("seed_and_cone", cone_ok, sys.seed.diameter,
                                    type(sys.seed).__name__))

    boundary = sys.seed.boundary_grid(grid)
    worst_escape = 0.0
    for a in sys.letters:
        maps = sys.extend_maps(sys.identity_maps(len(boundary)), np.full(len(boundary), a))
        with np.errstate(all="ignore"):
            img = sys.apply_maps(maps, boundary)
        inside = sys.seed.contains(img) & np.all(np.isfinite(img), axis=1)
        if not np.all(inside):
            worst_escape = max(worst_escape, float(np.mean(~inside)))
    report.checks.append(AxiomCheck("maps_into_seed", worst_escape == 0.0, worst_escape,
                                    f"{sys.alphabet_size} branches on a {len(boundary)}-point grid"))

    s_max, iterate, witness = sys.contraction
    report.checks.append(AxiomCheck("uniform_contraction", s_max < 1.0, witness,
                                    f"s_max={s_max:.6g} via iterate {iterate}"))

    if sys.is_infinite:
        letters = np.array(list(sys.letters))
        _, hi = sys.derivative_bounds_maps(sys.extend_maps(sys.identity_maps(len(letters)), letters))
        decreasing = bool(np.all(np.diff(hi) <= 1e-15)) and hi[-1] < hi[0]
        report.checks.append(AxiomCheck("contraction_decay", decreasing, float(hi[-1]),
                                        f"sup|u_a'| at a={letters[-1]} (truncation {sys.truncation})"))

    k_bd = sys.distortion_constant
    report.checks.append(AxiomCheck("bounded_distortion", math.isfinite(k_bd), k_bd,
                                    f"words up to depth {DISTORTION_DEPTH}, safety x{DISTORTION_SAFETY:g}"))

    overlap, gap = _level_one_separation(sys)
    report.checks.append(AxiomCheck("open_set_condition", overlap <= SEED_TOL, overlap,
                                    "worst level-1 interior overlap"))
    report.checks.append(AxiomCheck("strong_separation", gap > SEED_TOL, gap,
                                    "smallest level-1 gap"))
    for c in report.checks:
        if not c.passed:
            logger.info("%s: %s failed (%s)", sys.name, c.name, c.detail)
    return report


# ============================================================================
# SYSTEM FILES
# ============================================================================

def seed_from_dict(spec: Dict[str, Any]) -> Seed:
    kind = spec.get("type", "box")
    if kind == "box":
        return BoxSeed(tuple(parse_number(v) for v in spec["lo"]),
                       tuple(parse_number(v) for v in spec["hi"]))
    if kind == "disk":
        return DiskSeed(tuple(parse_number(v) for v in spec["center"]), parse_number(spec["radius"]))
    raise SystemDefinitionError(f"unsupported seed shape {kind!r}; only box and disk satisfy the cone check")


def system_from_dict(spec: Dict[str, Any]) -> CifsSystem:
    if not isinstance(spec, dict):
        raise SystemDefinitionError(f"a system file holds a JSON object, not {type(spec).__name__}")
    try:
        return _system_from_dict(spec)
    except (KeyError, TypeError, AttributeError, IndexError) as exc:
        raise SystemDefinitionError(
            f"system {spec.get('name', '?')!r}: missing or malformed field {exc}") from exc


def _system_from_dict(spec: Dict[str, Any]) -> CifsSystem:
    try:
        kind = BranchKind(spec.get("kind", "similarity"))
    except ValueError as exc:
        raise SystemDefinitionError(f"unknown system kind {spec.get('kind')!r}") from exc
    if "seed" in spec:
        seed = seed_from_dict(spec["seed"])
    elif kind is BranchKind.GAUSS:
        seed = BoxSeed((0,), (1,))
    else:
        raise SystemDefinitionError("system file needs a seed")
    branches: List[Branch] = []
    for item in spec.get("maps", []):
        if kind is BranchKind.SIMILARITY:
            orth = item.get("orthogonal")
            branches.append(SimilarityBranch(
                ratio=parse_number(item["ratio"]),
                translation=tuple(parse_number(v) for v in item["translation"]),
                orthogonal=None if orth is None else tuple(tuple(parse_number(v) for v in row) for row in orth),
            ))
        elif kind is BranchKind.MOEBIUS:
            branches.append(MoebiusBranch(*[parse_complex(item[k]) for k in "abcd"]))
    return CifsSystem(name=spec.get("name", "system"), kind=kind, seed=seed, branches=tuple(branches),
                      truncation=spec.get("truncation"), measure_spec=spec.get("measure"))


def system_to_dict(sys: CifsSystem) -> Dict[str, Any]:
    out: Dict[str, Any] = {"name": sys.name, "kind": sys.kind.value, "dim": sys.dim,
                           "seed": sys.seed.to_dict()}
    if sys.branches:
        out["maps"] = [br.to_dict() for br in sys.branches]
    if sys.truncation is not None:
        out["truncation"] = sys.truncation
    if sys.measure_spec is not None:
        out["measure"] = sys.measure_spec
    return out


def load_system(path: Union[str, Path]) -> CifsSystem:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SystemDefinitionError(f"{path}: {exc}") from exc
    sys = system_from_dict(spec)
    logger.info("loaded %s system %s (%d letters)", sys.kind.value, sys.name, sys.alphabet_size)
    return sys


def save_system(sys: CifsSystem, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(system_to_dict(sys), indent=2) + "\n")


# ============================================================================
# REFERENCE SYSTEMS
# ============================================================================

def similarity_system(name: str, ratios: Sequence[Number], translations: Sequence[Sequence[Number]],
                      lo: Sequence[Number] = (0,), hi: Sequence[Number] = (1,)) -> CifsSystem:
    branches = tuple(SimilarityBranch(r, tuple(t)) for r, t in zip(ratios, translations))
    return CifsSystem(name, BranchKind.SIMILARITY, BoxSeed(tuple(lo), tuple(hi)), branches)


def middle_thirds() -> CifsSystem:
    return similarity_system("cantor", [Fraction(1, 3)] * 2, [(0,), (Fraction(2, 3),)])


def touching_binary() -> CifsSystem:
    return similarity_system("touching-binary", [Fraction(1, 2)] * 2, [(0,), (Fraction(1, 2),)])


def gauss_system(truncation: int = 50) -> CifsSystem:
    return CifsSystem("gauss", BranchKind.GAUSS, BoxSeed((0,), (1,)), truncation=truncation)


def reducible_plane() -> CifsSystem:
    """Two maps of the unit square fixing the line y = 0."""
    return similarity_system("reducible-plane", [Fraction(1, 3)] * 2,
                             [(0, 0), (Fraction(2, 3), 0)], lo=(0, 0), hi=(1, 1))


def schottky_system(r: float = 0.3, spread: float = 0.5, twist: float = 0.3) -> CifsSystem:
    """
    Three Moebius contractions of the unit disk onto disjoint disks
    D(c_k, r), c_k = spread * exp(2 pi i k / 3). Each branch is a disk
    automorphism z -> (z + b)/(1 + conj(b) z) scaled by r and moved to c_k.
    """
    branches = []
    for k in range(3):
        c = spread * np.exp(2j * np.pi * k / 3)
        b = twist * np.exp(1j * (2 * np.pi * k / 3 + 1.0))
        branches.append(MoebiusBranch.from_complex(r + c * np.conj(b), r * b + c, np.conj(b), 1.0))
    return CifsSystem("schottky", BranchKind.MOEBIUS, DiskSeed((0.0, 0.0), 1.0), tuple(branches))
