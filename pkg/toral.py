#!/usr/bin/env python3
"""
TORAL ENDOMORPHISMS - EXACT PERIODIC SHADOWS OF ORBIT MEASURES
==============================================================

T([x]) = [Mx] on R^d / Z^d for an integer matrix M without eigenvalues on
the unit circle. For expanding M an orbit segment of x is shadowed by a
periodic point y built from the digit itinerary of x. y is rational, so the
orbit measure of y charges only points of infinite irrationality exponent
while staying close to the orbit measure of x.

Features:
- hyperbolicity certificate (sympy determinant, numpy eigenvalues)
- exact orbits of rational points (fractions.Fraction), mpmath orbits of reals
- periodic shadow: y = (M^N - I)^-1 v solved exactly with sympy
- co-Lipschitz distance between orbit measures
  (POT: wasserstein1_circle in d = 1, emd2 plus witness functions in d >= 2)
- mass of U_n = union over q >= n of B(p/q, q^-n)
- shadow pipeline: shadow, both orbit measures, distance, U_n masses
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, List, Optional, Sequence, Tuple, Union

import mpmath as mp
import numpy as np
import ot
import sympy

try:
    from ot import wasserstein1_circle
except ImportError:
    try:
        from ot.lp.solver_circle import wasserstein1_circle
    except ImportError:
        from ot.lp.solver_1d import wasserstein1_circle

from dioph import named_expressions

logger = logging.getLogger(__name__)

Coord = Union[Fraction, mp.mpf, float]
Point = Tuple[Coord, ...]

DEFAULT_DPS = 30
HYPERBOLIC_TOL = 1e-9
ATOM_CAP = 10_000
OT_ATOM_CAP = 2_000
LIOUVILLE_Q_CAP = 10**6
FLOAT_TOL = 1e-15
CHUNK = 200_000


class NonHyperbolicError(ValueError):
    pass


class SingularMatrixError(ValueError):
    pass


class UnsupportedConstructionError(ValueError):
    pass


class EmptyMeasureError(ValueError):
    pass


# ============================================================================
# SYSTEM
# ============================================================================

@dataclass(frozen=True)
class ToralSystem:
    matrix: Tuple[Tuple[int, ...], ...]
    moduli: Tuple[float, ...]

    @property
    def d(self) -> int:
        return len(self.matrix)

    @property
    def expanding(self) -> bool:
        return min(self.moduli) > 1.0

    @property
    def gap(self) -> float:
        """Distance of the eigenvalue moduli from 1."""
        return min(abs(m - 1.0) for m in self.moduli)

    def as_float(self) -> np.ndarray:
        return np.array(self.matrix, dtype=float)


def parse_matrix(value: Any) -> Tuple[Tuple[int, ...], ...]:
    """2, [[2,1],[1,1]] or "2,1;1,1" -> square integer matrix."""
    if isinstance(value, str):
        rows = [row.split(",") for row in value.strip().split(";")]
    elif isinstance(value, np.ndarray):
        rows = np.atleast_2d(value).tolist()
    elif isinstance(value, (list, tuple)):
        rows = [list(r) if isinstance(r, (list, tuple, np.ndarray)) else [r] for r in value]
        if len(rows) > 1 and all(len(r) == 1 for r in rows):
            rows = [[r[0] for r in rows]]
    else:
        rows = [[value]]
    out = []
    for row in rows:
        ints = []
        for v in row:
            f = Fraction(str(v).strip()) if isinstance(v, str) else Fraction(v)
            if f.denominator != 1:
                raise ValueError(f"toral matrices need integer entries, got {v!r}")
            ints.append(int(f))
        out.append(tuple(ints))
    if any(len(r) != len(out) for r in out):
        raise ValueError(f"toral matrix must be square, got {len(out)} rows of lengths {[len(r) for r in out]}")
    return tuple(out)


def validate_hyperbolic(M: Any) -> ToralSystem:
    rows = parse_matrix(M)
    if sympy.Matrix(rows).det() == 0:
        raise SingularMatrixError(f"matrix {rows} is singular")
    eig = np.linalg.eigvals(np.array(rows, dtype=float))
    moduli = np.abs(eig)
    bad = np.flatnonzero(np.abs(moduli - 1.0) < HYPERBOLIC_TOL)
    if bad.size:
        raise NonHyperbolicError(f"eigenvalue {eig[bad[0]]:.12g} of {rows} lies on the unit circle")
    sys = ToralSystem(rows, tuple(sorted(float(m) for m in moduli)))
    logger.info("toral system %s: moduli %s, expanding=%s", rows, sys.moduli, sys.expanding)
    return sys


# ============================================================================
# POINTS AND ORBITS
# ============================================================================

def _coordinate(v: Any) -> Coord:
    if isinstance(v, bool):
        raise ValueError("boolean is not a coordinate")
    if isinstance(v, (int, np.integer, Fraction)):
        return Fraction(int(v)) if not isinstance(v, Fraction) else v
    if isinstance(v, (float, np.floating)):
        return mp.mpf(float(v))
    if isinstance(v, mp.mpf):
        return v
    expr = sympy.sympify(v)
    if expr.is_Rational:
        return Fraction(int(expr.p), int(expr.q))
    if not expr.is_number or expr.is_real is False:
        raise ValueError(f"coordinate {v!r} is not a real number")
    return mp.mpf(str(expr.evalf(mp.mp.dps + 10)))


def torus_point(x: Any, d: int) -> Point:
    """Coordinates as Fractions when all are rational, otherwise mpmath numbers at the current precision."""
    if isinstance(x, str):
        coords = [_coordinate(e) for e in named_expressions(x)]
    elif np.ndim(x) == 0:
        coords = [_coordinate(x)]
    else:
        coords = [_coordinate(v) for v in x]
    if len(coords) != d:
        raise ValueError(f"point has {len(coords)} coordinates, the torus has dimension {d}")
    if not all(isinstance(c, Fraction) for c in coords):
        coords = [mp.mpf(c.numerator) / c.denominator if isinstance(c, Fraction) else c for c in coords]
    return tuple(_frac(c) for c in coords)


def _frac(c: Coord) -> Coord:
    if isinstance(c, Fraction):
        return c % 1
    return c - mp.floor(c)


def _step(sys: ToralSystem, pt: Point) -> Tuple[Point, Tuple[int, ...]]:
    """(T pt, digit floor(M pt))"""
    raw = [sum((a * c for a, c in zip(row, pt)), 0) for row in sys.matrix]
    digits = tuple(int(math.floor(r)) if isinstance(r, Fraction) else int(mp.floor(r)) for r in raw)
    return tuple(r - k for r, k in zip(raw, digits)), digits


def orbit_dps(sys: ToralSystem, N: int) -> int:
    """Working precision for N steps of a real orbit: digits lost per step plus a margin."""
    growth = max(sum(abs(a) for a in row) for row in sys.matrix)
    return DEFAULT_DPS + int(math.ceil(N * math.log10(max(growth, 2))))


def orbit(sys: ToralSystem, x: Any, N: int, dps: Optional[int] = None) -> List[Point]:
    """(x, Tx, ..., T^{N-1}x) reduced into [0,1)^d; exact for rational x."""
    if N < 1:
        raise ValueError("orbit length N must be >= 1")
    with mp.workdps(dps or orbit_dps(sys, N)):
        pt = torus_point(x, sys.d)
        out = [pt]
        for _ in range(N - 1):
            pt, _ = _step(sys, pt)
            out.append(pt)
    return out


def torus_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance on R^d / Z^d."""
    diff = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 1.0
    return np.linalg.norm(np.minimum(diff, 1.0 - diff), axis=-1)


def _point_gap(a: Point, b: Point, wrap: bool = True) -> float:
    """Torus distance (Euclidean when wrap is off), differences taken before rounding to float."""
    total = 0.0
    for u, v in zip(a, b):
        if isinstance(u, Fraction) and isinstance(v, Fraction):
            diff = u - v
            if wrap:
                diff -= round(diff)
        else:
            u = mp.mpf(u.numerator) / u.denominator if isinstance(u, Fraction) else u
            v = mp.mpf(v.numerator) / v.denominator if isinstance(v, Fraction) else v
            diff = u - v
            if wrap:
                diff -= mp.nint(diff)
        total += float(diff) ** 2
    return math.sqrt(total)


@dataclass(frozen=True)
class OrbitMeasure:
    """Uniform measure (1/N) sum of delta at the atoms."""
    atoms: Tuple[Point, ...]

    def __post_init__(self):
        if not self.atoms:
            raise EmptyMeasureError("orbit measure has no atoms")

    @property
    def n(self) -> int:
        return len(self.atoms)

    @property
    def d(self) -> int:
        return len(self.atoms[0])

    @property
    def exact(self) -> bool:
        return all(isinstance(c, Fraction) for a in self.atoms for c in a)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def points(self) -> np.ndarray:
        return np.array([[float(c) for c in a] for a in self.atoms])


def orbit_measure(sys: ToralSystem, x: Any, N: int, dps: Optional[int] = None) -> OrbitMeasure:
    return OrbitMeasure(tuple(orbit(sys, x, N, dps)))


# ============================================================================
# PERIODIC SHADOW
# ============================================================================

@dataclass
class ShadowResult:
    y: Point
    period: int
    m: int
    quality: float              # max over i <= N-m-1 of dist(T^i x, T^i y)
    bound: float                # max_k>m ||M^-k|| * |T^N x - y_raw|
    digits: List[Tuple[int, ...]]
    orbit_x: List[Point]        # N + 1 points
    orbit_y: List[Point]        # N + 1 points, first == last

    @property
    def is_periodic(self) -> bool:
        return self.orbit_y[0] == self.orbit_y[-1]

    @property
    def denominator(self) -> int:
        out = 1
        for c in self.y:
            out = out * c.denominator // math.gcd(out, c.denominator)
        return out


def periodic_shadow(sys: ToralSystem, x: Any, N: int, m: int, dps: Optional[int] = None) -> ShadowResult:
    """
    Repeat the first N digits floor(M T^i x) of x periodically; the point with
    that itinerary solves (M^N - I) y = sum_i M^(N-1-i) v_i exactly. Only
    expanding M have a digit coding.
    """
    if not sys.expanding:
        raise UnsupportedConstructionError(
            f"periodic shadows need an expanding matrix (moduli {sys.moduli}); hyperbolic maps with a "
            "contracting direction need stable/unstable shadowing (Bowen shadowing), "
            "which is not implemented")
    if not (N > m >= 1):
        raise ValueError(f"need N > m >= 1, got N={N}, m={m}")
    dps = dps or orbit_dps(sys, N + 1)
    with mp.workdps(dps):
        pt = torus_point(x, sys.d)
        xs, digits = [pt], []
        for _ in range(N):
            pt, v = _step(sys, pt)
            xs.append(pt)
            digits.append(v)

        M = sympy.Matrix(sys.matrix)
        acc = sympy.zeros(sys.d, 1)
        for v in digits:
            acc = M * acc + sympy.Matrix(v)
        A = M**N - sympy.eye(sys.d)
        if A.det() == 0:
            raise SingularMatrixError(f"M^{N} - I is singular for {sys.matrix}")
        y_raw = [Fraction(int(r.p), int(r.q)) for r in A.LUsolve(acc)]
        y = tuple(c % 1 for c in y_raw)
        ys = orbit(sys, y, N + 1)
        quality = max(_point_gap(xs[i], ys[i]) for i in range(N - m))
        tail = _point_gap(xs[N], tuple(y_raw), wrap=False)

    inv = np.linalg.inv(sys.as_float())
    power, norms = np.linalg.matrix_power(inv, m), []
    for _ in range(m + 1, N + 1):
        power = power @ inv
        norms.append(np.linalg.norm(power, 2))
    bound = float(max(norms)) * tail
    result = ShadowResult(y, N, m, quality, bound, digits, xs, ys)
    logger.info("periodic shadow: N=%d m=%d quality=%.3g bound=%.3g denominator=%d",
                N, m, quality, bound, result.denominator)
    return result


# ============================================================================
# CO-LIPSCHITZ DISTANCE
# ============================================================================

@dataclass(frozen=True)
class ColipBound:
    """sup over 1-Lipschitz f with values in [-1, 1] of |mu(f) - nu(f)|, bracketed."""
    lower: float
    upper: float
    method: str

    @property
    def value(self) -> float:
        return (self.lower + self.upper) / 2.0


def _torus_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return torus_distance(a[:, None, :], b[None, :, :])


def colip_distance(mu: OrbitMeasure, nu: OrbitMeasure) -> ColipBound:
    """
    d = 1: exact circle transport (capped at 2, the range of the test functions).
    d >= 2: transport cost from ot.emd2 above, distance-to-support witness
    functions below.
    """
    if mu.d != nu.d:
        raise ValueError(f"measures live on tori of dimension {mu.d} and {nu.d}")
    if max(mu.n, nu.n) > ATOM_CAP:
        raise ValueError(f"co-Lipschitz distance supports at most {ATOM_CAP} atoms per measure")
    a, b = mu.points(), nu.points()
    if mu.d == 1:
        w = min(float(np.ravel(wasserstein1_circle(a[:, 0], b[:, 0]))[0]), 2.0)
        return ColipBound(w, w, "circle-w1")
    if max(mu.n, nu.n) > OT_ATOM_CAP:
        raise ValueError(f"co-Lipschitz distance in d >= 2 supports at most {OT_ATOM_CAP} atoms per measure")
    cost = _torus_cost(a, b)
    upper = min(float(ot.emd2(mu.weights, nu.weights, cost, numItermax=1_000_000)), 2.0)
    witness = np.minimum(cost, 1.0)
    lower = max(float(witness.min(axis=1) @ mu.weights), float(witness.min(axis=0) @ nu.weights))
    return ColipBound(min(lower, upper), upper, "emd2")


# ============================================================================
# LIOUVILLE MASS
# ============================================================================

@dataclass(frozen=True)
class LiouvilleMass:
    n: int
    mass: float
    undecided: float
    q_scanned: int


def _in_u_n(x: np.ndarray, n: int, q_max: int) -> Optional[bool]:
    """Witness p/q with q in [n, q_max]: True, None when only ambiguous candidates exist, else False."""
    ambiguous = False
    for start in range(n, q_max + 1, CHUNK):
        q = np.arange(start, min(start + CHUNK, q_max + 1), dtype=float)
        err = np.abs(x - np.rint(np.outer(q, x)) / q[:, None]).max(axis=1)
        radius = q ** (-float(n))
        if np.any(err < radius - FLOAT_TOL):
            return True
        ambiguous |= bool(np.any(np.abs(err - radius) <= FLOAT_TOL))
    return None if ambiguous else False


def liouville_mass(nu: OrbitMeasure, n: int, q_cap: int = LIOUVILLE_Q_CAP) -> LiouvilleMass:
    """
    nu-mass of U_n. A rational atom a/q0 lies in U_n through ka/(kq0) with
    kq0 >= n. Other atoms are scanned in floating point over q >= n up to
    the largest q whose radius q^-n still exceeds the float resolution; atoms
    without a witness in that range count as outside.
    """
    if n < 1:
        raise ValueError("U_n needs n >= 1")
    q_max = min(q_cap, int(FLOAT_TOL ** (-1.0 / n)))
    w = 1.0 / nu.n
    inside = undecided = 0.0
    for atom in nu.atoms:
        if all(isinstance(c, Fraction) for c in atom):
            inside += w
            continue
        if q_max < n:
            undecided += w
            continue
        verdict = _in_u_n(np.array([float(c) for c in atom]), n, q_max)
        if verdict is None:
            undecided += w
        elif verdict:
            inside += w
    if undecided:
        logger.info("U_%d mass: %.3g of the measure undecided at float precision", n, undecided)
    return LiouvilleMass(n, inside, undecided, max(0, q_max - n + 1))


# ============================================================================
# PIPELINE
# ============================================================================

@dataclass
class PipelineReport:
    shadow: ShadowResult
    mu: OrbitMeasure
    nu: OrbitMeasure
    distance: ColipBound
    liouville: List[LiouvilleMass] = field(default_factory=list)

    @property
    def budget(self) -> float:
        """quality + m/N: the orbits agree up to the quality except on the last m steps."""
        return self.shadow.quality + self.shadow.m / self.shadow.period

    def rows(self):
        s = self.shadow
        return [{"N": s.period, "m": s.m, "shadow_quality": s.quality, "colip_lower": self.distance.lower,
                 "colip_upper": self.distance.upper, "budget": self.budget, "n": lm.n,
                 "liouville_mass": lm.mass, "undecided": lm.undecided} for lm in self.liouville]


def shadow_pipeline(sys: ToralSystem, x: Any, N: int, m: int, n_max: int = 10,
                    dps: Optional[int] = None) -> PipelineReport:
    """Shadow x, compare the orbit measures of x and y, and weigh U_1..U_n_max under the shadow measure."""
    shadow = periodic_shadow(sys, x, N, m, dps)
    mu = OrbitMeasure(tuple(shadow.orbit_x[:N]))
    nu = OrbitMeasure(tuple(shadow.orbit_y[:N]))
    report = PipelineReport(shadow, mu, nu, colip_distance(mu, nu),
                            [liouville_mass(nu, n) for n in range(1, n_max + 1)])
    logger.info("shadow pipeline: colip <= %.4g (budget %.4g)", report.distance.upper, report.budget)
    return report
