#!/usr/bin/env python3
"""
DIOPHANTINE LAB - BEST APPROXIMATIONS AND EXPONENTS OF IRRATIONALITY
====================================================================

Features:
- brute-force best approximations p/q for q = 1..Q_max (sup-norm, chunked numpy scan)
- exponent estimators for omega and omega_x:
    omega_hat    running max of the log-log record slope over decade checkpoints,
                 floored at the Dirichlet exponent (nondecreasing in Q_max)
    omega_ratio  max over the records of -log(error) / log q
- VWA flag at 1 + 1/d, VWMA flag at d + 1, flagged infinity on exact rational hits
- continued fractions: exact for rationals, mpmath for symbolic reals,
  float-limited for floats
- named points (golden, silver, sqrt2, sqrt3, pi, e, Liouville truncations)
  and sympy expressions, all reduced to their fractional parts where named
- extremality experiment over points sampled from a cylinder measure
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import mpmath as mp
import numpy as np
import sympy
from scipy.stats import linregress

from cifs import CifsSystem
from measurelab import map_probes
from thermo import CylinderMeasure

logger = logging.getLogger(__name__)

CHUNK = 1_000_000
DEFAULT_MARGINS = (0.1, 0.25, 0.5)
DEFAULT_DPS = 50
FIRST_CHECKPOINT = 1000

NAMED_POINTS = {
    "golden": "(sqrt(5) - 1)/2",
    "silver": "sqrt(2) - 1",
    "sqrt2": "sqrt(2) - 1",
    "sqrt3": "sqrt(3) - 1",
    "pi": "pi - 3",
    "e": "E - 2",
}


# ============================================================================
# POINTS
# ============================================================================

def liouville_truncation(n: int) -> sympy.Rational:
    """sum_{k=1..n} 10^(-k!)"""
    if n < 1:
        raise ValueError("Liouville truncation needs n >= 1")
    return sum((sympy.Rational(1, 10 ** math.factorial(k)) for k in range(1, n + 1)), sympy.Integer(0))


def named_expressions(name: str, liouville_n: int = 5) -> List[sympy.Expr]:
    """Comma-separated coordinates, each a named point or a sympy expression."""
    out = []
    for part in str(name).split(","):
        part = part.strip()
        if part == "liouville":
            out.append(liouville_truncation(liouville_n))
            continue
        try:
            expr = sympy.sympify(NAMED_POINTS.get(part, part))
        except (sympy.SympifyError, TypeError, SyntaxError) as exc:
            raise ValueError(f"cannot parse point coordinate {part!r}") from exc
        if not expr.is_number or expr.is_real is False:
            raise ValueError(f"point coordinate {part!r} is not a real number")
        out.append(expr)
    return out


def named_point(name: str, liouville_n: int = 5) -> np.ndarray:
    """Float coordinates of a named point, e.g. "golden", "sqrt2,sqrt3", "liouville"."""
    return np.array([float(e.evalf(30)) for e in named_expressions(name, liouville_n)])


def _as_point(x: Any) -> np.ndarray:
    if isinstance(x, str):
        return named_point(x)
    arr = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
    if arr.size == 0 or not np.isfinite(arr).all():
        raise ValueError(f"point needs finite coordinates, got {x!r}")
    return arr


# ============================================================================
# BEST APPROXIMATIONS
# ============================================================================

@dataclass(frozen=True)
class Approximation:
    q: int
    p: Tuple[int, ...]
    error: float        # sup-norm |x - p/q|
    mult_error: float   # prod_i |x_i - p_i/q|


def _scan(x: np.ndarray, q_max: int, multiplicative: bool) -> List[Approximation]:
    out: List[Approximation] = []
    best = math.inf
    for start in range(1, q_max + 1, CHUNK):
        q = np.arange(start, min(start + CHUNK, q_max + 1), dtype=float)
        p = np.rint(np.outer(q, x))
        diff = np.abs(x - p / q[:, None])
        err, mult = diff.max(axis=1), diff.prod(axis=1)
        key = mult if multiplicative else err
        previous = np.minimum.accumulate(np.concatenate([[best], key]))[:-1]
        for i in np.flatnonzero(key < previous):
            out.append(Approximation(int(q[i]), tuple(int(v) for v in p[i]), float(err[i]), float(mult[i])))
        best = min(best, float(key.min()))
        if best == 0.0:
            break
    return out


def best_approx(x: Any, q_max: int, multiplicative: bool = False) -> List[Approximation]:
    """
    Record-setting approximations: for each q, p_i = round(q x_i), kept when
    the error is strictly below every earlier one. multiplicative=True ranks
    by prod_i |x_i - p_i/q| instead of the sup-norm.
    """
    if int(q_max) != q_max or q_max < 1:
        raise ValueError(f"Q_max must be a positive integer, got {q_max}")
    return _scan(_as_point(x), int(q_max), multiplicative)


def checkpoints(q_max: int) -> List[int]:
    """Decade checkpoints 10^3, 10^4, ... up to q_max."""
    out, q = [], FIRST_CHECKPOINT
    while q <= q_max:
        out.append(q)
        q *= 10
    return out


def _exponents(records: Sequence[Approximation], multiplicative: bool, q_max: int,
               floor: float) -> Tuple[float, float]:
    """
    (omega_hat, max ratio) over records with q >= 2.

    omega_hat is the running max, over the decade checkpoints Q <= q_max, of
    the log-log slope through the records with q <= Q, never below the
    Dirichlet floor. Records up to a checkpoint do not depend on q_max, so
    the estimate is nondecreasing in q_max.
    """
    errs = [r.mult_error if multiplicative else r.error for r in records]
    if errs and errs[-1] == 0.0:
        return math.inf, math.inf
    pts = [(r.q, math.log(r.q), -math.log(e)) for r, e in zip(records, errs) if r.q >= 2]
    if not pts:
        return floor, math.nan
    q, lq, le = (np.array(col) for col in zip(*pts))
    ratio = float(np.max(le / lq))
    hat = floor
    for cap in checkpoints(q_max):
        upto = q <= cap
        if upto.sum() >= 2:
            hat = max(hat, float(linregress(lq[upto], le[upto]).slope))
    return hat, ratio


@dataclass
class DiophReport:
    point: np.ndarray
    q_max: int
    records: List[Approximation]
    mult_records: List[Approximation]
    omega_hat: float
    omega_ratio: float
    omega_mult_hat: float
    omega_mult_ratio: float

    @property
    def dim(self) -> int:
        return len(self.point)

    @property
    def exact_rational_hit(self) -> bool:
        return bool(self.records) and self.records[-1].error == 0.0

    @property
    def mult_exact_hit(self) -> bool:
        return bool(self.mult_records) and self.mult_records[-1].mult_error == 0.0

    @property
    def vwa(self) -> bool:
        return self.omega_hat > 1 + 1 / self.dim

    @property
    def vwma(self) -> bool:
        return self.omega_mult_hat > self.dim + 1

    def flags(self) -> Tuple[str, ...]:
        out = []
        if self.exact_rational_hit:
            out.append("exact_rational_hit")
        elif self.mult_exact_hit:
            out.append("mult_exact_hit")
        if self.vwa:
            out.append("vwa")
        if self.vwma:
            out.append("vwma")
        return tuple(out)

    def rows(self) -> List[Dict[str, object]]:
        return [{"q": r.q, "p": " ".join(str(v) for v in r.p), "error": r.error, "mult_error": r.mult_error}
                for r in self.records]


def diophantine_report(x: Any, q_max: int) -> DiophReport:
    point = _as_point(x)
    records = best_approx(point, q_max)
    mult_records = records if len(point) == 1 else best_approx(point, q_max, multiplicative=True)
    d = len(point)
    hat, ratio = _exponents(records, False, int(q_max), 1 + 1 / d)
    mult_hat, mult_ratio = _exponents(mult_records, True, int(q_max), d + 1.0)
    return DiophReport(point, int(q_max), records, mult_records, hat, ratio, mult_hat, mult_ratio)


def omega_estimate(x: Any, q_max: int) -> Tuple[float, float]:
    """(omega_hat, omega_mult_hat); infinity on an exact rational hit."""
    report = diophantine_report(x, q_max)
    return report.omega_hat, report.omega_mult_hat


# ============================================================================
# CONTINUED FRACTIONS
# ============================================================================

@dataclass
class ContinuedFraction:
    quotients: List[int]
    convergents: List[Tuple[int, int]]
    terminated: bool = False          # rational input, expansion complete
    precision_limited: bool = False   # stopped where the input precision ran out

    def value(self) -> Fraction:
        p, q = self.convergents[-1]
        return Fraction(p, q)


def real_value(x: Any, dps: int = DEFAULT_DPS) -> Union[Fraction, float, mp.mpf]:
    """Fraction for rationals, float for floats, mpmath mpf at dps digits otherwise."""
    if isinstance(x, bool):
        raise ValueError("boolean is not a real number")
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    if isinstance(x, mp.mpf):
        return x
    exprs = named_expressions(x) if isinstance(x, str) else [sympy.sympify(x)]
    if len(exprs) != 1:
        raise ValueError("continued fractions need a single real number")
    expr = exprs[0]
    if expr.is_Rational:
        return Fraction(int(expr.p), int(expr.q))
    with mp.workdps(dps):
        return mp.mpf(str(expr.evalf(dps + 10)))


def continued_fraction(x: Any, n_terms: int = 20, dps: int = DEFAULT_DPS) -> ContinuedFraction:
    """
    Partial quotients [a0; a1, a2, ...] and convergents p_k/q_k. Rationals are
    expanded exactly; a float is expanded as the binary rational it stores
    until |x - p_k/q_k| reaches float resolution; symbolic reals run in
    mpmath at dps digits with the matching cut-off.
    """
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    value = real_value(x, dps)
    if isinstance(value, Fraction):
        exact, tol = value, 0
    elif isinstance(value, float):
        exact, tol = Fraction(value), Fraction(4 * np.finfo(float).eps) * max(abs(Fraction(value)), 1)
    else:
        exact, tol = None, None

    out = ContinuedFraction([], [])
    p_prev, p = 0, 1
    q_prev, q = 1, 0
    with mp.workdps(dps):
        rest = exact if exact is not None else value
        cutoff = mp.mpf(10) ** (-(dps - 10)) * max(abs(value), 1) if exact is None else None
        for _ in range(n_terms):
            a = int(math.floor(rest)) if exact is not None else int(mp.floor(rest))
            p_prev, p = p, a * p + p_prev
            q_prev, q = q, a * q + q_prev
            out.quotients.append(a)
            out.convergents.append((p, q))
            frac = rest - a
            if exact is not None:
                if frac == 0:
                    out.terminated = True
                    break
                if tol and abs(exact - Fraction(p, q)) <= tol:
                    out.precision_limited = True
                    break
                rest = 1 / frac
            else:
                if abs(value - mp.mpf(p) / q) <= cutoff:
                    out.precision_limited = True
                    break
                rest = 1 / frac
    return out


# ============================================================================
# EXTREMALITY EXPERIMENT
# ============================================================================

@dataclass
class ExtremalityReport:
    measure: str
    q_max: int
    depth: int
    noise_floor: float
    target_floor: float
    reports: List[DiophReport]
    radii: np.ndarray
    margins: Tuple[float, ...] = DEFAULT_MARGINS
    threshold: float = 2.0

    @property
    def downgraded(self) -> bool:
        """Coding error above Q_max^-(d+2): large omega_hat values are not trustworthy."""
        return self.noise_floor > self.target_floor

    @property
    def reliable_exponent(self) -> float:
        """Largest exponent the coding precision resolves: -log(noise) / log(Q_max)."""
        if self.noise_floor <= 0:
            return math.inf
        return -math.log(self.noise_floor) / math.log(self.q_max)

    @property
    def omegas(self) -> np.ndarray:
        return np.array([r.omega_hat for r in self.reports])

    @property
    def exact_hits(self) -> int:
        return sum(r.exact_rational_hit for r in self.reports)

    @property
    def median(self) -> float:
        return float(np.median(self.omegas))

    def fractions(self) -> Dict[float, float]:
        omegas = self.omegas
        return {m: float(np.mean(omegas > self.threshold + m)) for m in self.margins}

    def rows(self) -> List[Dict[str, object]]:
        return [{"point": i, "coords": " ".join(f"{v:.17g}" for v in r.point), "omega_hat": r.omega_hat,
                 "omega_mult_hat": r.omega_mult_hat, "error_radius": float(rad), "flags": "|".join(r.flags())}
                for i, (r, rad) in enumerate(zip(self.reports, self.radii))]

    def summary_rows(self) -> List[Dict[str, object]]:
        rows = [{"quantity": "median_omega_hat", "value": self.median},
                {"quantity": "exact_hits", "value": self.exact_hits},
                {"quantity": "noise_floor", "value": self.noise_floor},
                {"quantity": "reliable_exponent", "value": self.reliable_exponent},
                {"quantity": "downgraded", "value": int(self.downgraded)}]
        rows += [{"quantity": f"vwa_fraction_margin_{m:g}", "value": f} for m, f in self.fractions().items()]
        return rows


def coding_depth(sys: CifsSystem, measure: CylinderMeasure, target: float) -> int:
    """Smallest depth with s_max^depth * diam(X) <= target, capped by the weight table."""
    diam = sys.seed.diameter
    depth = 1 if diam <= target else math.ceil(math.log(target / diam) / math.log(sys.s_max))
    if measure.max_level is not None and depth > measure.max_level:
        logger.warning("coding depth %d capped at the weight table level %d", depth, measure.max_level)
        depth = measure.max_level
    return max(1, depth)


def extremality_experiment(gw: CylinderMeasure, sys: CifsSystem, n_points: int = 200, q_max: int = 10**4,
                           seed: int = 0, margins: Sequence[float] = DEFAULT_MARGINS,
                           depth: Optional[int] = None, threads: int = 1) -> ExtremalityReport:
    """Distribution of omega_hat over n_points points sampled from the measure."""
    if n_points < 1:
        raise ValueError("extremality experiment needs at least one point")
    d = sys.dim
    target = float(q_max) ** -(d + 2)
    if depth is None:
        depth = coding_depth(sys, gw, target)
    pts, radii = gw.sample_points(np.random.default_rng(seed), n_points, depth)
    reports = map_probes(lambda p: diophantine_report(p, q_max), list(pts), threads)
    report = ExtremalityReport(getattr(gw, "name", type(gw).__name__), int(q_max), depth,
                               float(np.max(radii)), target, reports, np.asarray(radii), tuple(margins), 1 + 1 / d)
    if report.downgraded:
        logger.warning("extremality report downgraded: coding error %.3g exceeds Q_max^-(d+2) = %.3g "
                       "(omega_hat above %.3f is unresolved)", report.noise_floor, target, report.reliable_exponent)
    logger.info("extremality: %d points, median omega_hat %.4f, %d exact hits", n_points, report.median,
                report.exact_hits)
    return report
