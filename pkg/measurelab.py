#!/usr/bin/env python3
"""
MEASURE LAB - MASSES OF BALLS AND THICKENED SURFACES
====================================================

Every mass is a bracket [lower, upper] obtained from an adaptive cylinder
cover: cylinders whose image lies inside the target count towards both ends,
cylinders that straddle its boundary are refined until the requested level
and then count towards the upper end only. Atomic measures and interval
densities are evaluated exactly.

Features:
- hyperplanes (points when d = 1) and spheres, closed thickenings N(L, t)
- ball_mass / neighborhood_mass / thickening_mass with brackets
- local dimension slope fits (scipy linregress)
- Federer (doubling) check with bracket-safe ratios
- decay fits in absolute, quasi(gamma) and decaying mode (envelope fit)
- global decay scan over many surfaces
- kappa / r search for the escape argument and its Monte Carlo check
- dimension-zero witness table
- probes run in a thread pool with per-probe seeds (sha256 of the descriptor)
"""

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import linregress

from cifs import CifsSystem, Regions
from symbolic import Word, as_word, is_prefix
from thermo import AtomicWeights, CylinderMeasure, DensityWeights, LevelError

logger = logging.getLogger(__name__)

TOUCH_TOL = 1e-9
REFINE = 0.01
LEVEL_CAP = 60
STRADDLE_CAP = 200_000
DEFAULT_OFFSETS = (-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)


class DegenerateProbeError(ValueError):
    """Every probe had an empty ball (mass bracket zero)."""


class UndefinedDimensionError(ValueError):
    pass


# ============================================================================
# SURFACES AND EVENTS
# ============================================================================

@dataclass(frozen=True)
class Hyperplane:
    """L = {y : <normal, y> = offset}; a point when d = 1."""
    normal: Tuple[float, ...]
    offset: float

    def __post_init__(self):
        if abs(float(np.linalg.norm(self.normal)) - 1.0) > 1e-12:
            raise ValueError(f"hyperplane normal must be a unit vector, got {self.normal}")

    @classmethod
    def through(cls, point: Sequence[float], normal: Sequence[float]) -> "Hyperplane":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        n = np.where(np.abs(n) < 1e-15, 0.0, n)
        return cls(tuple(float(v) for v in n), float(np.dot(n, np.asarray(point, dtype=float))))

    @classmethod
    def point(cls, c: float) -> "Hyperplane":
        return cls((1.0,), float(c))

    @property
    def dim(self) -> int:
        return len(self.normal)

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.abs(np.atleast_2d(points) @ np.asarray(self.normal) - self.offset)

    def distance_range(self, regions: Regions) -> Tuple[np.ndarray, np.ndarray]:
        pmin, pmax = regions.projection_range(np.asarray(self.normal))
        a, b = pmin - self.offset, pmax - self.offset
        near = np.where((a <= 0) & (b >= 0), 0.0, np.minimum(np.abs(a), np.abs(b)))
        return near, np.maximum(np.abs(a), np.abs(b))

    def intervals(self, width: float) -> List[Tuple[float, float]]:
        c = self.offset / self.normal[0]
        return [(c - width, c + width)]

    def describe(self) -> str:
        return f"plane n={tuple(round(v, 6) for v in self.normal)} c={self.offset:.6g}"


@dataclass(frozen=True)
class Sphere:
    center: Tuple[float, ...]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:
        return len(self.center)

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.abs(np.linalg.norm(np.atleast_2d(points) - np.asarray(self.center), axis=1) - self.radius)

    def distance_range(self, regions: Regions) -> Tuple[np.ndarray, np.ndarray]:
        near, far = regions.point_distance_range(np.asarray(self.center))
        a, b = near - self.radius, far - self.radius
        lo = np.where((a <= 0) & (b >= 0), 0.0, np.minimum(np.abs(a), np.abs(b)))
        return lo, np.maximum(np.abs(a), np.abs(b))

    def intervals(self, width: float) -> List[Tuple[float, float]]:
        z, r = self.center[0], self.radius
        return [(z - r - width, z - r + width), (z + r - width, z + r + width)]

    def describe(self) -> str:
        return f"sphere c={tuple(round(v, 6) for v in self.center)} r={self.radius:.6g}"


Surface = Union[Hyperplane, Sphere]


@dataclass(frozen=True)
class EventSet:
    """Union of the cylinders [e]; EventSet.full() is the whole symbolic space."""
    words: Tuple[Word, ...]

    def __post_init__(self):
        words = tuple(sorted({as_word(w) for w in self.words}, key=len))
        kept: List[Word] = []
        for w in words:
            if not any(is_prefix(k, w) for k in kept):
                kept.append(w)
        object.__setattr__(self, "words", tuple(kept))

    @classmethod
    def full(cls) -> "EventSet":
        return cls(((),))

    @property
    def is_full(self) -> bool:
        return self.words == ((),)

    def classify(self, words: Sequence[Word]) -> Tuple[np.ndarray, np.ndarray]:
        inside = np.array([any(is_prefix(e, w) for e in self.words) for w in words], dtype=bool)
        outside = np.array([not ins and not any(is_prefix(w, e) for e in self.words)
                            for w, ins in zip(words, inside)], dtype=bool)
        return inside, outside


# ============================================================================
# MASS BRACKETS
# ============================================================================

@dataclass(frozen=True)
class MassBracket:
    lower: float
    upper: float
    level: int

    @property
    def value(self) -> float:
        return (self.lower + self.upper) / 2.0

    @property
    def error(self) -> float:
        return (self.upper - self.lower) / 2.0

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class _Target:
    """B(x, rho) intersected with N(surface, width); either part may be absent."""
    x: Optional[np.ndarray] = None
    rho: Optional[float] = None
    surface: Optional[Surface] = None
    width: float = 0.0

    @property
    def scale(self) -> float:
        scales = [s for s in (self.rho, self.width if self.surface is not None else None) if s]
        return min(scales) if scales else 1.0

    def classify(self, regions: Regions) -> Tuple[np.ndarray, np.ndarray]:
        n = len(regions)
        inside, outside = np.ones(n, dtype=bool), np.zeros(n, dtype=bool)
        if self.x is not None:
            near, far = regions.point_distance_range(self.x)
            lim = self.rho * (1 + TOUCH_TOL)
            inside &= far <= lim
            outside |= near > lim
        if self.surface is not None:
            near, far = self.surface.distance_range(regions)
            lim = self.width * (1 + TOUCH_TOL) + 1e-300
            inside &= far <= lim
            outside |= near > lim
        return inside & ~outside, outside

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        ok = np.ones(len(pts), dtype=bool)
        if self.x is not None:
            ok &= np.linalg.norm(pts - self.x, axis=1) <= self.rho * (1 + TOUCH_TOL)
        if self.surface is not None:
            ok &= self.surface.distance(pts) <= self.width * (1 + TOUCH_TOL)
        return ok

    def intervals(self) -> List[Tuple[float, float]]:
        ivs = [(-math.inf, math.inf)]
        if self.x is not None:
            ivs = _intersect(ivs, [(self.x[0] - self.rho, self.x[0] + self.rho)])
        if self.surface is not None:
            ivs = _intersect(ivs, self.surface.intervals(self.width))
        return ivs


def _merge(ivs: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    out: List[Tuple[float, float]] = []
    for a, b in sorted(ivs):
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _intersect(xs, ys) -> List[Tuple[float, float]]:
    out = []
    for a1, b1 in _merge(xs):
        for a2, b2 in _merge(ys):
            lo, hi = max(a1, a2), min(b1, b2)
            if lo <= hi:
                out.append((lo, hi))
    return _merge(out)


def level_for_scale(sys: CifsSystem, measure: CylinderMeasure, scale: float,
                    level: Optional[int] = None) -> int:
    """Cover depth whose cylinders are ~REFINE * scale, or the requested level."""
    if level is not None:
        if level < 0:
            raise ValueError("level must be >= 0")
        measure.check_level(level)
        return level
    diam = sys.seed.diameter
    n = 1 if scale >= diam else math.ceil(math.log(REFINE * scale / diam) / math.log(sys.s_max))
    n = max(1, min(n, LEVEL_CAP))
    if measure.max_level is not None:
        n = min(n, measure.max_level)
    return n


def _cover_mass(measure: CylinderMeasure, sys: CifsSystem, target: _Target, level: int,
                event: Optional[EventSet]) -> MassBracket:
    letters = np.array(list(sys.letters))
    m = len(letters)
    words: List[Word] = [()]
    weights = np.array([1.0])
    maps = sys.identity_maps(1)
    lower = 0.0
    pending = 0.0
    for depth in range(level + 1):
        inside, outside = target.classify(sys.regions(maps))
        if event is not None and not event.is_full:
            ev_in, ev_out = event.classify(words)
            inside, outside = inside & ev_in, outside | ev_out
        lower += float(weights[inside].sum())
        straddle = np.flatnonzero(~inside & ~outside & (weights > 0))
        if depth == level or len(straddle) == 0:
            pending = float(weights[straddle].sum())
            break
        if len(straddle) * m > STRADDLE_CAP:
            logger.warning("cover stopped at level %d: %d straddling cylinders", depth, len(straddle))
            pending = float(weights[straddle].sum())
            break
        probs = np.concatenate([measure.child_probabilities(words[i]) for i in straddle])
        child_w = np.repeat(weights[straddle], m) * probs
        parent = np.repeat(straddle, m)
        child_letters = np.tile(letters, len(straddle))
        keep = child_w > 0
        maps = sys.extend_maps(maps.take(parent[keep]), child_letters[keep])
        words = [words[p] + (int(a),) for p, a in zip(parent[keep], child_letters[keep])]
        weights = child_w[keep]
    return MassBracket(lower, min(1.0, lower + pending), level)


def _atomic_mass(measure: AtomicWeights, target: _Target, event: Optional[EventSet]) -> MassBracket:
    total = 0.0
    for atom in measure.atoms:
        if event is not None and not any(atom.letters(len(e)) == e for e in event.words):
            continue
        if target.contains(measure.atom_point(atom))[0]:
            total += atom.mass
    return MassBracket(total, total, 0)


def _density_mass(measure: DensityWeights, sys: CifsSystem, target: _Target,
                  event: Optional[EventSet]) -> MassBracket:
    ivs = target.intervals()
    if event is not None and not event.is_full:
        reg = sys.regions(sys.cylinder_maps(list(event.words)))
        ivs = _intersect(ivs, list(zip(reg.lo[:, 0], reg.hi[:, 0])))
    mass = float(sum(measure.cdf(b) - measure.cdf(a) for a, b in ivs))
    return MassBracket(mass, mass, 0)


def target_mass(measure: CylinderMeasure, sys: CifsSystem, target: _Target, level: Optional[int] = None,
                event: Optional[EventSet] = None) -> MassBracket:
    if isinstance(measure, AtomicWeights):
        return _atomic_mass(measure, target, event)
    if isinstance(measure, DensityWeights):
        return _density_mass(measure, sys, target, event)
    return _cover_mass(measure, sys, target, level_for_scale(sys, measure, target.scale, level), event)


def ball_mass(gw: CylinderMeasure, sys: CifsSystem, x: Sequence[float], rho: float,
              level: Optional[int] = None, event: Optional[EventSet] = None) -> MassBracket:
    """Bracket on mu(B(x, rho) ∩ E)."""
    if rho <= 0:
        raise ValueError("ball radius must be positive")
    return target_mass(gw, sys, _Target(np.asarray(x, dtype=float).reshape(-1), float(rho)), level, event)


def neighborhood_mass(gw: CylinderMeasure, sys: CifsSystem, surface: Surface, beta: float,
                      x: Sequence[float], rho: float, level: Optional[int] = None,
                      event: Optional[EventSet] = None, width: Optional[float] = None) -> MassBracket:
    """Bracket on mu(N(L, beta*rho) ∩ B(x, rho) ∩ E); width overrides beta*rho."""
    if rho <= 0 or beta <= 0:
        raise ValueError("rho and beta must be positive")
    t = beta * rho if width is None else width
    target = _Target(np.asarray(x, dtype=float).reshape(-1), float(rho), surface, float(t))
    return target_mass(gw, sys, target, level, event)


def thickening_mass(gw: CylinderMeasure, sys: CifsSystem, surface: Surface, width: float,
                    level: Optional[int] = None, event: Optional[EventSet] = None) -> MassBracket:
    """Bracket on mu(N(L, width) ∩ E)."""
    return target_mass(gw, sys, _Target(surface=surface, width=float(width)), level, event)


# ============================================================================
# SEEDS AND SURFACE SAMPLING
# ============================================================================

def probe_seed(base: int, *descriptor) -> int:
    """Reproducible per-probe seed: sha256 of the base seed and the probe descriptor."""
    text = ":".join([str(base)] + [repr(d) for d in descriptor])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def _random_normals(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    g = rng.normal(size=(count, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _seed_projection_range(sys: CifsSystem, normal: np.ndarray) -> Tuple[float, float]:
    reg = sys.regions(sys.identity_maps(1))
    lo, hi = reg.projection_range(normal)
    return float(lo[0]), float(hi[0])


def sample_surfaces(sys: CifsSystem, count: int, rng: np.random.Generator, kind: str = "hyperplane",
                    support: Optional[np.ndarray] = None) -> List[Surface]:
    """
    Random surfaces: unit normals uniform on the sphere with offsets uniform over
    the projection of the seed; sphere centres uniform on the seed with
    log-uniform radii. With support points, hyperplanes pass through them.
    """
    d = sys.dim
    out: List[Surface] = []
    if kind not in ("hyperplane", "sphere", "mixed"):
        raise ValueError(f"unknown surface kind {kind!r}")
    for i in range(count):
        pick = kind if kind != "mixed" else ("hyperplane" if i % 2 == 0 else "sphere")
        if pick == "hyperplane":
            n = _random_normals(rng, 1, d)[0] if d > 1 else np.array([1.0])
            if support is not None and len(support):
                out.append(Hyperplane.through(support[rng.integers(len(support))], n))
            else:
                lo, hi = _seed_projection_range(sys, n)
                out.append(Hyperplane(tuple(float(v) for v in n), float(rng.uniform(lo, hi))))
        else:
            reg = sys.regions(sys.identity_maps(1))
            if reg.kind == "box":
                c = rng.uniform(reg.lo[0], reg.hi[0])
            else:
                v = _random_normals(rng, 1, d)[0]
                c = reg.center[0] + v * reg.radius[0] * math.sqrt(rng.uniform())
            diam = sys.seed.diameter
            r = math.exp(rng.uniform(math.log(diam * 1e-3), math.log(diam)))
            out.append(Sphere(tuple(float(v) for v in c), r))
    return out


def map_probes(fn: Callable, items: Sequence, threads: int) -> List:
    if threads <= 1:
        return [fn(p) for p in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ============================================================================
# LOCAL DIMENSION AND FEDERER CHECK
# ============================================================================

@dataclass
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    residual: float
    log_rho: np.ndarray
    log_mass: np.ndarray


def _fit(xs: np.ndarray, ys: np.ndarray) -> SlopeFit:
    if np.ptp(ys) == 0:
        return SlopeFit(0.0, float(ys[0]), 1.0, 0.0, xs, ys)
    fit = linregress(xs, ys)
    resid = ys - (fit.slope * xs + fit.intercept)
    return SlopeFit(float(fit.slope), float(fit.intercept), float(fit.rvalue**2),
                    float(np.sqrt(np.mean(resid**2))), xs, ys)


def local_dimension(gw: CylinderMeasure, sys: CifsSystem, x: Sequence[float], rho_grid: Sequence[float],
                    level: Optional[int] = None) -> SlopeFit:
    """Least-squares slope of log mu(B(x, rho)) against log rho."""
    rho = np.asarray(rho_grid, dtype=float)
    if np.any(rho <= 0) or np.any(rho > 1):
        raise ValueError("rho grid must lie in (0, 1]")
    masses = np.array([ball_mass(gw, sys, x, r, level).value for r in rho])
    ok = masses > 0
    if ok.sum() < 2:
        raise UndefinedDimensionError(f"only {int(ok.sum())} non-empty balls around {list(x)}")
    if not ok.all():
        logger.info("local dimension: %d empty balls dropped", int((~ok).sum()))
    return _fit(np.log(rho[ok]), np.log(masses[ok]))


@dataclass
class FedererReport:
    K: float
    worst_ratio: float
    worst_center: Optional[np.ndarray]
    worst_rho: Optional[float]
    probes: int
    skipped: int


def federer_check(gw: CylinderMeasure, sys: CifsSystem, K: float, sample_centers: np.ndarray,
                  rho_grid: Sequence[float], level: Optional[int] = None, threads: int = 1) -> FedererReport:
    """max over probes of upper mu(B(x, K rho)) / lower mu(B(x, rho))."""
    if K <= 1:
        raise ValueError("Federer factor K must exceed 1")
    centers = np.atleast_2d(np.asarray(sample_centers, dtype=float))
    if centers.shape[1] != sys.dim:
        centers = centers.reshape(-1, sys.dim)
    jobs = [(c, float(r)) for c in centers for r in rho_grid]

    def run(job):
        c, r = job
        lvl = level if level is not None else level_for_scale(sys, gw, r)
        small = ball_mass(gw, sys, c, r, lvl)
        big = ball_mass(gw, sys, c, K * r, lvl)
        return small, big

    results = map_probes(run, jobs, threads)
    worst, where, skipped = 0.0, None, 0
    for (c, r), (small, big) in zip(jobs, results):
        if small.lower <= 0:
            skipped += 1
            continue
        ratio = big.upper / small.lower
        if ratio > worst:
            worst, where = ratio, (c, r)
    if skipped:
        logger.info("federer check: %d probes skipped (zero lower bracket)", skipped)
    return FedererReport(K, worst, None if where is None else where[0], None if where is None else where[1],
                         len(jobs), skipped)


# ============================================================================
# DECAY FITS
# ============================================================================

class DecayMode(Enum):
    ABSOLUTE = "absolute"
    QUASI = "quasi"
    DECAYING = "decaying"


@dataclass(frozen=True)
class DecayProbe:
    center: Tuple[float, ...]
    rho: float
    beta: float
    surface: Surface
    mass_in: Optional[MassBracket] = None
    mass_ball: Optional[MassBracket] = None
    samples: int = 0
    width: Optional[float] = None

    @property
    def degenerate(self) -> bool:
        return self.mass_ball is None or self.mass_ball.lower <= 0

    @property
    def ratio(self) -> float:
        if self.degenerate:
            return math.nan
        return self.mass_in.upper / self.mass_ball.lower


@dataclass
class DecayFitReport:
    mode: DecayMode
    C1: float
    alpha: float
    r_squared: float
    gamma: Optional[float]
    grid: str
    worst: Optional[DecayProbe]
    probes: List[DecayProbe] = field(default_factory=list)
    violations: int = 0     # held-out probes above C1 beta^alpha
    degenerate: int = 0
    holdout: List[DecayProbe] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.alpha > 0 and self.violations == 0

    def rows(self) -> List[Dict[str, object]]:
        return [{"set": kind, "center": " ".join(f"{v:.9g}" for v in p.center), "rho": p.rho, "beta": p.beta,
                 "surface": p.surface.describe(), "mass_in": p.mass_in.upper if p.mass_in else math.nan,
                 "mass_ball": p.mass_ball.lower if p.mass_ball else math.nan, "ratio": p.ratio}
                for kind, group in (("fit", self.probes), ("holdout", self.holdout)) for p in group]


def probe_grid(sys: CifsSystem, mode: DecayMode, centers: np.ndarray, rho_grid: Sequence[float],
               beta_grid: Optional[Sequence[float]] = None, gamma: float = 1.0,
               offsets: Sequence[float] = DEFAULT_OFFSETS, normals: int = 4,
               random_surfaces: int = 0, seed: int = 0) -> List[DecayProbe]:
    """
    Probes for decay fits. Surfaces sit at offsets t * beta * rho from the centre
    (along random normals when d > 1), the scale at which a thickening can
    catch the most mass; random_surfaces adds surfaces from sample_surfaces.
    """
    mode = DecayMode(mode)
    centers = np.atleast_2d(np.asarray(centers, dtype=float)).reshape(-1, sys.dim)
    probes: List[DecayProbe] = []
    for ci, c in enumerate(centers):
        rng = np.random.default_rng(probe_seed(seed, "normals", ci))
        dirs = np.array([[1.0]]) if sys.dim == 1 else _random_normals(rng, normals, sys.dim)
        for rho in rho_grid:
            if mode is DecayMode.QUASI:
                betas = [rho**gamma, rho ** (2 * gamma), rho ** (4 * gamma)]
            else:
                betas = list(beta_grid if beta_grid is not None else [2.0**-k for k in range(1, 9)])
            for beta in betas:
                scale = beta * rho
                surfaces: List[Surface] = [Hyperplane.through(c + t * scale * n, n) for n in dirs for t in offsets]
                if random_surfaces:
                    surfaces += sample_surfaces(sys, random_surfaces,
                                                np.random.default_rng(probe_seed(seed, ci, rho, beta)))
                probes.extend(DecayProbe(tuple(float(v) for v in c), float(rho), float(beta), s)
                              for s in surfaces)
    return probes


def _support_sample(gw: CylinderMeasure, sys: CifsSystem, seed: int, count: int = 4000) -> np.ndarray:
    rng = np.random.default_rng(probe_seed(seed, "support"))
    depth = max(8, level_for_scale(sys, gw, 1e-6))
    pts, _ = gw.sample_points(rng, count, min(depth, gw.max_level or depth))
    return pts


def _envelope(series: Dict[Any, List[Tuple[float, float]]]) -> Tuple[float, float]:
    """
    Smallest decay slope over the series and the intercept that covers them.

    Each series holds (beta, worst ratio) pairs. Its slope is the least-squares
    slope of log ratio against log beta over the positive ratios, or
    log ratio / log beta when only one is positive. Returns (slope, r^2 of the
    series that sets it); slope is inf when no ratio is positive.
    """
    best, r2 = math.inf, 1.0
    for pts in series.values():
        pos = sorted((b, v) for b, v in pts if v > 0 and b < 1)
        if not pos:
            continue
        if len(pos) == 1:
            slope, fit_r2 = math.log(pos[0][1]) / math.log(pos[0][0]), 1.0
        else:
            fit = _fit(np.log([b for b, _ in pos]), np.log([v for _, v in pos]))
            slope, fit_r2 = fit.slope, fit.r_squared
        if slope < best:
            best, r2 = slope, fit_r2
    return best, r2


def decay_fit(gw: CylinderMeasure, sys: CifsSystem, mode: Union[DecayMode, str] = DecayMode.ABSOLUTE,
              probes: Optional[Sequence[DecayProbe]] = None, gamma: float = 1.0,
              centers: Optional[np.ndarray] = None, rho_grid: Sequence[float] = (0.5, 0.25, 0.125),
              beta_grid: Optional[Sequence[float]] = None, event: Optional[EventSet] = None,
              level: Optional[int] = None, seed: int = 0, threads: int = 1,
              holdout: Optional[Sequence[DecayProbe]] = None,
              holdout_centers: Optional[np.ndarray] = None) -> DecayFitReport:
    """
    Envelope fit of mu(N(L, w) ∩ B ∩ E) <= C1 beta^alpha mu(B).

    Every ball (centre, rho) gives a series of worst ratios over beta; alpha
    is the smallest log-log slope among those series and C1 the smallest
    constant putting every fitted probe under C1 beta^alpha. Violations are
    counted on held-out probes: the given ones, the grid around
    holdout_centers, or, when the fit centres are sampled here, a grid around
    centres sampled from an independent stream. w = beta * rho, or in
    decaying mode beta * ||d_L||_{mu,B} estimated from sampled support points.
    """
    mode = DecayMode(mode)
    if probes is None:
        if centers is None:
            centers, _ = gw.sample_points(np.random.default_rng(probe_seed(seed, "centers")), 8, 40)
            if holdout is None and holdout_centers is None:
                holdout_centers, _ = gw.sample_points(np.random.default_rng(probe_seed(seed, "holdout")), 4, 40)
        probes = probe_grid(sys, mode, centers, rho_grid, beta_grid, gamma, seed=seed)
    if not probes:
        raise DegenerateProbeError("no probes")
    if holdout is None:
        holdout = [] if holdout_centers is None else probe_grid(sys, mode, holdout_centers, rho_grid, beta_grid,
                                                                gamma, seed=probe_seed(seed, "holdout"))
    support = _support_sample(gw, sys, seed) if mode is DecayMode.DECAYING else None
    ball_cache: Dict[Tuple, MassBracket] = {}

    def run(p: DecayProbe) -> DecayProbe:
        x = np.asarray(p.center)
        key = (p.center, p.rho)
        if key not in ball_cache:
            ball_cache[key] = ball_mass(gw, sys, x, p.rho, level)
        samples = 0
        if mode is DecayMode.DECAYING:
            near = support[np.linalg.norm(support - x, axis=1) <= p.rho]
            samples = len(near)
            reach = float(p.surface.distance(near).max()) if samples else p.rho
            width = p.beta * reach
        else:
            width = p.beta * p.rho
        inner = neighborhood_mass(gw, sys, p.surface, p.beta, x, p.rho, level, event, width=width)
        return replace(p, mass_in=inner, mass_ball=ball_cache[key], samples=samples, width=width)

    done = map_probes(run, list(probes), threads)
    checked = map_probes(run, list(holdout), threads)
    good = [p for p in done if not p.degenerate]
    if not good:
        raise DegenerateProbeError(f"all {len(done)} probes have an empty ball")
    series: Dict[Tuple, Dict[float, float]] = {}
    for p in good:
        worst_at = series.setdefault((p.center, p.rho), {})
        worst_at[p.beta] = max(worst_at.get(p.beta, 0.0), p.ratio)
    alpha, r2 = _envelope({k: list(v.items()) for k, v in series.items()})
    if math.isfinite(alpha):
        C1, worst = max(((p.ratio / p.beta**alpha, p) for p in good), key=lambda t: t[0])
        C1 = max(C1, np.finfo(float).tiny)
        violations = sum(1 for p in checked
                         if not p.degenerate and p.ratio > C1 * p.beta**alpha * (1 + 1e-9))
    else:
        C1, worst, violations = np.finfo(float).tiny, None, 0
    betas = {p.beta for p in done}
    grid = (f"{len(set(p.center for p in done))} centres x {len(set(p.rho for p in done))} radii, "
            f"{len(betas)} beta values, {len(done)} probes, {len(checked)} held out")
    report = DecayFitReport(mode, float(C1), float(alpha), float(r2),
                            gamma if mode is DecayMode.QUASI else None, grid, worst, list(done),
                            violations, len(done) - len(good), list(checked))
    logger.info("decay fit (%s): alpha=%.4f C1=%.4g over %s, %d held-out violations",
                mode.value, report.alpha, report.C1, grid, violations)
    return report


# ============================================================================
# GLOBAL DECAY
# ============================================================================

@dataclass
class GlobalDecayReport:
    exponent: float
    constant: float
    r_squared: float
    worst_surface: Optional[Surface]
    worst_masses: Dict[float, float]
    masses: List[Tuple[str, float, float]] = field(default_factory=list)

    @property
    def irreducibility_witness(self) -> bool:
        return self.exponent <= 1e-6


def global_decay_scan(gw: CylinderMeasure, sys: CifsSystem, surfaces: Sequence[Surface],
                      beta_grid: Sequence[float], level: Optional[int] = None,
                      threads: int = 1) -> GlobalDecayReport:
    """
    Envelope fit of mu(N(L, beta)) <= C beta^exponent: the exponent is the
    smallest log-log slope over the surfaces and C covers every mass.
    """
    if not surfaces:
        raise ValueError("global decay scan needs at least one surface")
    jobs = [(i, float(b)) for i in range(len(surfaces)) for b in beta_grid]
    results = map_probes(lambda j: thickening_mass(gw, sys, surfaces[j[0]], j[1], level).upper, jobs, threads)
    worst: Dict[float, float] = {}
    series: Dict[int, List[Tuple[float, float]]] = {}
    for (i, b), mass in zip(jobs, results):
        worst[b] = max(worst.get(b, 0.0), mass)
        series.setdefault(i, []).append((b, mass))
    exponent, r2 = _envelope(series)
    if not math.isfinite(exponent):
        exponent, r2 = 0.0, 1.0
    best, worst_surface = 0.0, None
    for (i, b), mass in zip(jobs, results):
        if mass > 0 and mass / b**exponent > best:
            best, worst_surface = mass / b**exponent, surfaces[i]
    report = GlobalDecayReport(float(exponent), float(best), float(r2), worst_surface, worst,
                               [(surfaces[i].describe(), b, m) for (i, b), m in zip(jobs, results)])
    if report.irreducibility_witness:
        logger.warning("global decay exponent %.3g: %s carries the measure (irreducibility fails)",
                       exponent, worst_surface.describe() if worst_surface else "?")
    return report


# ============================================================================
# ESCAPE ARGUMENT
# ============================================================================

@dataclass(frozen=True)
class EscapeConfig:
    kappa: float
    r: int
    k: int = 0
    rho: float = 1.0
    good_words: str = "all finite words"

    def __post_init__(self):
        if not (0 < self.kappa < 1):
            raise ValueError(f"kappa must lie in (0,1), got {self.kappa}")
        if self.r < 1 or self.k < 0:
            raise ValueError("need r >= 1 and k >= 0")


def _probe_cylinders(gw: CylinderMeasure, depth: int, cap: int, seed: int) -> List[Word]:
    words: List[Word] = [()]
    frontier: List[Word] = [()]
    letters = list(gw.system.letters)
    rng = np.random.default_rng(probe_seed(seed, "cylinders"))
    for _ in range(depth):
        nxt = [w + (a,) for w in frontier for a, p in zip(letters, gw.child_probabilities(w)) if p > 0]
        if len(nxt) > cap:
            nxt = [nxt[i] for i in sorted(rng.choice(len(nxt), size=cap, replace=False))]
        words.extend(nxt)
        frontier = nxt
    return words


def _adversarial_surfaces(sys: CifsSystem, region: Regions, children: Regions, points: int = 65,
                          angles: int = 16) -> List[Surface]:
    if sys.dim == 1:
        cs = np.concatenate([np.linspace(region.lo[0, 0], region.hi[0, 0], points),
                             children.lo[:, 0], children.hi[:, 0], children.centers[:, 0]])
        return [Hyperplane.point(float(c)) for c in np.unique(cs)]
    out: List[Surface] = []
    for k in range(angles):
        th = math.pi * k / angles
        n = np.array([math.cos(th), math.sin(th)] + [0.0] * (sys.dim - 2))
        n = np.where(np.abs(n) < 1e-15, 0.0, n)
        lo, hi = region.projection_range(n)
        offsets = np.concatenate([np.linspace(lo[0], hi[0], (points + 1) // 2), children.centers @ n])
        out.extend(Hyperplane(tuple(float(v) for v in n), float(o)) for o in offsets)
    return out


def kappa_r_search(gw: CylinderMeasure, sys: CifsSystem, r_max: int = 3,
                   surface_grid: Optional[Sequence[Surface]] = None,
                   kappa_grid: Optional[Sequence[float]] = None, depth: int = 4,
                   max_cylinders: int = 200, seed: int = 0) -> Optional[EscapeConfig]:
    """
    Largest kappa on the grid such that for every probed cylinder w and every
    surface L the mu_w-mass of level-(|w| + r) subcylinders avoiding
    N(L, kappa * D_w) is at least kappa. None means no (kappa, r) up to r_max:
    the measure may sit on a surface.
    """
    grid = sorted(kappa_grid if kappa_grid is not None else [2.0**-j for j in range(1, 9)], reverse=True)
    cylinders = _probe_cylinders(gw, depth, max_cylinders, seed)
    letters = np.array(list(sys.letters))
    for r in range(1, r_max + 1):
        best = grid[0]
        for w in cylinders:
            region = sys.regions(sys.cylinder_maps([w]))
            D = float(region.diameters[0])
            subs: List[Word] = [()]
            masses = np.array([1.0])
            for _ in range(r):
                probs = np.concatenate([gw.child_probabilities(w + v) for v in subs])
                masses = np.repeat(masses, len(letters)) * probs
                subs = [v + (int(a),) for v in subs for a in letters]
                keep = masses > 0
                subs, masses = [v for v, k in zip(subs, keep) if k], masses[keep]
            children = sys.regions(sys.cylinder_maps([w + v for v in subs]))
            surfaces = list(surface_grid or []) + _adversarial_surfaces(sys, region, children)
            near = np.array([s.distance_range(children)[0] for s in surfaces])
            ok_kappa = None
            for kappa in grid:
                if kappa > best:
                    continue
                avoided = (near > kappa * D * (1 + TOUCH_TOL)) @ masses
                if float(avoided.min()) >= kappa:
                    ok_kappa = kappa
                    break
            if ok_kappa is None:
                best = None
                break
            best = min(best, ok_kappa)
        if best is not None:
            logger.info("kappa/r search: kappa=%g with r=%d over %d cylinders", best, r, len(cylinders))
            return EscapeConfig(best, r)
    logger.warning("kappa/r search: no kappa on the grid for r <= %d (reducible measure?)", r_max)
    return None


@dataclass
class EscapeReport:
    observed: float
    bound: float
    stderr: float
    trials: int
    k: int
    rho: float

    @property
    def passed(self) -> bool:
        return self.observed <= self.bound + 3.0 * self.stderr


def escape_bound_check(gw: CylinderMeasure, sys: CifsSystem, cfg: EscapeConfig, surface: Surface,
                       omega: Sequence[int] = (), trials: int = 10_000, seed: int = 0) -> EscapeReport:
    """
    Frequency under mu_w of {tau in [w] : pi(tau) in N(L, kappa rho) and at
    least k prefixes tau|i, i >= |w|, with D_{tau|i} >= rho}, against (1 - kappa)^k.
    """
    if trials < 100:
        raise ValueError(f"escape check needs at least 100 trials, got {trials}")
    omega = as_word(omega)
    bound = (1.0 - cfg.kappa) ** cfg.k
    stderr = math.sqrt(bound * (1.0 - bound) / trials)
    rng = np.random.default_rng(probe_seed(seed, "escape", omega, cfg.k, cfg.rho, surface.describe()))
    D_omega = float(sys.regions(sys.cylinder_maps([omega])).diameters[0])
    target = 1e-3 * cfg.kappa * cfg.rho
    depth = 1 if D_omega <= target else math.ceil(math.log(target / D_omega) / math.log(sys.s_max)) + 1
    depth = min(depth, 80)
    if gw.max_level is not None:
        depth = min(depth, max(1, gw.max_level - len(omega)))
    words = gw.sample_letters(rng, trials, depth, prefix=omega)
    maps = sys.letter_array_maps(words[:, :len(omega)]) if omega else sys.identity_maps(trials)
    counts = (sys.regions(maps).diameters >= cfg.rho * (1 - TOUCH_TOL)).astype(int)
    for i in range(len(omega), words.shape[1]):
        maps = sys.extend_maps(maps, words[:, i])
        counts += sys.regions(maps).diameters >= cfg.rho * (1 - TOUCH_TOL)
    points = sys.apply_maps(maps, np.tile(sys.seed.center, (trials, 1)))
    near = surface.distance(points) <= cfg.kappa * cfg.rho * (1 + TOUCH_TOL)
    observed = float(np.mean(near & (counts >= cfg.k)))
    report = EscapeReport(observed, bound, stderr, trials, cfg.k, cfg.rho)
    if not report.passed:
        logger.warning("escape bound violated: %.4f > %.4f (k=%d)", observed, bound, cfg.k)
    return report


# ============================================================================
# DIMENSION-ZERO WITNESS
# ============================================================================

def dimension_zero_witness(gw: CylinderMeasure, sys: CifsSystem, x: Sequence[float],
                           rho_grid: Sequence[float], alphas: Sequence[float],
                           event: Optional[EventSet] = None,
                           level: Optional[int] = None) -> List[Dict[str, float]]:
    """Rows of mu(B(x, rho^2) ∩ E) / (rho^alpha mu(B(x, rho))), lower over upper."""
    rows = []
    for rho in rho_grid:
        inner = ball_mass(gw, sys, x, rho * rho, level, event)
        outer = ball_mass(gw, sys, x, rho, level)
        for alpha in alphas:
            denom = rho**alpha * outer.upper
            rows.append({"rho": rho, "alpha": alpha, "inner": inner.lower, "outer": outer.upper,
                         "ratio": inner.lower / denom if denom > 0 else math.nan})
    return rows
