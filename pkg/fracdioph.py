#!/usr/bin/env python3
"""
FRACDIOPH - COMMAND-LINE HARNESS
================================

Reproducible runs over system files: thermodynamic reports, decay fits,
Diophantine experiments and toral shadows. Every command writes
<out>/<command>.csv (and <out>/<command>.svg with --plot).

Usage:
    python fracdioph.py dimension --config configs/cantor.json
    python fracdioph.py decay-fit --config configs/cantor.json --seed 1 --mode absolute
    python fracdioph.py omega --x golden --qmax 100000
    python fracdioph.py toral-shadow --config configs/doubling.json --N 64 --m 6

Features:
- one frozen RunConfig per run, hashed (sha256) into the CSV header
- CSV bodies depend only on config and seed; files land via write-then-rename
- domain failures exit 1 with a JSON error object, usage errors exit 2
- FRACDIOPH_THREADS / FRACDIOPH_LOG_LEVEL from the environment or a .env file
"""

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except Exception:
    plt = None

from cifs import BoxSeed, SystemDefinitionError, system_from_dict, validate
from dioph import continued_fraction, diophantine_report, extremality_experiment
from measurelab import (
    EscapeConfig,
    Hyperplane,
    decay_fit,
    escape_bound_check,
    global_decay_scan,
    kappa_r_search,
    local_dimension,
    sample_surfaces,
)
from thermo import GibbsWeights, bowen_dimension, gibbs_ratio_check, measure_from_spec, thermo_report
from toral import shadow_pipeline, validate_hyperbolic

logger = logging.getLogger("fracdioph")

VERSION = "0.1.0"

COMMANDS = ("validate", "dimension", "thermo", "sample", "decay-fit", "global-decay",
            "escape-check", "omega", "extremality", "toral-shadow")
STOCHASTIC = {"thermo", "sample", "decay-fit", "global-decay", "escape-check", "extremality"}
NEEDS_SYSTEM = set(COMMANDS) - {"omega", "toral-shadow"}

# fields that do not change CSV bodies stay out of the config hash
UNHASHED = ("out", "threads", "plot", "verbose")


class SystemValidationError(ValueError):
    pass


class EscapeSearchError(ValueError):
    pass


# ============================================================================
# RUN CONFIG
# ============================================================================

@dataclass(frozen=True)
class RunConfig:
    command: str
    config: Optional[str] = None
    out: str = "results"
    seed: Optional[int] = None
    threads: int = 1
    level: int = 12
    samples: int = 20000
    surfaces: int = 32
    gamma: float = 1.0
    mode: str = "absolute"
    kappa_grid: Tuple[float, ...] = (0.5, 0.25, 0.125, 0.0625)
    rmax: int = 3
    k: Tuple[int, ...] = tuple(range(1, 13))
    trials: int = 10_000
    x: Optional[str] = None
    matrix: Optional[str] = None
    N: int = 64
    m: int = 6
    margins: Tuple[float, ...] = (0.1, 0.25, 0.5)
    npoints: int = 200
    qmax: int = 10**4
    liouville_n: int = 10
    plot: bool = False
    verbose: bool = False

    def hashed_fields(self) -> Dict[str, Any]:
        data = {k: v for k, v in asdict(self).items() if k not in UNHASHED}
        if self.config:
            data["config"] = hashlib.sha256(Path(self.config).read_bytes()).hexdigest()
        return data

    @property
    def digest(self) -> str:
        payload = json.dumps(self.hashed_fields(), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> Tuple[int, ...]:
    """"1,4,8" or "1-12"."""
    out: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return tuple(out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracdioph", description="Dynamically defined measures and Diophantine experiments")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="system file (JSON), see configs/")
    parser.add_argument("--seed", type=int, help="required for stochastic commands")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--threads", type=int, help="probe threads (fallback: FRACDIOPH_THREADS)")
    parser.add_argument("--level", type=int, default=12, help="weight table / sampling depth")
    parser.add_argument("--samples", type=int, default=20000)
    parser.add_argument("--surfaces", type=int, default=32, help="random surfaces for global-decay")
    parser.add_argument("--gamma", type=float, default=1.0)
    parser.add_argument("--mode", choices=["absolute", "decaying", "quasi"], default="absolute")
    parser.add_argument("--kappa-grid", type=_floats, default=(0.5, 0.25, 0.125, 0.0625))
    parser.add_argument("--rmax", type=int, default=3)
    parser.add_argument("--k", type=_ints, default=tuple(range(1, 13)), help='e.g. "1-12" or "1,4,8"')
    parser.add_argument("--trials", type=int, default=10_000)
    parser.add_argument("--x", help='point, e.g. "golden", "sqrt2,sqrt3", "sqrt(2)-1"')
    parser.add_argument("--matrix", help='toral matrix, e.g. "2" or "2,1;1,1"')
    parser.add_argument("--N", type=int)
    parser.add_argument("--m", type=int)
    parser.add_argument("--margin", dest="margins", type=_floats, default=(0.1, 0.25, 0.5))
    parser.add_argument("--npoints", type=int, default=200)
    parser.add_argument("--qmax", type=int, default=10**4)
    parser.add_argument("--liouville-n", type=int, default=10)
    parser.add_argument("--plot", action="store_true", help="also write an SVG plot")
    parser.add_argument("--verbose", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace, parser: argparse.ArgumentParser) -> RunConfig:
    if args.command in NEEDS_SYSTEM and not args.config:
        parser.error(f"{args.command} needs --config")
    if args.command in STOCHASTIC and args.seed is None:
        parser.error(f"{args.command} is stochastic and needs --seed")
    config = str(Path(args.config).resolve()) if args.config else None
    if config and not Path(config).is_file():
        parser.error(f"config file {args.config} not found")
    N, m, x, matrix = args.N, args.m, args.x, args.matrix
    if args.command == "toral-shadow":
        try:
            spec = _read_json(Path(config)) if config else {}
        except SystemDefinitionError as exc:
            parser.error(str(exc))
        matrix = matrix or spec.get("matrix")
        x = x or spec.get("x")
        N = N or spec.get("N", 64)
        m = m or spec.get("m", 6)
        if matrix is None or x is None:
            parser.error("toral-shadow needs --matrix and --x (or a toral config providing them)")
        matrix = matrix if isinstance(matrix, str) else ";".join(",".join(str(v) for v in row) for row in matrix)
    threads = args.threads or int(os.getenv("FRACDIOPH_THREADS", "1"))
    return RunConfig(
        command=args.command, config=config, out=str(Path(args.out).resolve()), seed=args.seed,
        threads=max(1, threads), level=args.level, samples=args.samples, surfaces=args.surfaces,
        gamma=args.gamma, mode=args.mode, kappa_grid=tuple(args.kappa_grid), rmax=args.rmax,
        k=tuple(args.k), trials=args.trials, x=None if x is None else str(x), matrix=matrix,
        N=int(N or 64), m=int(m or 6), margins=tuple(args.margins), npoints=args.npoints,
        qmax=args.qmax, liouville_n=args.liouville_n, plot=args.plot, verbose=args.verbose,
    )


# ============================================================================
# OUTPUT
# ============================================================================

@dataclass
class CommandResult:
    rows: List[Dict[str, Any]]
    notes: Dict[str, Any] = field(default_factory=dict)
    plot: Optional[Tuple[str, Any, bool, bool]] = None     # (x column, y column(s), log x, log y)


def _cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, cfg: RunConfig, result: CommandResult) -> None:
    """Header comment lines, then the table; written to a temp file and renamed into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    columns: List[str] = []
    for row in result.rows:
        columns.extend(k for k in row if k not in columns)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(f"# fracdioph {VERSION} command={cfg.command} seed={cfg.seed} config={cfg.digest}\n")
            for key, value in result.notes.items():
                fh.write(f"# {key}={_cell(value)}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in result.rows:
                writer.writerow([_cell(row.get(c, "")) for c in columns])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_plot(path: Path, cfg: RunConfig, result: CommandResult) -> bool:
    if plt is None or result.plot is None or not result.rows:
        return False
    xcol, ycols, logx, logy = result.plot
    ycols = (ycols,) if isinstance(ycols, str) else ycols
    fig, ax = plt.subplots(figsize=(8, 4))
    for ycol in ycols:
        pairs = [(r[xcol], r[ycol]) for r in result.rows
                 if isinstance(r.get(ycol), (int, float)) and math.isfinite(r[ycol]) and (not logy or r[ycol] > 0)]
        if pairs:
            ax.scatter(*zip(*pairs), s=8, label=ycol)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xcol)
    ax.set_title(f"{cfg.command} ({Path(cfg.config).stem if cfg.config else cfg.x})")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return True


# ============================================================================
# COMMANDS
# ============================================================================

def _read_json(path: Path) -> Dict[str, Any]:
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SystemDefinitionError(f"{path}: {exc}") from exc
    if not isinstance(spec, dict):
        raise SystemDefinitionError(f"{path}: expected a JSON object")
    return spec


def _load(cfg: RunConfig):
    spec = _read_json(Path(cfg.config))
    if spec.get("kind") == "toral":
        raise SystemDefinitionError(f"{cfg.command} needs a CIFS system file, {cfg.config} is toral")
    system = system_from_dict(spec)
    report = validate(system)
    if not report.passed:
        failed = [c.name for c in report.checks if not c.passed and c.name != "strong_separation"]
        raise SystemValidationError(f"{system.name} fails {', '.join(failed)}")
    return system, report


def cmd_validate(cfg: RunConfig) -> CommandResult:
    system = system_from_dict(_read_json(Path(cfg.config)))
    report = validate(system)
    result = CommandResult(report.rows(), {"system": system.name, "passed": report.passed})
    if not report.passed:
        # the table is still written before failing
        write_csv(Path(cfg.out) / "validate.csv", cfg, result)
        raise SystemValidationError(f"{system.name} fails the CIFS axioms, see validate.csv")
    return result


def cmd_dimension(cfg: RunConfig) -> CommandResult:
    system, _ = _load(cfg)
    delta = bowen_dimension(system)
    rows = [{"quantity": "delta", "value": delta.value, "error": delta.error, "level": delta.level,
             "flags": "|".join(delta.flags)}]
    if cfg.x:
        measure = measure_from_spec(system, level=cfg.level)
        point = [float(v) for v in cfg.x.split(",")]
        fit = local_dimension(measure, system, point, [2.0**-k for k in range(2, cfg.level + 1)])
        rows.append({"quantity": "local_dimension", "value": fit.slope, "error": fit.residual,
                     "level": cfg.level, "flags": f"r2={fit.r_squared:.4f}"})
    return CommandResult(rows, {"system": system.name})


def cmd_thermo(cfg: RunConfig) -> CommandResult:
    system, _ = _load(cfg)
    measure = measure_from_spec(system, level=cfg.level)
    report = thermo_report(system, measure, level=cfg.level, samples=cfg.samples, seed=cfg.seed)
    rows = report.rows()
    if isinstance(measure, GibbsWeights):
        check = gibbs_ratio_check(system, measure, seed=cfg.seed)
        rows += [{"quantity": "gibbs_min_ratio", "value": check.min_ratio, "error": 0.0, "level": cfg.level},
                 {"quantity": "gibbs_max_ratio", "value": check.max_ratio, "error": 0.0, "level": cfg.level},
                 {"quantity": "gibbs_certificate", "value": check.certificate, "error": 0.0, "level": cfg.level}]
    notes = {"system": system.name, "measure": measure.name}
    notes.update({f"note{i}": n for i, n in enumerate(report.notes)})
    return CommandResult(rows, notes)


def cmd_sample(cfg: RunConfig) -> CommandResult:
    system, _ = _load(cfg)
    measure = measure_from_spec(system, level=cfg.level)
    depth = cfg.level if measure.max_level is None else min(cfg.level, measure.max_level)
    pts, radii = measure.sample_points(np.random.default_rng(cfg.seed), cfg.samples, depth)
    rows = [dict({"index": i, "radius": float(r)}, **{f"x{j}": float(v) for j, v in enumerate(p)})
            for i, (p, r) in enumerate(zip(pts, radii))]
    axes = ("x0", "x1") if system.dim > 1 else ("index", "x0")
    return CommandResult(rows, {"system": system.name, "measure": measure.name, "depth": depth},
                         (axes[0], axes[1], False, False))


def cmd_decay_fit(cfg: RunConfig) -> CommandResult:
    system, _ = _load(cfg)
    measure = measure_from_spec(system, level=cfg.level)
    report = decay_fit(measure, system, mode=cfg.mode, gamma=cfg.gamma, seed=cfg.seed, threads=cfg.threads)
    notes = {"mode": report.mode.value, "alpha": report.alpha, "C1": report.C1, "r_squared": report.r_squared,
             "violations": report.violations, "holdout": len(report.holdout), "degenerate": report.degenerate,
             "passed": report.passed, "grid": report.grid}
    return CommandResult(report.rows(), notes, ("beta", "ratio", True, True))


def cmd_global_decay(cfg: RunConfig) -> CommandResult:
    system, _ = _load(cfg)
    measure = measure_from_spec(system, level=cfg.level)
    surfaces = sample_surfaces(system, cfg.surfaces, np.random.default_rng(cfg.seed), kind="mixed")
    if isinstance(system.seed, BoxSeed):
        for i in range(system.dim):
            normal = np.eye(system.dim)[i]
            surfaces.append(Hyperplane.through(system.seed.lo_arr, normal))
            surfaces.append(Hyperplane.through(system.seed.center, normal))
    report = global_decay_scan(measure, system, surfaces, [2.0**-k for k in range(2, 10)], threads=cfg.threads)
    rows = [{"surface": s, "beta": b, "mass": m} for s, b, m in report.masses]
    notes = {"exponent": report.exponent, "constant": report.constant, "r_squared": report.r_squared,
             "worst_surface": report.worst_surface.describe() if report.worst_surface else "",
             "irreducibility_witness": report.irreducibility_witness}
    return CommandResult(rows, notes, ("beta", "mass", True, True))


def cmd_escape_check(cfg: RunConfig) -> CommandResult:
    system, _ = _load(cfg)
    measure = measure_from_spec(system, level=cfg.level)
    found = kappa_r_search(measure, system, r_max=cfg.rmax, kappa_grid=cfg.kappa_grid, seed=cfg.seed)
    if found is None:
        raise EscapeSearchError(f"no (kappa, r) with r <= {cfg.rmax} on the grid {list(cfg.kappa_grid)}")
    rng = np.random.default_rng(cfg.seed)
    support, _ = measure.sample_points(rng, 64, min(cfg.level, measure.max_level or cfg.level))
    surface = sample_surfaces(system, 1, rng, "hyperplane", support=support)[0]
    rows = []
    for k in cfg.k:
        rho = system.seed.diameter * system.s_max ** (found.r * (k - 1))
        run = EscapeConfig(found.kappa, found.r, k=k, rho=rho)
        report = escape_bound_check(measure, system, run, surface, trials=cfg.trials, seed=cfg.seed)
        rows.append({"k": k, "rho": rho, "kappa": found.kappa, "r": found.r, "observed": report.observed,
                     "bound": report.bound, "stderr": report.stderr, "trials": report.trials,
                     "passed": report.passed})
    notes = {"kappa": found.kappa, "r": found.r, "surface": surface.describe(),
             "passed": all(r["passed"] for r in rows)}
    return CommandResult(rows, notes, ("k", ("observed", "bound"), False, True))


def cmd_omega(cfg: RunConfig) -> CommandResult:
    x = cfg.x or "golden"
    report = diophantine_report(x, cfg.qmax)
    notes = {"x": x, "dim": report.dim, "omega_hat": report.omega_hat, "omega_ratio": report.omega_ratio,
             "omega_mult_hat": report.omega_mult_hat, "omega_mult_ratio": report.omega_mult_ratio,
             "flags": "|".join(report.flags())}
    if report.dim == 1:
        cf = continued_fraction(x, 20)
        notes["continued_fraction"] = " ".join(str(a) for a in cf.quotients)
    return CommandResult(report.rows(), notes, ("q", "error", True, True))


def cmd_extremality(cfg: RunConfig) -> CommandResult:
    system, _ = _load(cfg)
    measure = measure_from_spec(system, level=cfg.level)
    report = extremality_experiment(measure, system, n_points=cfg.npoints, q_max=cfg.qmax, seed=cfg.seed,
                                    margins=cfg.margins, threads=cfg.threads)
    notes = {r["quantity"]: r["value"] for r in report.summary_rows()}
    return CommandResult(report.rows(), notes, ("point", "omega_hat", False, False))


def cmd_toral_shadow(cfg: RunConfig) -> CommandResult:
    system = validate_hyperbolic(cfg.matrix)
    report = shadow_pipeline(system, cfg.x, cfg.N, cfg.m, n_max=cfg.liouville_n)
    notes = {"matrix": cfg.matrix, "x": cfg.x, "period_denominator": report.shadow.denominator,
             "shadow_bound": report.shadow.bound, "periodic": report.shadow.is_periodic}
    return CommandResult(report.rows(), notes, ("n", "liouville_mass", False, False))


HANDLERS: Dict[str, Callable[[RunConfig], CommandResult]] = {
    "validate": cmd_validate,
    "dimension": cmd_dimension,
    "thermo": cmd_thermo,
    "sample": cmd_sample,
    "decay-fit": cmd_decay_fit,
    "global-decay": cmd_global_decay,
    "escape-check": cmd_escape_check,
    "omega": cmd_omega,
    "extremality": cmd_extremality,
    "toral-shadow": cmd_toral_shadow,
}


# ============================================================================
# MAIN
# ============================================================================

def run(cfg: RunConfig) -> int:
    """Execute one command; 0 on success, 1 with a JSON error on stdout for domain failures."""
    try:
        result = HANDLERS[cfg.command](cfg)
    except ValueError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": cfg.command}))
        logger.error("%s failed: %s", cfg.command, exc)
        return 1
    out = Path(cfg.out)
    csv_path = out / f"{cfg.command}.csv"
    write_csv(csv_path, cfg, result)
    print(f"✅ {cfg.command}: {len(result.rows)} rows -> {csv_path}")
    for key, value in result.notes.items():
        print(f"   {key}: {_cell(value)}")
    if cfg.plot:
        svg = out / f"{cfg.command}.svg"
        if write_plot(svg, cfg, result):
            print(f"📈 Saved plot: {svg}")
        else:
            print(f"⚠️  No plot for {cfg.command} (matplotlib missing or nothing to draw)")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else os.getenv("FRACDIOPH_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(format="%(asctime)s - %(name)s - %(levelname)s - %(message)s", level=level)
    cfg = config_from_args(args, parser)

    print()
    print("╔" + "═" * 68 + "╗")
    print("║" + f"  FRACDIOPH {VERSION}: {cfg.command.upper()}".center(68) + "║")
    print("╚" + "═" * 68 + "╝")
    print()
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
