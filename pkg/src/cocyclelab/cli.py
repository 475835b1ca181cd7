"""Command-line experiment runner.

Usage::

    cocyclelab COMMAND --config FILE [--out DIR] [--seed N] [--threads N]

Each run writes ``summary.json`` (plus command-specific CSV files) to the
output directory.  Exit status is 0 when the command's check passes, 2 when
a computation fails, a module rejects its input or a check does not pass
(the reason is recorded in ``summary.json``), and 1 for a bad config, an
unknown command or a cocycle that cannot be built.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .cocycle import CocycleSpec, constant_cocycle, conformal_cocycle, example46, expression_cocycle
from .config import ExperimentConfig, as_array, base_matrix, load, with_run
from .errors import CocycleLabError, InputError, NumericalFailure, UnknownCommand
from .expr import compile_expression
from .holonomy import holonomy_along_leaf, holonomy_ratio, increment_decay_slope, leaf_triples, verify_holonomy_axioms
from .lyapunov import _batched_periodic_spectra, exponent_history, one_exponent_test, periodic_exponents, write_history_csv
from .reduction import (
    invariant_conformal_structure,
    invariant_line_pair_field,
    monodromy,
    pair_distance,
    polynomial_growth_fit,
)
from .subadditive import (
    default_grid,
    distortion_family,
    distortion_growth_certificate,
    level_maxima,
    write_levels_csv,
)
from .torus import Lattice, make_automorphism, periodic_points, random_points, uniform_grid

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


@dataclass
class ReportRecord:
    """What a command computed: named scalars with tolerances, files, verdict."""

    command: str
    config: dict
    seed: int
    scalars: list = field(default_factory=list)
    files: list = field(default_factory=list)
    passed: bool = True
    error: dict | None = None
    wall_time: float = 0.0

    def add(self, name: str, value, tolerance=None) -> None:
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        if isinstance(value, float) and not math.isfinite(value):
            value = repr(value)
        self.scalars.append({"name": name, "value": value, "tolerance": tolerance})

    def scalar(self, name: str):
        for s in self.scalars:
            if s["name"] == name:
                return s["value"]
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "passed": self.passed,
            "scalars": self.scalars,
            "files": self.files,
            "error": self.error,
            "wall_time": self.wall_time,
        }


def build_cocycle(cfg: ExperimentConfig) -> CocycleSpec:
    lattice = Lattice(tuple(cfg.base.lattice)) if cfg.base.lattice else None
    base = make_automorphism(base_matrix(cfg), lattice)
    cc = cfg.cocycle
    if cc.kind == "constant":
        return constant_cocycle(base, as_array(cc.matrix), cc.beta)
    if cc.kind == "conformal":
        metric = as_array(cc.metric) if cc.metric else None
        return conformal_cocycle(base, compile_expression(cc.scale), compile_expression(cc.angle), metric, cc.beta)
    if cc.kind == "expression":
        return expression_cocycle(base, cc.entries, cc.beta)
    ex = example46(base, cc.epsilon)
    if cc.kind == "example46":
        return ex.cocycle
    if cc.cover not in (2, 4):
        raise InputError("[cocycle] cover must be 2 or 4")
    return ex.cover2 if cc.cover == 2 else ex.cover4


def _seeds(c: CocycleSpec, cfg: ExperimentConfig):
    rng = np.random.default_rng(cfg.run.seed)
    return random_points(c.base.lattice, cfg.run.seeds, rng)


def _map(fn: Callable, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _exponent_runs(c, cfg, out: Path, rec: ReportRecord, threads: int):
    seeds = _seeds(c, cfg)
    histories = _map(lambda x: exponent_history(c, x, cfg.run.n), seeds, threads)
    tops, bottoms = [], []
    for i, hist in enumerate(histories):
        rec.files.append(write_history_csv(out / f"exponents_seed{i}.csv", hist).name)
        tops.append(hist[-1].top)
        bottoms.append(hist[-1].bottom)
        rec.add(f"lambda_plus[{i}]", hist[-1].top)
        rec.add(f"lambda_minus[{i}]", hist[-1].bottom)
    return np.array(tops), np.array(bottoms)


def cmd_exponents(c, cfg, out, rec, threads):
    tops, bottoms = _exponent_runs(c, cfg, out, rec, threads)
    rec.add("lambda_plus_mean", float(tops.mean()))
    rec.add("lambda_minus_mean", float(bottoms.mean()))
    rec.add("max_gap", float(np.max(tops - bottoms)))
    rec.passed = bool(np.all(np.isfinite(tops)) and np.all(np.isfinite(bottoms)))


def _periodic_csv(c, cfg, out: Path) -> str:
    path = out / "periodic_exponents.csv"
    with path.open("w") as fh:
        fh.write("period,x1,x2,exponent_max,exponent_min\n")
        for n in range(1, cfg.run.max_period + 1):
            pts = periodic_points(c.base, n)
            spectra = _batched_periodic_spectra(c, pts, n)
            for p, s in zip(pts, spectra):
                fh.write(f"{n},{p.coords[0]},{p.coords[1]},{s[0]!r},{s[-1]!r}\n")
    return path.name


def cmd_periodic_exponents(c, cfg, out, rec, threads):
    origin = tuple(0 for _ in range(c.base.dim))
    fixed = periodic_exponents(c, origin, 1)
    rec.add("fixed_point_exponents", fixed, 1e-12)
    report = one_exponent_test(c, cfg.run.max_period, cfg.run.tol)
    rec.add("periodic_gap", report.gap, cfg.run.tol)
    rec.add("worst_point", [str(v) for v in report.worst_point.coords])
    rec.add("worst_period", report.worst_period)
    rec.add("points_checked", report.points_checked)
    rec.files.append(_periodic_csv(c, cfg, out))
    rec.passed = report.passed


def cmd_distortion(c, cfg, out, rec, threads):
    grid = uniform_grid(c.base.lattice, cfg.run.grid)
    cert = distortion_growth_certificate(c, cfg.run.xi, cfg.run.eps, grid, cfg.run.n_max)
    path = out / "distortion.csv"
    with path.open("w") as fh:
        fh.write("n,max_log_K\n")
        for n, v in enumerate(cert.max_log_distortion):
            fh.write(f"{n},{v!r}\n")
    rec.files.append(path.name)
    rec.add("max_log_K", cert.max_log_distortion[-1])
    rec.add("log_K_rate", cert.rate)
    rec.passed = True


def cmd_holonomy_check(c, cfg, out, rec, threads):
    rng = np.random.default_rng(cfg.run.seed)
    triples = leaf_triples(c, cfg.run.triples, cfg.run.max_dist, rng)
    theta = holonomy_ratio(c)
    report = verify_holonomy_axioms(c, triples, cfg.run.tol, theta)
    maps = [holonomy_along_leaf(c, x, ty, tol=cfg.run.tol / 100, theta=theta) for x, ty, _ in triples]
    slope = increment_decay_slope(maps)
    rec.add("theta", theta)
    rec.add("composition_defect", report.composition, cfg.run.tol)
    rec.add("equivariance_defect", report.equivariance, cfg.run.tol)
    rec.add("holder_constant", report.holder_constant)
    rec.add("cauchy_ok", report.cauchy_ok)
    rec.add("increment_slope", slope, math.log(theta) + 0.05)
    rec.passed = report.passed and slope <= math.log(theta) + 0.05


def cmd_invariant_pairs(c, cfg, out, rec, threads):
    grid = uniform_grid(c.base.lattice, cfg.run.grid)
    fld = invariant_line_pair_field(c, grid, min(cfg.run.tol, 1e-6))
    rec.files.append(fld.to_csv(out / "line_pairs.csv").name)
    rec.add("residual", fld.residual, min(cfg.run.tol, 1e-6))
    rec.add("rule", fld.rule)
    rec.add("rule_n", fld.n)
    for axis in range(c.base.dim):
        m = monodromy(fld, axis)
        rec.add(f"monodromy_swap[x{axis + 1}]", m.swapped)
    rec.passed = True


def cmd_invariant_structure(c, cfg, out, rec, threads):
    grid = uniform_grid(c.base.lattice, cfg.run.grid)
    fld = invariant_conformal_structure(c, None, grid, cfg.run.window, cfg.run.method, cfg.run.tol, cfg.run.k_cap)
    path = out / "conformal_field.csv"
    d = c.fiber_dim
    with path.open("w") as fh:
        fh.write(",".join([f"x{i + 1}" for i in range(c.base.dim)] + [f"c{i}{j}" for i in range(d) for j in range(d)]) + "\n")
        for p, s in zip(fld.grid, fld.structures):
            fh.write(",".join(repr(float(v)) for v in list(p) + list(s.matrix.ravel())) + "\n")
    rec.files.append(path.name)
    rec.add("invariance_defect", fld.defect, cfg.run.tol)
    rec.add("max_window_distortion", fld.max_distortion, cfg.run.k_cap)
    rec.passed = True


def cmd_subadd_cert(c, cfg, out, rec, threads):
    grid = default_grid(c.base, cfg.run.grid, 4)
    cert = distortion_growth_certificate(c, cfg.run.xi, cfg.run.eps, grid, cfg.run.n_max)
    rec.add("C_eps", cert.constant)
    rec.add("log_C_eps", cert.log_constant)
    rec.add("certificate_passed", cert.passed)
    rec.add("log_K_rate", cert.rate)
    fam = distortion_family(c, cfg.run.rate)
    maxima = level_maxima(fam, grid, cfg.run.n_max)
    rec.files.append(write_levels_csv(out / "levels.csv", maxima).name)
    rec.add("negative_level", len(maxima) if maxima[-1] < 0 else None)
    rec.passed = cert.passed


def cmd_growth_fit(c, cfg, out, rec, threads):
    grid = uniform_grid(c.base.lattice, max(1, cfg.run.grid))
    fit = polynomial_growth_fit(c, grid, cfg.run.ns)
    path = out / "growth.csv"
    with path.open("w") as fh:
        fh.write("n,max_log_norm,max_log_K\n")
        for n, a, b in zip(fit.ns, fit.max_log_norm, fit.max_log_distortion):
            fh.write(f"{n},{a!r},{b!r}\n")
    rec.files.append(path.name)
    rec.add("norm_slope", fit.norm_slope)
    rec.add("K_slope", fit.distortion_slope)
    rec.passed = fit.norm_slope < c.fiber_dim


def cmd_example46(c, cfg, out, rec, threads):
    eps = cfg.cocycle.epsilon
    ex = example46(c.base, eps)
    c = ex.cocycle
    checks = []
    fixed = periodic_exponents(c, (0, 0), 1)
    rec.add("fixed_point_exponents", fixed, 1e-12)
    checks.append(abs(fixed[0] - math.log1p(eps)) < 1e-12 and abs(fixed[1] - math.log1p(-eps)) < 1e-12)
    target = math.log((1 + math.sqrt(1 - eps * eps)) / 2)
    rec.add("ae_exponent_closed_form", target)
    tops, bottoms = _exponent_runs(c, cfg, out, rec, threads)
    spread = float(max(np.max(np.abs(tops - target)), np.max(np.abs(bottoms - target))))
    rec.add("ae_exponent_max_error", spread, 5e-3)
    checks.append(spread < 5e-3)
    grid = uniform_grid(c.base.lattice, cfg.run.grid)
    fld = invariant_line_pair_field(c, grid, 1e-6)
    exact = np.pi * grid[:, 0] / 2
    err = float(np.max(pair_distance(fld.angles, np.sort(np.mod(np.stack([exact, exact + np.pi / 2], -1), np.pi), -1))))
    rec.add("pair_field_error", err, 1e-6)
    rec.files.append(fld.to_csv(out / "line_pairs.csv").name)
    swaps = [monodromy(fld, 0).swapped, monodromy(fld, 1).swapped]
    rec.add("monodromy_swap[x1]", swaps[0])
    rec.add("monodromy_swap[x2]", swaps[1])
    checks.append(err < 1e-6 and swaps == [True, False])
    gap = one_exponent_test(c, 1).gap
    rec.add("fixed_point_gap", gap)
    checks.append(abs(gap - math.log((1 + eps) / (1 - eps))) < 1e-12)
    theta = holonomy_ratio(c)
    rec.add("fiber_bunching_theta", theta)
    checks.append(theta < 1)
    rec.passed = all(checks)


COMMANDS: dict[str, Callable] = {
    "exponents": cmd_exponents,
    "periodic-exponents": cmd_periodic_exponents,
    "distortion": cmd_distortion,
    "holonomy-check": cmd_holonomy_check,
    "invariant-pairs": cmd_invariant_pairs,
    "invariant-structure": cmd_invariant_structure,
    "subadd-cert": cmd_subadd_cert,
    "growth-fit": cmd_growth_fit,
    "example46": cmd_example46,
}


def run(command: str, cfg: ExperimentConfig, out, threads: int = 1) -> ReportRecord:
    """Run one command, write its outputs to ``out`` and return the report.

    Package errors raised by the command itself are recorded in the report
    rather than raised.
    """
    if command not in COMMANDS:
        raise UnknownCommand(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rec = ReportRecord(command, cfg.to_dict(), cfg.run.seed)
    start = time.perf_counter()
    # a cocycle that cannot be built is a config problem and propagates
    c = build_cocycle(cfg)
    try:
        COMMANDS[command](c, cfg, out, rec, threads)
    except CocycleLabError as exc:
        rec.passed = False
        rec.error = {"reason": type(exc).__name__, "message": str(exc)}
    rec.wall_time = time.perf_counter() - start
    (out / "summary.json").write_text(json.dumps(rec.to_json(), indent=2) + "\n")
    return rec


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cocyclelab", description="Experiments with linear cocycles over toral automorphisms.")
    p.add_argument("command", help=", ".join(COMMANDS))
    p.add_argument("--config", required=True, help="INI experiment file")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=None, help="override [run] seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for independent orbits")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load(args.config)
        if args.seed is not None:
            cfg = with_run(cfg, seed=args.seed)
        if args.threads < 1:
            raise InputError("--threads must be >= 1")
        rec = run(args.command, cfg, args.out, args.threads)
    except CocycleLabError as exc:
        # input errors, or numerical failures raised before a report exists
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc, NumericalFailure) else EXIT_INPUT
    if rec.error:
        print(f"{args.command}: {rec.error['reason']}: {rec.error['message']}", file=sys.stderr)
    print(f"{args.command}: {'pass' if rec.passed else 'fail'} -> {Path(args.out) / 'summary.json'}")
    return EXIT_OK if rec.passed else EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
