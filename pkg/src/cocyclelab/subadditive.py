"""Grid certificates for subadditive families over a toral automorphism.

Everything here is empirical: a level ``N`` with ``a_N < 0`` is found on a
finite grid of points, never on the whole torus.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .cocycle import CocycleSpec, orbit_products
from .errors import InputError, NotFound
from .torus import PERIODIC_CAP, ToralAutomorphism, as_point, orbit, orbits, periodic_point_count, periodic_points, uniform_grid

Evaluator = Callable[[Sequence, int], np.ndarray]


@dataclass(frozen=True, eq=False)
class SubadditiveFamily:
    """Functions ``a_n`` with ``a_{n+k}(x) <= a_k(x) + a_n(f^k x)``.

    ``evaluator(points, n)`` returns ``a_n`` at each point.  ``sweep``, when
    given, yields ``(n, a_n(points))`` for ``n = 1..n_max`` in one pass and is
    used by grid searches instead of re-evaluating from scratch.
    """

    evaluator: Evaluator
    base: ToralAutomorphism
    n_max: int = 4096
    description: str = ""
    sweep: Callable[[Sequence, int], Iterator[tuple[int, np.ndarray]]] | None = None

    def __call__(self, points, n: int) -> np.ndarray:
        if not 1 <= n <= self.n_max:
            raise InputError(f"n = {n} outside [1, {self.n_max}]")
        return np.asarray(self.evaluator(points, n), dtype=float)

    def levels(self, points, n_max: int) -> Iterator[tuple[int, np.ndarray]]:
        if n_max > self.n_max:
            raise InputError(f"n = {n_max} exceeds the family cap {self.n_max}")
        if self.sweep is not None:
            yield from self.sweep(points, n_max)
        else:
            for n in range(1, n_max + 1):
                yield n, self(points, n)

    def subadditivity_defect(self, points, n: int, k: int) -> float:
        """``max (a_{n+k}(x) - a_k(x) - a_n(f^k x))``; nonpositive for a subadditive family."""
        pts = _as_point_list(points, self.base)
        fk = orbits(self.base, pts, k)[k]
        return float(np.max(self(pts, n + k) - self(pts, k) - self(fk, n)))


def _as_point_list(points, base: ToralAutomorphism) -> list:
    if isinstance(points, np.ndarray):
        return list(np.atleast_2d(points))
    return [as_point(p, base.lattice) for p in points]


def _product_sweep(c: CocycleSpec, quantity: Callable) -> Callable:
    def sweep(points, n_max):
        for state in orbit_products(c, _as_point_list(points, c.base), n_max):
            yield state.n, quantity(state)

    return sweep


def _from_sweep(sweep) -> Evaluator:
    def evaluate(points, n):
        for k, vals in sweep(points, n):
            if k == n:
                return vals

    return evaluate


def constant_family(base: ToralAutomorphism, rate: float) -> SubadditiveFamily:
    """``a_n(x) = rate * n``."""
    return SubadditiveFamily(lambda pts, n: np.full(len(pts), rate * n), base, 10**9, f"{rate} n")


def log_norm_family(c: CocycleSpec, n_max: int = 4096) -> SubadditiveFamily:
    """``a_n(x) = log ||F^n_x||``."""
    sweep = _product_sweep(c, lambda s: s.log_norm)
    return SubadditiveFamily(_from_sweep(sweep), c.base, n_max, "log ||F^n||", sweep)


def distortion_family(c: CocycleSpec, rate: float, n_max: int = 4096) -> SubadditiveFamily:
    """``a_n(x) = log K(x, n) - rate * n``."""
    sweep = _product_sweep(c, lambda s: s.log_distortion - rate * s.n)
    return SubadditiveFamily(_from_sweep(sweep), c.base, n_max, f"log K - {rate} n", sweep)


def birkhoff_average(phi: Callable[[np.ndarray], np.ndarray], base: ToralAutomorphism, x, n: int,
                     chunk: int = 1 << 16) -> float:
    """``(1/n) sum_{i<n} phi(f^i x)`` along the exact orbit of ``x``.

    ``phi`` maps an ``(m, d)`` array of points to ``m`` values.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    traj = orbit(base, x, n - 1)
    total = 0.0
    for start in range(0, n, chunk):
        total += float(np.sum(phi(traj[start:start + chunk])))
    return total / n


def default_grid(base: ToralAutomorphism, k: int = 64, max_period: int = 4, cap: int = PERIODIC_CAP) -> list:
    """``k^d`` uniform points plus every periodic point of period ``<= max_period``.

    Periods whose point count exceeds ``cap`` are skipped.  Periodic points
    are kept exact.
    """
    pts: list = list(uniform_grid(base.lattice, k))
    for n in range(1, max_period + 1):
        if periodic_point_count(base, n) > cap:
            continue
        pts.extend(periodic_points(base, n, cap))
    return pts


@dataclass(frozen=True)
class NegativeLevel:
    N: int
    maxima: tuple


def level_maxima(fam: SubadditiveFamily, grid, n_max: int, stop_when_negative: bool = True) -> list[float]:
    """``max over grid of a_n`` for ``n = 1..n_max``."""
    if len(grid) == 0:
        raise InputError("empty grid")
    out = []
    for n, vals in fam.levels(grid, n_max):
        out.append(float(np.max(vals)))
        if stop_when_negative and out[-1] < 0:
            break
    return out


def find_negative_level(fam: SubadditiveFamily, grid, n_max: int) -> NegativeLevel:
    """Least ``N <= n_max`` with ``a_N < 0`` at every grid point.

    Raises
    ------
    NotFound
        if no such level exists up to ``n_max``; this is inconclusive.
    """
    maxima = level_maxima(fam, grid, n_max)
    if maxima[-1] < 0:
        return NegativeLevel(len(maxima), tuple(maxima))
    raise NotFound(f"no negative level up to N = {n_max}; last max {maxima[-1]:.4g}")


@dataclass(frozen=True)
class GrowthCertificate:
    """Result of :func:`distortion_growth_certificate`.

    ``log_constant`` is the running maximum of ``log K(x, n) - (xi+eps)|n|``;
    ``rate`` is the fitted slope of ``max_x log K(x, n)`` over the second
    half of the range.
    """

    constant: float
    log_constant: float
    passed: bool
    rate: float
    max_log_distortion: tuple


def distortion_growth_certificate(c: CocycleSpec, xi: float, eps: float, grid, n_max: int = 256) -> GrowthCertificate:
    """Measure ``C = max K(x, n) e^{-(xi+eps)|n|}`` over the grid and ``|n| <= n_max``.

    The certificate passes when doubling the range from ``n_max/2`` to
    ``n_max`` raises ``C`` by less than 1%.
    """
    if len(grid) == 0:
        raise InputError("empty grid")
    if n_max < 2:
        raise InputError("n_max must be >= 2")
    pts = _as_point_list(grid, c.base)
    rate = xi + eps
    best = np.full(n_max + 1, 0.0)  # max of log K at each |n|, over both directions
    for backward in (False, True):
        for state in orbit_products(c, pts, n_max, backward=backward):
            best[state.n] = max(best[state.n], float(np.max(state.log_distortion)))
    penalised = best - rate * np.arange(n_max + 1)
    half = n_max // 2
    logC_half = float(np.max(penalised[: half + 1]))
    logC = float(np.max(penalised))
    passed = logC <= logC_half + math.log(1.01)
    ns = np.arange(half, n_max + 1)
    slope = float(np.polyfit(ns, best[half:], 1)[0])
    const = math.exp(logC) if logC < 700 else math.inf
    return GrowthCertificate(const, logC, passed, slope, tuple(best.tolist()))


def write_levels_csv(path, maxima: Sequence[float]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "max_a_n"])
        for n, v in enumerate(maxima, start=1):
            w.writerow([n, repr(v)])
    return path
