"""Detection and normalisation of continuous invariant structures.

* fields of unordered pairs of lines in a 2-dimensional fiber,
* invariant conformal structures built as barycentres of pulled-back orbits,
* solutions of the cohomological equation ``a = e^c psi(f x) / psi(x)``,
* normalisation of the factors of an invariant flag,
* polynomial growth fits and the projective Lipschitz bound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .cocycle import CocycleSpec, iterates_at, orbit_products
from .conformal import ConformalStructure, act, act_many, distance, karcher_mean, minimal_enclosing_ball
from .errors import (
    InputError,
    NoConvergence,
    NoInvariantPair,
    NotQuasiconformalOnWindow,
    ObstructionNonzero,
)
from .torus import (
    PERIODIC_CAP,
    ToralAutomorphism,
    orbit,
    orbits,
    periodic_point_count,
    periodic_points,
    random_points,
    reduce_array,
    uniform_grid,
)

PAIR_RULES = ("forward", "backward", "mixed")
GAP_FLOOR = 1e-6
SMOOTHING_STEP = 1e-4


# ---------------------------------------------------------------------------
# lines and unordered pairs of lines, as angles in [0, pi)


def line_angle(v: np.ndarray) -> np.ndarray:
    """Angle in ``[0, pi)`` of the line spanned by each row of ``v``."""
    return np.mod(np.arctan2(v[..., 1], v[..., 0]), np.pi)


def line_distance(a, b) -> np.ndarray:
    """Angle between lines, in ``[0, pi/2]``."""
    d = np.mod(np.asarray(a) - np.asarray(b), np.pi)
    return np.minimum(d, np.pi - d)


def pair_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distance between unordered pairs given as ``(..., 2)`` angle arrays."""
    straight = np.maximum(line_distance(p[..., 0], q[..., 0]), line_distance(p[..., 1], q[..., 1]))
    swapped = np.maximum(line_distance(p[..., 0], q[..., 1]), line_distance(p[..., 1], q[..., 0]))
    return np.minimum(straight, swapped)


def _canonical(pairs: np.ndarray) -> np.ndarray:
    return np.sort(np.mod(pairs, np.pi), axis=-1)


def _push_lines(mats: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Image angles of lines under matrices: ``mats (m,2,2)``, ``angles (m,j)``."""
    vecs = np.stack([np.cos(angles), np.sin(angles)], -1)  # (m, j, 2)
    img = np.einsum("mab,mjb->mja", mats, vecs)
    return line_angle(img)


@dataclass(frozen=True, eq=False)
class LinePairField:
    """An unordered pair of lines at each grid point.

    ``rule`` and ``n`` record how pairs are produced, so that :meth:`at`
    evaluates the same field at new points.
    """

    grid: np.ndarray
    angles: np.ndarray
    residual: float
    rule: str
    n: int
    cocycle: CocycleSpec = field(repr=False)

    def at(self, points) -> np.ndarray:
        return _pair_field(self.cocycle, np.atleast_2d(np.asarray(points, float)), self.rule, self.n)

    def to_csv(self, path) -> Path:
        path = Path(path)
        img = self.at(self.cocycle.base.step(self.grid))
        pushed = _push_lines(self.cocycle(self.grid), self.angles)
        res = pair_distance(_canonical(pushed), img)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "angle1", "angle2", "residual"])
            for p, a, r in zip(self.grid, self.angles, res):
                w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(a[0])), repr(float(a[1])), repr(float(r))])
        return path


def _right_singular(units: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Angles of the most expanded and most contracted input lines, and the relative gap."""
    _, s, Vt = np.linalg.svd(units)
    gap = (s[:, 0] - s[:, -1]) / s[:, 0]
    return line_angle(Vt[:, 0]), line_angle(Vt[:, -1]), gap


def _raw_pairs(c: CocycleSpec, points: np.ndarray, rule: str, n: int) -> np.ndarray:
    """Candidate pairs at ``points`` or NaN where the rule is undefined."""
    fwd = bwd = None
    if rule in ("forward", "mixed"):
        for st in orbit_products(c, list(points), n):
            pass
        fwd = _right_singular(st.unit)
    if rule in ("backward", "mixed"):
        for st in orbit_products(c, list(points), n, backward=True):
            pass
        bwd = _right_singular(st.unit)
    if rule == "forward":
        pairs, ok = np.stack([fwd[0], fwd[1]], -1), fwd[2] > GAP_FLOOR
    elif rule == "backward":
        pairs, ok = np.stack([bwd[0], bwd[1]], -1), bwd[2] > GAP_FLOOR
    elif rule == "mixed":
        pairs, ok = np.stack([fwd[1], bwd[1]], -1), (fwd[2] > GAP_FLOOR) & (bwd[2] > GAP_FLOOR)
    else:
        raise InputError(f"unknown pair rule {rule!r}")
    pairs = _canonical(pairs)
    pairs[~ok] = np.nan
    return pairs


def _average_pairs(samples: np.ndarray) -> np.ndarray:
    """Average unordered pairs ``(k, m, 2)`` over the first axis, aligning each to the first."""
    ref = samples[0]
    acc = np.zeros_like(ref)
    for s in samples:
        swap = pair_distance(ref, s[..., ::-1]) < np.maximum(line_distance(ref[..., 0], s[..., 0]),
                                                             line_distance(ref[..., 1], s[..., 1]))
        s = np.where(swap[..., None], s[..., ::-1], s)
        # unwrap each angle to the branch nearest the reference
        s = ref + (np.mod(s - ref + np.pi / 2, np.pi) - np.pi / 2)
        acc += s
    return _canonical(acc / len(samples))


def _pair_field(c: CocycleSpec, points: np.ndarray, rule: str, n: int) -> np.ndarray:
    """Pairs at ``points``; undefined points are filled from symmetric neighbours."""
    points = reduce_array(points, c.base.lattice)
    pairs = _raw_pairs(c, points, rule, n)
    bad = np.flatnonzero(np.isnan(pairs[:, 0]))
    if len(bad):
        h = SMOOTHING_STEP
        offsets = np.array([[h, 0], [-h, 0], [0, h], [0, -h]])
        nb = reduce_array((points[bad][None, :, :] + offsets[:, None, :]).reshape(-1, 2), c.base.lattice)
        near = _raw_pairs(c, nb, rule, n).reshape(len(offsets), len(bad), 2)
        for i in range(len(bad)):
            ok = ~np.isnan(near[:, i, 0])
            # use opposite neighbours in matched pairs so the average is second order
            both = [k for k in (0, 2) if ok[k] and ok[k + 1]]
            idx = [j for k in both for j in (k, k + 1)] or list(np.flatnonzero(ok))
            if idx:
                pairs[bad[i]] = _average_pairs(near[idx, i][:, None, :])[0]
    return pairs


def _invariance_residual(c: CocycleSpec, points: np.ndarray, pairs: np.ndarray, image_pairs: np.ndarray) -> np.ndarray:
    pushed = _canonical(_push_lines(c(points), pairs))
    res = pair_distance(pushed, image_pairs)
    return np.where(np.isnan(res), np.inf, res)


def invariant_line_pair_field(c: CocycleSpec, grid, tol: float = 1e-6,
                              n_list: Sequence[int] = (1, 4, 16, 64), rules: Sequence[str] = PAIR_RULES) -> LinePairField:
    """Find a continuous ``F``-invariant field of unordered pairs of lines.

    Candidates at each point are the right singular lines of ``F^n_x``
    (forward), of ``F^-n_x`` (backward), or the most contracted line of each
    (mixed).  Every candidate rule is evaluated at the grid and at its image
    under ``f``; the rule with the smallest invariance residual wins.
    Points where a rule has no singular gap take the average of the pairs at
    symmetric neighbours.

    Raises
    ------
    NoInvariantPair
        if no rule reaches ``tol``.
    """
    if c.fiber_dim != 2:
        raise InputError("line pairs need a 2-dimensional fiber")
    grid = np.atleast_2d(np.asarray(grid, float))
    images = c.base.step(grid)
    best = None
    for n in n_list:
        for rule in rules:
            pairs = _pair_field(c, grid, rule, n)
            res = _invariance_residual(c, grid, pairs, _pair_field(c, images, rule, n))
            worst = float(np.max(res))
            if best is None or worst < best[0]:
                best = (worst, rule, n, pairs)
            if worst < tol * 1e-3:
                break
        if best[0] < tol * 1e-3:
            break
    worst, rule, n, pairs = best
    if not worst < tol:
        raise NoInvariantPair(f"best invariance residual {worst:.3g} above {tol:g}")
    return LinePairField(grid, pairs, worst, rule, n, c)


@dataclass(frozen=True)
class Monodromy:
    axis: int
    swapped: bool
    mismatch: float


def monodromy(fld: LinePairField, axis: int, start=(0.1, 0.3), steps: int = 256) -> Monodromy:
    """Follow one line of the field once around a coordinate loop.

    The line is transported by matching it to the nearer line of the pair
    at each step.  ``swapped`` is true when it returns as the other line.
    """
    period = fld.cocycle.base.lattice.periods[axis]
    t = np.linspace(0, period, steps + 1)
    pts = np.tile(np.asarray(start, float), (steps + 1, 1))
    pts[:, axis] += t
    pairs = fld.at(pts)
    cur = pairs[0, 0]
    for p in pairs[1:]:
        cur = p[0] if line_distance(cur, p[0]) <= line_distance(cur, p[1]) else p[1]
    d_same = float(line_distance(cur, pairs[0, 0]))
    d_other = float(line_distance(cur, pairs[0, 1]))
    return Monodromy(axis, d_other < d_same, min(d_same, d_other))


# ---------------------------------------------------------------------------
# invariant conformal structures


@dataclass(frozen=True)
class ConformalField:
    grid: np.ndarray
    structures: tuple
    defect: float
    max_distortion: float


def _window_structures(c: CocycleSpec, points: np.ndarray, tau0: ConformalStructure, window: int,
                       k_cap: float) -> tuple[np.ndarray, float]:
    """Pullbacks of ``tau0`` to each point by ``F^k`` for ``|k| <= window``: ``(m, 2w+1, d, d)``."""
    pts = list(points)
    m, d = len(pts), c.fiber_dim
    out = np.empty((m, 2 * window + 1, d, d))
    out[:, window] = tau0.matrix
    worst = 0.0
    for backward in (False, True):
        for st in orbit_products(c, pts, window, backward=backward):
            logk = float(np.max(st.log_distortion))
            worst = max(worst, logk)
            if logk > math.log(k_cap):
                raise NotQuasiconformalOnWindow(
                    f"distortion {math.exp(min(logk, 700)):.3g} above cap {k_cap:g} at |k| = {st.n}")
            idx = window - st.n if backward else window + st.n
            # the pullback by the unit product equals that of the true product
            out[:, idx] = act_many(np.linalg.inv(st.unit), tau0)
    return out, math.exp(worst)


def invariant_conformal_structure(c: CocycleSpec, tau0=None, grid=None, window: int = 32, method: str = "ball",
                                  tol: float = 1e-8, k_cap: float = 100.0) -> ConformalField:
    """Barycentres of the pulled-back orbit ``{(F^k_x)^* tau0 : |k| <= window}``.

    ``method`` is ``"ball"`` (centre of the minimal enclosing ball) or
    ``"mean"`` (Karcher mean).  Invariance is checked against the field
    computed directly at the image points.

    Raises
    ------
    NotQuasiconformalOnWindow
        if ``K(x, k)`` exceeds ``k_cap`` inside the window.
    NoConvergence
        if the invariance defect is above ``tol``.
    """
    d = c.fiber_dim
    tau0 = ConformalStructure(np.eye(d)) if tau0 is None else ConformalStructure(np.asarray(getattr(tau0, "matrix", tau0)))
    if method not in ("ball", "mean"):
        raise InputError(f"unknown barycentre {method!r}")
    grid = np.atleast_2d(np.asarray(grid if grid is not None else _small_grid(c.base), float))
    images = c.base.step(grid)
    both = np.concatenate([grid, images])
    sets, kmax = _window_structures(c, both, tau0, window, k_cap)
    centres = []
    for s in sets:
        if method == "ball":
            centres.append(minimal_enclosing_ball(list(s)).center)
        else:
            centres.append(karcher_mean(list(s)))
    m = len(grid)
    Fx = c(grid)
    defect = max(distance(act(F, centres[i]), centres[m + i]) for i, F in enumerate(Fx))
    if not defect < tol:
        raise NoConvergence(f"invariance defect {defect:.3g} above {tol:g}")
    return ConformalField(grid, tuple(centres[:m]), float(defect), kmax)


def _small_grid(base: ToralAutomorphism, k: int = 8) -> np.ndarray:
    return uniform_grid(base.lattice, k)


# ---------------------------------------------------------------------------
# cohomological equation


@dataclass(frozen=True)
class CoboundarySolution:
    """``log psi`` along an orbit with ``log a(x) = c + log psi(f x) - log psi(x)``.

    ``constant`` is the common periodic average of ``log a``; ``gap`` is the
    largest deviation of a periodic average from it.
    """

    points: np.ndarray
    log_psi: np.ndarray
    constant: float
    gap: float
    birkhoff_mean: float
    holder_constant: float
    holder_pairs: int

    @property
    def psi(self) -> np.ndarray:
        return np.exp(self.log_psi)


def periodic_averages(log_a: Callable[[np.ndarray], np.ndarray], base: ToralAutomorphism, max_period: int = 4,
                      cap: int = PERIODIC_CAP) -> np.ndarray:
    """Orbit averages of ``log_a`` over all periodic points of period ``<= max_period``.

    Periods with more points than ``cap`` are skipped, except period 1.
    """
    out = []
    for n in range(1, max_period + 1):
        if n > 1 and periodic_point_count(base, n) > cap:
            continue
        pts = periodic_points(base, n, cap)
        traj = orbits(base, pts, n - 1)  # (n, m, d)
        vals = log_a(traj.reshape(-1, base.dim)).reshape(n, len(pts))
        out.append(vals.mean(axis=0))
    return np.concatenate(out)


def holder_diagnostic(points: np.ndarray, values: np.ndarray, periods: Sequence[int], delta: float,
                      beta: float = 1.0, quantile: float = 95.0, max_points: int = 20000) -> tuple[float, int]:
    """95th percentile of ``|v(x) - v(y)| / dist(x, y)^beta`` over pairs closer than ``delta``."""
    points = np.asarray(points, float)[:max_points]
    values = np.asarray(values, float)[:max_points]
    tree = cKDTree(np.mod(points, periods), boxsize=np.asarray(periods, float))
    pairs = tree.query_pairs(delta, output_type="ndarray")
    if len(pairs) == 0:
        return math.nan, 0
    diff = points[pairs[:, 0]] - points[pairs[:, 1]]
    p = np.asarray(periods, float)
    diff -= p * np.round(diff / p)
    dist = np.linalg.norm(diff, axis=1)
    keep = dist > 0
    if not keep.any():
        return math.nan, 0
    ratios = np.abs(values[pairs[keep, 0]] - values[pairs[keep, 1]]) / dist[keep] ** beta
    return float(np.percentile(ratios, quantile)), int(keep.sum())


def coboundary_solve(a: Callable[[np.ndarray], np.ndarray], base: ToralAutomorphism, x0, n: int, anchor: float = 1.0,
                     tol: float = 1e-8, max_period: int = 4, beta: float = 1.0, delta: float = 1e-2) -> CoboundarySolution:
    """Solve ``a(x) = e^c psi(f x) / psi(x)`` along the orbit of ``x0``.

    The constant ``c`` is read from periodic orbits, where a coboundary
    averages to exactly ``c``; then ``log psi`` is propagated along ``n``
    steps with ``psi(x0) = anchor``.

    Raises
    ------
    ObstructionNonzero
        if periodic averages of ``log a`` differ by more than ``tol``.
    """
    if anchor <= 0:
        raise InputError("anchor must be positive")

    def log_a(pts):
        vals = np.asarray(a(pts), float)
        if np.any(vals <= 0):
            raise InputError("the function must be positive")
        return np.log(vals)

    avgs = periodic_averages(log_a, base, max_period)
    c = float(np.mean(avgs))
    gap = float(np.max(np.abs(avgs - c)))
    if gap > tol:
        raise ObstructionNonzero(f"periodic averages of log a spread by {gap:.3g}")
    traj = orbit(base, x0, n)
    la = log_a(traj[:-1])
    log_psi = np.empty(n + 1)
    log_psi[0] = math.log(anchor)
    log_psi[1:] = math.log(anchor) + np.cumsum(la - c)
    holder, npairs = holder_diagnostic(traj, log_psi, base.lattice.periods, delta, beta)
    return CoboundarySolution(traj, log_psi, c, gap, float(np.mean(la)), holder, npairs)


# ---------------------------------------------------------------------------
# flags


@dataclass(frozen=True)
class FlagStructure:
    """A one-dimensional invariant sub-bundle with its factor scalings.

    ``a1`` scales the line, ``a2`` the quotient; ``phi = 1 / a1`` makes the
    line factor of ``phi F`` an isometry, and the quotient factor becomes
    ``a2 / a1``, a coboundary ``psi(f x) / psi(x)`` when the flag can be
    normalised.  ``defect`` is the largest deviation from 1 of the rescaled
    factor scalings along the solved orbit.
    """

    dims: tuple
    grid: np.ndarray
    lines: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    phi: np.ndarray
    constant: float
    gap: float
    defect: float


def factor_scalings(c: CocycleSpec, line_field: Callable[[np.ndarray], np.ndarray],
                    points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(a1, a2)``: the factor of ``F`` on the line and on the quotient, Euclidean metrics."""
    points = np.atleast_2d(np.asarray(points, float))
    e = line_field(points)
    fe = line_field(c.base.step(points))
    img = np.einsum("mab,mb->ma", c(points), e)
    a1 = np.abs(np.einsum("ma,ma->m", img, fe))
    a2 = np.abs(np.linalg.det(c(points))) / a1
    return a1, a2


def flag_factor_normalize(c: CocycleSpec, line_field: Callable[[np.ndarray], np.ndarray], grid, x0=None,
                          n: int = 10_000, tol: float = 1e-8, max_period: int = 4) -> FlagStructure:
    """Normalise the factors of the flag ``line_field ⊂ fiber`` for 2-dimensional fibers.

    ``line_field`` maps points to unit vectors spanning an invariant line.

    Raises
    ------
    ObstructionNonzero
        if ``a2 / a1`` is not cohomologous to 1 (periodic data differ), in
        which case no rescaling makes both factors isometric.
    InputError
        if the line field is not invariant to ``tol``.
    """
    if c.fiber_dim != 2:
        raise InputError("flags are normalised for 2-dimensional fibers")
    grid = np.atleast_2d(np.asarray(grid, float))
    e, fe = line_field(grid), line_field(c.base.step(grid))
    img = np.einsum("mab,mb->ma", c(grid), e)
    skew = np.abs(img[:, 0] * fe[:, 1] - img[:, 1] * fe[:, 0]) / np.linalg.norm(img, axis=1)
    if np.max(skew) > tol:
        raise InputError(f"line field is not invariant: defect {np.max(skew):.3g}")
    a1, a2 = factor_scalings(c, line_field, grid)

    def ratio(pts):
        r1, r2 = factor_scalings(c, line_field, pts)
        return r2 / r1

    avgs = periodic_averages(lambda p: np.log(ratio(p)), c.base, max_period)
    gap = float(np.max(np.abs(avgs)))
    if gap > tol:
        raise ObstructionNonzero(f"factor scalings differ on periodic orbits by {gap:.3g}")
    x0 = random_points(c.base.lattice, 1, np.random.default_rng(0))[0] if x0 is None else x0
    sol = coboundary_solve(ratio, c.base, x0, n, tol=tol, max_period=max_period)
    traj = sol.points
    b1, b2 = factor_scalings(c, line_field, traj[:-1])
    phi_orbit = 1 / b1
    # quotient factor of phi F, measured with the metric rescaled by 1/psi
    quotient = phi_orbit * b2 * np.exp(sol.log_psi[:-1] - sol.log_psi[1:])
    defect = float(max(np.max(np.abs(phi_orbit * b1 - 1)), np.max(np.abs(quotient - 1))))
    return FlagStructure((1, 2), grid, e, a1, a2, 1 / a1, sol.constant, gap, defect)


# ---------------------------------------------------------------------------
# growth


@dataclass(frozen=True)
class GrowthFit:
    norm_slope: float
    distortion_slope: float
    ns: tuple
    max_log_norm: tuple
    max_log_distortion: tuple


def polynomial_growth_fit(c: CocycleSpec, grid, ns: Sequence[int] = tuple(2**k for k in range(4, 15))) -> GrowthFit:
    """Least-squares slopes of ``max_x log ||F^n_x||`` and ``max_x log K(x, n)`` against ``log n``."""
    grid = list(np.atleast_2d(np.asarray(grid, float)))
    if not grid:
        raise InputError("empty grid")
    ns = sorted(int(n) for n in ns)
    if len(ns) < 2 or ns[0] < 1:
        raise InputError("need at least two positive n")
    norms = np.full(len(ns), -np.inf)
    dists = np.full(len(ns), -np.inf)
    for x in grid:
        for i, r in enumerate(iterates_at(c, x, ns)):
            norms[i] = max(norms[i], r.log_norm)
            dists[i] = max(dists[i], r.log_distortion)
    ln = np.log(ns)
    return GrowthFit(float(np.polyfit(ln, norms, 1)[0]), float(np.polyfit(ln, dists, 1)[0]), tuple(ns),
                     tuple(norms.tolist()), tuple(dists.tolist()))


@dataclass(frozen=True)
class LipschitzCheck:
    lhs: np.ndarray
    rhs: np.ndarray
    distortion: float
    max_ratio: float

    @property
    def holds(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs * (1 + 1e-12) + 1e-15))


def grassmann_lipschitz_check(c: CocycleSpec, x, n: int, xi, eta, constant: float = 1.0) -> LipschitzCheck:
    """Compare ``dist(F^n xi, F^n eta)`` with ``constant * K(x, n) * dist(xi, eta)`` for lines.

    Lines are angles; the distance is the angle between lines.  For
    2-dimensional fibers the projective action has derivative at most
    ``K``, so ``constant = 1`` is a valid choice.
    """
    if c.fiber_dim != 2:
        raise InputError("projective Lipschitz check is for 2-dimensional fibers")
    xi, eta = np.atleast_1d(np.asarray(xi, float)), np.atleast_1d(np.asarray(eta, float))
    if n == 0:
        U, K = np.eye(2), 1.0
    else:
        r = iterates_at(c, x, [n])[0]
        U, K = r.unit, math.exp(r.log_distortion)
    A = np.broadcast_to(U, (len(xi), 2, 2))
    img = _push_lines(A, np.stack([xi, eta], -1))
    lhs = line_distance(img[:, 0], img[:, 1])
    base = line_distance(xi, eta)
    rhs = constant * K * base
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(base > 0, lhs / (K * base), 0.0)
    return LipschitzCheck(lhs, rhs, K, float(np.max(ratio)))
