"""Stable and unstable holonomies of fiber bunched cocycles.

The stable holonomy between ``x`` and ``y`` on one local stable leaf is the
limit of ``(F^n_y)^-1 F^n_x``.  It is evaluated as the telescoping series

    H = Id + sum_i (F^i_y)^-1 r_i F^i_x,    r_i = F(f^i y)^-1 F(f^i x) - Id,

whose terms decay like ``theta^i`` for ``theta`` the fiber bunching ratio.
Because the base is linear, ``f^i y = f^i x + t lam_s^i v_s`` exactly, so the
pair of orbits never drifts off the leaf.  Unstable holonomies are stable
holonomies of the inverse cocycle ``x -> F(f^-1 x)^-1`` over ``f^-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cocycle import CocycleSpec, _checked_inv, fiber_bunching_margin, orbit_products
from .errors import LeafEscape, NotFiberBunched, NotOnLeaf, ToleranceUnreachable
from .torus import (
    LEAF_RADIUS,
    TorusPoint,
    as_point,
    leaf_coordinates,
    orbits,
    reduce_array,
    uniform_grid,
)

THETA_SAFETY = 1.05
MARGIN_GRID = 64
MAX_TERMS = 10_000
LEAF_TOL = 1e-12
NOISE_FLOOR = 1e-12


@dataclass(frozen=True)
class HolonomyMap:
    """A holonomy matrix with the data needed to audit it.

    ``tail_bound`` bounds the distance from ``matrix`` to the true limit:
    ``C5 * dist^beta * theta^n_used / (1 - theta)`` where ``C5`` is the
    largest observed ``||increment_i|| / (dist^beta theta^i)``.
    """

    source: TorusPoint
    target: TorusPoint
    leaf: str
    matrix: np.ndarray
    n_used: int
    tail_bound: float
    theta: float
    leaf_distance: float
    increments: tuple = field(default=(), repr=False)


def holonomy_ratio(c: CocycleSpec, grid_size: int = MARGIN_GRID) -> float:
    """Geometric ratio ``theta`` for holonomy series: the grid margin plus 5%."""
    margin = fiber_bunching_margin(c, uniform_grid(c.base.lattice, grid_size))
    theta = THETA_SAFETY * margin
    if theta >= 1:
        raise NotFiberBunched(f"fiber bunching margin {margin:.4g} leaves no room below 1")
    return theta


def _series(maps_x, maps_y, dist: float, beta: float, theta: float, tol: float,
            n_min: int, n_max: int) -> tuple[np.ndarray, int, float, list[float]]:
    """Sum the holonomy series until its certified tail drops below ``tol``.

    ``maps_x(lo, hi)`` and ``maps_y(lo, hi)`` return the fiber maps applied
    at steps ``lo..hi-1`` along the two orbits.
    """
    k = None
    H = P = Q = None
    c5, incs = 0.0, []
    scale = dist**beta
    n, chunk = 0, 16
    while True:
        hi = min(n + chunk, n_max)
        Gx, Gy = maps_x(n, hi), maps_y(n, hi)
        Gy_inv = _checked_inv(Gy)
        if H is None:
            k = Gx.shape[-1]
            H, P, Q = np.eye(k), np.eye(k), np.eye(k)
        for j in range(hi - n):
            r = Gy_inv[j] @ Gx[j] - np.eye(k)
            inc = Q @ r @ P
            H = H + inc
            size = float(np.linalg.norm(inc, 2))
            incs.append(size)
            c5 = max(c5, size / (scale * theta ** (n + j)))
            P = Gx[j] @ P
            Q = Q @ Gy_inv[j]
            used = n + j + 1
            tail = c5 * scale * theta**used / (1 - theta)
            if used >= n_min and tail < tol:
                return H, used, tail, incs
        n = hi
        if n >= n_max:
            raise ToleranceUnreachable(f"tail {tail:.3g} still above {tol:g} after {n_max} terms")
        chunk *= 2


class _LeafPair:
    """Exact base orbit of ``x`` and the parallel orbit of ``x + t v`` along a leaf."""

    def __init__(self, c: CocycleSpec, x: TorusPoint, t: float, leaf: str):
        auto = c.base
        self.c, self.x, self.t, self.leaf = c, x, t, leaf
        self.backward = leaf == "unstable"
        self.v = auto.v_u if self.backward else auto.v_s
        self.rate = 1 / auto.lam_u if self.backward else auto.lam_s
        self._traj = np.empty((0, auto.dim))

    def base_points(self, hi: int) -> np.ndarray:
        if len(self._traj) < hi:
            self._traj = orbits(self.c.base, [self.x], max(hi, 2 * len(self._traj)), self.backward)[:, 0, :]
        return self._traj[:hi]

    def points(self, lo: int, hi: int, shifted: bool) -> np.ndarray:
        pts = self.base_points(hi)[lo:hi]
        if not shifted:
            return pts
        steps = np.arange(lo, hi)
        return reduce_array(pts + (self.t * self.rate**steps)[:, None] * self.v, self.c.base.lattice)

    def maps(self, shifted: bool):
        if not self.backward:
            return lambda lo, hi: self.c(self.points(lo, hi, shifted))
        # inverse cocycle over f^-1: G(f^-i x) = F(f^-(i+1) x)^-1
        return lambda lo, hi: _checked_inv(self.c(self.points(lo + 1, hi + 1, shifted)))


def _leaf_parameter(c: CocycleSpec, x, y, leaf: str, radius: float) -> float:
    s, u = leaf_coordinates(c.base, x, y)
    along, across = (u, s) if leaf == "unstable" else (s, u)
    if abs(across) > LEAF_TOL * max(1.0, abs(along)) or abs(along) > radius:
        raise NotOnLeaf(f"points are not on one local {leaf} leaf (offsets {along:.3g}, {across:.3g})")
    return along


def _holonomy(c, x, t, leaf, tol, theta, n_min, n_max) -> HolonomyMap:
    x = as_point(x, c.base.lattice)
    v = c.base.v_u if leaf == "unstable" else c.base.v_s
    y = TorusPoint(tuple(x.array + t * v), c.base.lattice)
    theta = holonomy_ratio(c) if theta is None else theta
    if not 0 < theta < 1:
        raise NotFiberBunched(f"ratio {theta} not in (0, 1)")
    dist = abs(t)
    if dist == 0:
        return HolonomyMap(x, y, leaf, np.eye(c.fiber_dim), 0, 0.0, theta, 0.0)
    pair = _LeafPair(c, x, t, leaf)
    H, used, tail, incs = _series(pair.maps(False), pair.maps(True), dist, c.beta, theta, tol, n_min, n_max)
    return HolonomyMap(x, y, leaf, H, used, tail, theta, dist, tuple(incs))


def stable_holonomy(c: CocycleSpec, x, y, tol: float = 1e-10, theta: float | None = None,
                    n_min: int = 1, n_max: int = MAX_TERMS) -> HolonomyMap:
    """Holonomy ``H^s_{xy}`` for ``y`` on the local stable leaf of ``x``.

    Raises
    ------
    NotFiberBunched
        if the grid margin (inflated by 5%) is not below 1.
    NotOnLeaf
        if ``y`` is off the local stable leaf of ``x``.
    ToleranceUnreachable
        if the certified tail stays above ``tol`` for ``n_max`` terms.
    """
    t = _leaf_parameter(c, x, y, "stable", LEAF_RADIUS)
    return _holonomy(c, x, t, "stable", tol, theta, n_min, n_max)


def unstable_holonomy(c: CocycleSpec, x, y, tol: float = 1e-10, theta: float | None = None,
                      n_min: int = 1, n_max: int = MAX_TERMS) -> HolonomyMap:
    """Holonomy ``H^u_{xy}``, the limit of ``(F^-n_y)^-1 F^-n_x``."""
    t = _leaf_parameter(c, x, y, "unstable", LEAF_RADIUS)
    return _holonomy(c, x, t, "unstable", tol, theta, n_min, n_max)


def holonomy_along_leaf(c: CocycleSpec, x, t: float, leaf: str = "stable", tol: float = 1e-10,
                        theta: float | None = None) -> HolonomyMap:
    """Local holonomy from ``x`` to ``x + t v`` given by its leaf parameter."""
    if abs(t) > LEAF_RADIUS:
        raise NotOnLeaf(f"|t| = {abs(t)} exceeds the local leaf radius")
    return _holonomy(c, x, t, leaf, tol, theta, 1, MAX_TERMS)


def extend_holonomy(c: CocycleSpec, x, t: float, tol: float = 1e-10, m: int | None = None,
                    max_steps: int = 1000, theta: float | None = None) -> HolonomyMap:
    """Stable holonomy from ``x`` to ``y = x + t v_s`` for any real ``t``.

    On a torus a stable leaf is dense, so the target is given by its leaf
    parameter.  The pair is pushed forward ``m`` steps into the local chart
    (the least admissible ``m`` unless given), and the local holonomy is
    pulled back by ``(F^m_y)^-1 H F^m_x``.

    Raises
    ------
    LeafEscape
        if ``|t| nu^m`` does not reach the local radius within ``max_steps``.
    """
    auto = c.base
    x = as_point(x, auto.lattice)
    m_min = 0 if abs(t) <= LEAF_RADIUS else math.ceil(math.log(LEAF_RADIUS / abs(t)) / math.log(auto.nu))
    while abs(t) * auto.nu**m_min > LEAF_RADIUS:
        m_min += 1
    if m_min > max_steps:
        raise LeafEscape(f"needs {m_min} steps to enter the local chart, cap {max_steps}")
    m = m_min if m is None else m
    if m < m_min:
        raise NotOnLeaf(f"m = {m} below the least admissible {m_min}")
    y = TorusPoint(tuple(x.array + t * auto.v_s), auto.lattice)
    if m == 0:
        h = _holonomy(c, x, t, "stable", tol, theta, 1, MAX_TERMS)
        return HolonomyMap(x, y, "stable", h.matrix, h.n_used, h.tail_bound, h.theta, abs(t), h.increments)
    pair = _LeafPair(c, x, t, "stable")
    Fx, Fy = c(pair.points(0, m, False)), c(pair.points(0, m, True))
    Px, Py = np.eye(c.fiber_dim), np.eye(c.fiber_dim)
    for j in range(m):
        Px, Py = Fx[j] @ Px, Fy[j] @ Py
    fmx = TorusPoint(tuple(pair.base_points(m + 1)[m]), auto.lattice)
    h = _holonomy(c, fmx, t * auto.lam_s**m, "stable", tol, theta, 1, MAX_TERMS)
    Pyinv = np.linalg.inv(Py)
    H = Pyinv @ h.matrix @ Px
    # the pulled-back tail scales by at most ||(F^m_y)^-1|| ||F^m_x||
    tail = h.tail_bound * np.linalg.norm(Pyinv, 2) * np.linalg.norm(Px, 2)
    return HolonomyMap(x, y, "stable", H, h.n_used + m, float(tail), h.theta, abs(t), h.increments)


# ---------------------------------------------------------------------------
# audits


@dataclass(frozen=True)
class AxiomReport:
    """Worst defects of the holonomy axioms over a batch of leaf triples."""

    composition: float
    equivariance: float
    holder_constant: float
    cauchy_ok: bool
    tolerance: float
    count: int

    @property
    def passed(self) -> bool:
        return self.composition < self.tolerance and self.equivariance < self.tolerance and self.cauchy_ok


def leaf_triples(c: CocycleSpec, count: int, max_dist: float, rng: np.random.Generator):
    """Random ``(x, t_y, t_z)``: three points of one stable leaf within ``max_dist`` of ``x``."""
    pts = rng.random((count, c.base.dim)) * np.asarray(c.base.lattice.periods, float)
    ts = rng.uniform(-max_dist, max_dist, size=(count, 2))
    return [(as_point(p, c.base.lattice), float(a), float(b)) for p, (a, b) in zip(pts, ts)]


def verify_holonomy_axioms(c: CocycleSpec, triples: Sequence, tol: float = 1e-8,
                           theta: float | None = None) -> AxiomReport:
    """Check composition, equivariance, the Hölder bound and the Cauchy property.

    ``triples`` holds ``(x, t_y, t_z)`` leaf parameters, so that
    ``y = x + t_y v_s`` and ``z = x + t_z v_s``.  Holonomies are computed to
    ``tol / 100``.  Equivariance compares ``H_xy`` with
    ``F(y)^-1 H_{fx fy} F(x)``; the Cauchy probe recomputes ``H_xy`` with
    twice the terms and requires agreement within twice the tail bound.
    """
    auto = c.base
    theta = holonomy_ratio(c) if theta is None else theta
    htol = tol / 100
    comp = equi = holder = 0.0
    cauchy = True
    for x, ty, tz in triples:
        x = as_point(x, auto.lattice)
        y = TorusPoint(tuple(x.array + ty * auto.v_s), auto.lattice)
        hxy = _holonomy(c, x, ty, "stable", htol, theta, 1, MAX_TERMS)
        hxz = _holonomy(c, x, tz, "stable", htol, theta, 1, MAX_TERMS)
        hyz = _holonomy(c, y, tz - ty, "stable", htol, theta, 1, MAX_TERMS)
        comp = max(comp, float(np.linalg.norm(hyz.matrix @ hxy.matrix - hxz.matrix, 2)))
        fx = TorusPoint(tuple(orbits(auto, [x], 1)[1, 0]), auto.lattice)
        hf = _holonomy(c, fx, ty * auto.lam_s, "stable", htol, theta, 1, MAX_TERMS)
        Fx, Fy = c(x.array), c(y.array)
        equi = max(equi, float(np.linalg.norm(hxy.matrix - np.linalg.solve(Fy, hf.matrix @ Fx), 2)))
        for h in (hxy, hxz):
            if h.leaf_distance > 0:
                holder = max(holder, float(np.linalg.norm(h.matrix - np.eye(c.fiber_dim), 2)) / h.leaf_distance**c.beta)
        if hxy.n_used:
            again = _holonomy(c, x, ty, "stable", htol, theta, 2 * hxy.n_used, MAX_TERMS)
            cauchy &= float(np.linalg.norm(again.matrix - hxy.matrix, 2)) <= 2 * hxy.tail_bound + 1e-15
    return AxiomReport(comp, equi, holder, cauchy, tol, len(triples))


@dataclass(frozen=True)
class FiRow:
    i: int
    product: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.product / self.bound


def lemma_Fi_check(c: CocycleSpec, x, t: float, i_max: int, theta: float | None = None) -> tuple[list[FiRow], float]:
    """Table of ``||(F^i_y)^-1|| ||F^i_x||`` against ``theta^i nu^(-i beta)``.

    ``y = x + t v_s``.  ``theta`` defaults to the raw grid margin.  Returns the
    rows and the empirical constant ``C0 = max ratio``.
    """
    auto = c.base
    x = as_point(x, auto.lattice)
    theta = fiber_bunching_margin(c) if theta is None else theta
    pair = _LeafPair(c, x, t, "stable")
    tx = pair.points(0, i_max + 1, False)[:, None, :]
    ty = pair.points(0, i_max + 1, True)[:, None, :]
    rows = [FiRow(0, 1.0, 1.0)]
    lognu = math.log(auto.nu)
    for sx, sy in zip(orbit_products(c, None, i_max, trajectories=tx), orbit_products(c, None, i_max, trajectories=ty)):
        i = sx.n
        log_prod = float(sx.log_norm[0] - sy.log_conorm[0])
        log_bound = i * (math.log(theta) - c.beta * lognu)
        rows.append(FiRow(i, math.exp(log_prod), math.exp(log_bound)))
    return rows, max(r.ratio for r in rows)


def increment_decay_slope(maps: Sequence[HolonomyMap], floor: float = NOISE_FLOOR) -> float:
    """Pooled slope of ``log ||increment_i||`` against ``i`` across holonomies.

    Each holonomy gets its own intercept; increments below ``floor`` are
    rounding noise and are dropped.
    """
    xs, ys = [], []
    for h in maps:
        inc = np.asarray(h.increments)
        idx = np.flatnonzero(inc > floor)
        if len(idx) < 2:
            continue
        li = np.log(inc[idx])
        xs.append(idx - idx.mean())
        ys.append(li - li.mean())
    if not xs:
        return -math.inf
    x, y = np.concatenate(xs), np.concatenate(ys)
    return float(np.dot(x, y) / np.dot(x, x))
