"""Hyperbolic automorphisms of tori, their covers, leaves and periodic points.

Points live on ``R^d / L`` for a rectangular lattice ``L = p_1 Z x ... x p_d Z``
(``Z^2`` and the covers ``2Z x Z``, ``4Z x Z`` are the cases of interest).

Orbits are always computed in exact rational arithmetic.  A float coordinate is
a dyadic rational, so ``Fraction(x)`` is exact and the orbit returned is the
true orbit of the float point rather than a shadowed pseudo-orbit.  This
matters: a hyperbolic matrix amplifies rounding by ``|lambda_u|`` per step
(about 66 for ``[[41, 32], [32, 25]]``), and cocycles built from the orbit
(e.g. the rotation factor of the example cocycle) only telescope on true orbits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Callable, Sequence

import numpy as np

from .errors import (
    InputError,
    IterateOverflow,
    LatticeNotInvariant,
    LeafRadiusExceeded,
    NotHyperbolic,
    NotUnimodular,
    OutsideProductChart,
    TooManyPeriodicPoints,
)

Number = Fraction | float
IntMatrix = tuple[tuple[int, ...], ...]

LEAF_RADIUS = 0.25
CHART_RADIUS = 0.1
MAX_POWER_BITS = 1 << 16
PERIODIC_CAP = 100_000
# largest prime below 2**28; random seeds are rationals with this denominator
# so that orbit arithmetic stays inside int64 even on 4-fold covers
SEED_DENOMINATOR = 2**28 - 57


@dataclass(frozen=True)
class Lattice:
    """Rectangular lattice ``p_1 Z x ... x p_d Z``."""

    periods: tuple[int, ...]

    def __post_init__(self):
        if not self.periods or any(int(p) != p or p <= 0 for p in self.periods):
            raise InputError(f"lattice periods must be positive integers, got {self.periods}")
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))

    @classmethod
    def standard(cls, d: int = 2) -> "Lattice":
        return cls((1,) * d)

    @property
    def dim(self) -> int:
        return len(self.periods)

    @property
    def index(self) -> int:
        """Index of ``L`` in ``Z^d`` (the degree of the cover ``R^d/L -> T^d``)."""
        return math.prod(self.periods)

    def __str__(self) -> str:
        return " x ".join("Z" if p == 1 else f"{p}Z" for p in self.periods)


def _reduce_coord(c: Number, p: int) -> Number:
    if isinstance(c, Fraction):
        return c % p
    r = math.fmod(float(c), p)
    if r < 0:
        r += p
    # fmod of a tiny negative number can round up to exactly p
    return 0.0 if r >= p else r


@dataclass(frozen=True)
class TorusPoint:
    """A point of ``R^d / L``; coordinates are stored in ``[0, p_i)``.

    Coordinates are ``Fraction`` (exact) or ``float``.  Construction reduces the
    coordinates, so reduction is idempotent by design.
    """

    coords: tuple[Number, ...]
    lattice: Lattice

    def __post_init__(self):
        if len(self.coords) != self.lattice.dim:
            raise InputError("point dimension does not match lattice")
        coords = tuple(
            _reduce_coord(c if isinstance(c, Fraction) else float(c), p)
            for c, p in zip(self.coords, self.lattice.periods)
        )
        object.__setattr__(self, "coords", coords)

    @property
    def exact(self) -> bool:
        return all(isinstance(c, Fraction) for c in self.coords)

    @property
    def array(self) -> np.ndarray:
        return np.array([float(c) for c in self.coords])

    def __repr__(self) -> str:
        return f"TorusPoint({', '.join(str(c) for c in self.coords)} on {self.lattice})"


def as_point(x, lattice: Lattice) -> TorusPoint:
    if isinstance(x, TorusPoint):
        if x.lattice != lattice:
            raise InputError(f"point lives on {x.lattice}, expected {lattice}")
        return x
    return TorusPoint(tuple(x), lattice)


def reduce_array(points: np.ndarray, lattice: Lattice) -> np.ndarray:
    """Canonical representatives of a float array of shape ``(..., d)``."""
    p = np.asarray(lattice.periods, dtype=float)
    r = np.mod(points, p)
    return np.where(r >= p, 0.0, r)


def torus_dist(x, y, lattice: Lattice | None = None) -> float | np.ndarray:
    """Quotient Euclidean distance.

    For a rectangular lattice the nearest translate is found coordinatewise,
    which gives the same minimum as scanning the ``3^d`` neighbouring cells.
    Accepts ``TorusPoint``s or broadcastable arrays of shape ``(..., d)``.
    """
    if isinstance(x, TorusPoint):
        lattice = x.lattice
        x = x.array
    if isinstance(y, TorusPoint):
        lattice = y.lattice
        y = y.array
    if lattice is None:
        raise InputError("lattice required for array input")
    p = np.asarray(lattice.periods, dtype=float)
    delta = np.asarray(x, float) - np.asarray(y, float)
    delta = delta - p * np.round(delta / p)
    out = np.sqrt(np.sum(delta * delta, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def uniform_grid(lattice: Lattice, k: int) -> np.ndarray:
    """``k^d`` points ``(i_1 p_1 / k, ..., i_d p_d / k)`` as a float array."""
    axes = [np.arange(k) * (p / k) for p in lattice.periods]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


# ---------------------------------------------------------------------------
# exact integer linear algebra


def _matmul_int(a: IntMatrix, b: IntMatrix) -> IntMatrix:
    return tuple(
        tuple(sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0])))
        for i in range(len(a))
    )


def _identity(d: int) -> IntMatrix:
    return tuple(tuple(int(i == j) for j in range(d)) for i in range(d))


def _det_int(a: IntMatrix) -> int:
    """Bareiss fraction-free determinant."""
    m = [list(r) for r in a]
    n = len(m)
    sign, prev = 1, 1
    for k in range(n - 1):
        if m[k][k] == 0:
            for r in range(k + 1, n):
                if m[r][k] != 0:
                    m[k], m[r] = m[r], m[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) // prev
        prev = m[k][k]
    return sign * m[-1][-1]


def _inverse_frac(a: Sequence[Sequence[int]]) -> list[list[Fraction]]:
    n = len(a)
    m = [[Fraction(x) for x in row] + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(a)]
    for c in range(n):
        piv = next(r for r in range(c, n) if m[r][c] != 0)
        m[c], m[piv] = m[piv], m[c]
        pv = m[c][c]
        m[c] = [v / pv for v in m[c]]
        for r in range(n):
            if r != c and m[r][c] != 0:
                f = m[r][c]
                m[r] = [vr - f * vc for vr, vc in zip(m[r], m[c])]
    return [row[n:] for row in m]


def _column_hnf_diagonal(a: IntMatrix) -> list[int]:
    """Diagonal of a lower-triangular column Hermite form of ``a``.

    ``a Z^d`` equals ``H Z^d`` for lower-triangular ``H``; the vectors with
    ``0 <= k_i < H_ii`` then form a complete residue system of ``Z^d / a Z^d``.
    """
    m = [list(r) for r in a]
    d = len(m)
    for i in range(d):
        for j in range(i + 1, d):
            while m[i][j] != 0:
                q = m[i][i] // m[i][j]
                for r in range(d):
                    m[r][i] -= q * m[r][j]
                for r in range(d):
                    m[r][i], m[r][j] = m[r][j], m[r][i]
        if m[i][i] < 0:
            for r in range(d):
                m[r][i] = -m[r][i]
    return [m[i][i] for i in range(d)]


def matrix_power(matrix: IntMatrix, n: int, inverse: IntMatrix | None = None,
                 max_bits: int = MAX_POWER_BITS) -> IntMatrix:
    """Exact ``M^n`` by repeated squaring; negative ``n`` needs ``inverse``."""
    if n < 0:
        if inverse is None:
            raise InputError("negative power needs the inverse matrix")
        matrix, n = inverse, -n
    result, base = _identity(len(matrix)), matrix
    while n:
        if n & 1:
            result = _matmul_int(result, base)
        n >>= 1
        if n:
            base = _matmul_int(base, base)
        if max(abs(v) for row in base for v in row).bit_length() > max_bits:
            raise IterateOverflow(f"matrix power exceeds {max_bits} bits")
    return result


# ---------------------------------------------------------------------------
# automorphisms


@dataclass(frozen=True)
class ToralAutomorphism:
    """Integer matrix acting on ``R^d / L``, with its hyperbolic splitting.

    ``lam_u``/``v_u`` and ``lam_s``/``v_s`` are the expanding and contracting
    eigenvalues with unit eigenvectors (the leaf directions when d = 2);
    ``nu = |lam_s|`` and ``nu_hat = 1 / |lam_u|`` are the constant contraction
    rates along stable and unstable leaves.
    """

    matrix: IntMatrix
    lattice: Lattice
    inverse: IntMatrix
    lam_u: float
    lam_s: float
    v_u: np.ndarray
    v_s: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.matrix)

    @property
    def nu(self) -> float:
        return abs(self.lam_s)

    @property
    def nu_hat(self) -> float:
        return 1.0 / abs(self.lam_u)

    @property
    def M(self) -> np.ndarray:
        return np.array(self.matrix, dtype=float)

    @property
    def eigenbasis_condition(self) -> float:
        """Spectral condition number of ``[v_s | v_u]``."""
        return float(np.linalg.cond(np.column_stack([self.v_s, self.v_u])))

    def __hash__(self):
        return hash((self.matrix, self.lattice))

    def __eq__(self, other):
        return isinstance(other, ToralAutomorphism) and (self.matrix, self.lattice) == (
            other.matrix,
            other.lattice,
        )

    def power(self, n: int) -> IntMatrix:
        return matrix_power(self.matrix, n, self.inverse)

    def step(self, points: np.ndarray, n: int = 1) -> np.ndarray:
        """Float image ``M^n x mod L``; adequate for a few steps only."""
        A = np.array(self.power(n), dtype=float)
        return reduce_array(np.asarray(points, float) @ A.T, self.lattice)


def _lattice_conjugate(matrix: IntMatrix, lattice: Lattice) -> list[list[Fraction]]:
    p = lattice.periods
    return [[Fraction(matrix[i][j] * p[j], p[i]) for j in range(len(p))] for i in range(len(p))]


def _preserves(matrix: IntMatrix, lattice: Lattice) -> bool:
    return all(v.denominator == 1 for row in _lattice_conjugate(matrix, lattice) for v in row)


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.real_if_close(np.asarray(v)).astype(float)
    v = v / np.linalg.norm(v)
    k = np.flatnonzero(np.abs(v) > 1e-14)[0]
    return v if v[k] > 0 else -v


def make_automorphism(matrix, lattice: Lattice | Sequence[int] | None = None) -> ToralAutomorphism:
    """Validate an integer matrix as a hyperbolic automorphism of ``R^d / L``.

    Raises
    ------
    NotUnimodular, NotHyperbolic, LatticeNotInvariant
    """
    arr = np.asarray(matrix)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
        raise InputError(f"need a square d x d matrix with d >= 2, got shape {arr.shape}")
    if not np.all(np.equal(arr, np.round(arr))):
        raise InputError("matrix entries must be integers")
    m: IntMatrix = tuple(tuple(int(v) for v in row) for row in arr.tolist())
    d = len(m)
    if lattice is None:
        lattice = Lattice.standard(d)
    elif not isinstance(lattice, Lattice):
        lattice = Lattice(tuple(lattice))
    if lattice.dim != d:
        raise InputError("lattice dimension does not match matrix")

    det = _det_int(m)
    if abs(det) != 1:
        raise NotUnimodular(f"|det M| = {abs(det)}, expected 1")
    inv = tuple(tuple(int(v) for v in row) for row in _inverse_frac(m))
    if d == 2:
        tr = m[0][0] + m[1][1]
        if (det == 1 and abs(tr) <= 2) or (det == -1 and tr == 0):
            raise NotHyperbolic(f"trace {tr} with det {det} is not hyperbolic")
    if not (_preserves(m, lattice) and _preserves(inv, lattice)):
        raise LatticeNotInvariant(f"{[list(r) for r in m]} does not preserve {lattice}")

    A = np.array(m, dtype=float)
    if d == 2:
        tr = A[0, 0] + A[1, 1]
        disc = math.sqrt(tr * tr - 4 * det)
        # the large root is computed without cancellation, the small one from det
        big = (tr + math.copysign(disc, tr)) / 2
        small = det / big
        eig = {}
        for lam in (big, small):
            a, b, c, dd = A[0, 0], A[0, 1], A[1, 0], A[1, 1]
            v = np.array([b, lam - a]) if abs(b) + abs(lam - a) > abs(lam - dd) + abs(c) else np.array([lam - dd, c])
            eig[lam] = _unit(v)
        lam_u, lam_s = big, small
        v_u, v_s = eig[big], eig[small]
    else:
        w, V = np.linalg.eig(A)
        mods = np.abs(w)
        if np.any(np.abs(mods - 1) < 1e-9):
            raise NotHyperbolic("eigenvalue on the unit circle")
        iu, is_ = int(np.argmax(mods)), int(np.argmin(mods))
        if abs(w[iu].imag) > 1e-12 or abs(w[is_].imag) > 1e-12:
            raise InputError("extreme eigenvalues must be real")
        lam_u, lam_s = float(w[iu].real), float(w[is_].real)
        v_u, v_s = _unit(V[:, iu]), _unit(V[:, is_])
    return ToralAutomorphism(m, lattice, inv, lam_u, lam_s, v_u, v_s)


def cover_lift(auto: ToralAutomorphism, cover: Lattice | Sequence[int]) -> tuple[ToralAutomorphism, Callable]:
    """Lift ``auto`` to the finite cover ``R^d / L'`` and return the projection.

    The projection accepts a ``TorusPoint`` on ``L'`` or a float array and maps
    it to the base lattice; it semiconjugates the lift to ``auto``.
    """
    if not isinstance(cover, Lattice):
        cover = Lattice(tuple(cover))
    if any(c % b for c, b in zip(cover.periods, auto.lattice.periods)):
        raise InputError(f"{cover} is not a sublattice of {auto.lattice}")
    lifted = make_automorphism(auto.matrix, cover)
    base = auto.lattice

    def project(x):
        if isinstance(x, TorusPoint):
            return TorusPoint(x.coords, base)
        return reduce_array(np.asarray(x, float), base)

    return lifted, project


def _power_mod(matrix: IntMatrix, n: int, mods: Sequence[int]) -> IntMatrix:
    """``M^n`` with row ``i`` reduced modulo ``mods[i]``.

    Valid for acting on points whose coordinate ``i`` is known modulo
    ``mods[i] = p_i D``: a lattice-preserving matrix maps ``p_k D Z`` in
    coordinate ``k`` into ``p_i D Z`` in coordinate ``i``.
    """
    d = len(matrix)
    result = _identity(d)
    base = tuple(tuple(v % mods[i] for v in row) for i, row in enumerate(matrix))
    while n:
        if n & 1:
            result = tuple(tuple(v % mods[i] for v in row) for i, row in enumerate(_matmul_int(result, base)))
        n >>= 1
        if n:
            base = tuple(tuple(v % mods[i] for v in row) for i, row in enumerate(_matmul_int(base, base)))
    return result


def apply(auto: ToralAutomorphism, x, n: int = 1) -> TorusPoint:
    """``f^n(x)`` computed exactly.

    Float coordinates are treated as the dyadic rationals they are; with
    common denominator ``D`` the integer power ``M^n`` is only needed modulo
    ``p_i D``, so there is no growth of intermediate integers.  The result is
    rounded back to float only at the end.
    """
    x = as_point(x, auto.lattice)
    q = [c if isinstance(c, Fraction) else Fraction(c) for c in x.coords]
    den = reduce(math.lcm, (c.denominator for c in q), 1)
    mods = [p * den for p in auto.lattice.periods]
    A = _power_mod(auto.inverse if n < 0 else auto.matrix, abs(n), mods)
    nums = [int(c * den) for c in q]
    out = []
    for i in range(auto.dim):
        v = Fraction(sum(A[i][j] * nums[j] for j in range(auto.dim)) % mods[i], den)
        out.append(v if x.exact else float(v))
    return TorusPoint(tuple(out), auto.lattice)


# ---------------------------------------------------------------------------
# exact orbits of many points

_INT64_SAFE = 1 << 62


class _RationalState:
    """Points as integer numerators over per-point denominators."""

    def __init__(self, points, lattice: Lattice):
        rows = []
        for pt in points:
            coords = pt.coords if isinstance(pt, TorusPoint) else tuple(pt)
            fr = [c if isinstance(c, Fraction) else Fraction(float(c)) for c in coords]
            den = reduce(math.lcm, (f.denominator for f in fr), 1)
            rows.append(([int(f * den) for f in fr], den))
        periods = lattice.periods
        self.dens = [den for _, den in rows]
        mods = [[p * den for p in periods] for den in self.dens]
        nums = [[v % m for v, m in zip(num, mm)] for (num, _), mm in zip(rows, mods)]
        self.max_mod = max((max(mm) for mm in mods), default=1)
        dtype = np.int64 if self.max_mod < (1 << 31) else object
        self.nums = np.array(nums, dtype=dtype).reshape(len(rows), lattice.dim)
        self.mods = np.array(mods, dtype=dtype).reshape(len(rows), lattice.dim)
        self.den_f = np.array([float(d) for d in self.dens])

    def floats(self, nums: np.ndarray) -> np.ndarray:
        return nums.astype(float) / self.den_f[:, None]

    def step(self, nums: np.ndarray, A: IntMatrix) -> np.ndarray:
        out = np.empty_like(nums)
        for i, row in enumerate(A):
            acc = nums[:, 0] * row[0]
            for j in range(1, len(row)):
                acc = acc + nums[:, j] * row[j]
            out[:, i] = acc % self.mods[:, i]
        return out


def orbits(auto: ToralAutomorphism, points, n: int, backward: bool = False) -> np.ndarray:
    """Exact orbits ``x, f x, ..., f^n x`` (or ``f^-k``) of many points.

    Returns a float array of shape ``(n + 1, m, d)``.
    """
    points = list(points) if not isinstance(points, np.ndarray) else list(np.atleast_2d(points))
    state = _RationalState(points, auto.lattice)
    A = auto.inverse if backward else auto.matrix
    rowsum = max(sum(abs(v) for v in row) for row in A)
    if state.nums.dtype != object and state.max_mod * rowsum >= _INT64_SAFE:
        state.nums = state.nums.astype(object)
        state.mods = state.mods.astype(object)
    out = np.empty((n + 1, len(points), auto.dim))
    nums = state.nums
    out[0] = state.floats(nums)
    for k in range(1, n + 1):
        nums = state.step(nums, A)
        out[k] = state.floats(nums)
    return out


def orbit(auto: ToralAutomorphism, x, n: int, backward: bool = False, block: int = 1024) -> np.ndarray:
    """Exact orbit of one point as a float array of shape ``(n + 1, d)``.

    Long orbits are generated a block at a time: once ``x_0..x_{B-1}`` are
    known, ``x_{k+B} = M^B x_k`` is a single vectorised step over the block.
    """
    x = as_point(x, auto.lattice)
    if n < 4 * block:
        return orbits(auto, [x], n, backward)[:, 0, :]
    state = _RationalState([x], auto.lattice)
    den, mods = state.dens[0], [p * state.dens[0] for p in auto.lattice.periods]
    A = auto.inverse if backward else auto.matrix
    nums = [list(state.nums[0])]
    for _ in range(block - 1):
        prev = nums[-1]
        nums.append([sum(A[i][j] * int(prev[j]) for j in range(len(prev))) % mods[i] for i in range(len(prev))])
    leap = _power_mod(A, block, mods)
    use64 = max(mods) < (1 << 30)
    blk = np.array(nums, dtype=np.int64 if use64 else object)
    mods_arr = np.array(mods, dtype=blk.dtype)
    out = np.empty((n + 1, auto.dim))
    out[:block] = np.array([[float(v) for v in row] for row in nums]) / float(den)
    pos = block
    while pos <= n:
        nxt = np.empty_like(blk)
        for i, row in enumerate(leap):
            acc = (blk[:, 0] * row[0]) % mods_arr[i]
            for j in range(1, len(row)):
                acc = (acc + (blk[:, j] * row[j]) % mods_arr[i]) % mods_arr[i]
            nxt[:, i] = acc
        blk = nxt
        take = min(block, n + 1 - pos)
        out[pos:pos + take] = blk[:take].astype(float) / float(den)
        pos += take
    return out


def random_points(lattice: Lattice, count: int, rng: np.random.Generator) -> list[TorusPoint]:
    """Haar-uniform seeds on the rational grid with denominator ``SEED_DENOMINATOR``."""
    q = SEED_DENOMINATOR
    out = []
    for _ in range(count):
        nums = rng.integers(0, q, size=lattice.dim)
        out.append(TorusPoint(tuple(Fraction(int(k) * p, q) for k, p in zip(nums, lattice.periods)), lattice))
    return out


# ---------------------------------------------------------------------------
# leaves, su-paths, periodic points


def _require_planar(auto: ToralAutomorphism) -> None:
    if auto.dim != 2:
        raise InputError("leaf operations are implemented for d = 2")


def stable_point(auto: ToralAutomorphism, x, t: float, radius: float = LEAF_RADIUS) -> TorusPoint:
    """``x + t v_s`` on the local stable leaf of ``x``."""
    _require_planar(auto)
    if abs(t) > radius:
        raise LeafRadiusExceeded(f"|t| = {abs(t)} > leaf radius {radius}")
    x = as_point(x, auto.lattice)
    return TorusPoint(tuple(x.array + t * auto.v_s), auto.lattice)


def unstable_point(auto: ToralAutomorphism, x, t: float, radius: float = LEAF_RADIUS) -> TorusPoint:
    """``x + t v_u`` on the local unstable leaf of ``x``."""
    _require_planar(auto)
    if abs(t) > radius:
        raise LeafRadiusExceeded(f"|t| = {abs(t)} > leaf radius {radius}")
    x = as_point(x, auto.lattice)
    return TorusPoint(tuple(x.array + t * auto.v_u), auto.lattice)


@dataclass(frozen=True)
class Leg:
    leaf: str  # "stable" | "unstable"
    start: TorusPoint
    end: TorusPoint
    length: float


def leaf_coordinates(auto: ToralAutomorphism, x, y) -> tuple[float, float]:
    """Minimal ``(s, u)`` with ``x + s v_s + u v_u = y`` mod ``L``."""
    _require_planar(auto)
    x, y = as_point(x, auto.lattice), as_point(y, auto.lattice)
    p = np.asarray(auto.lattice.periods, float)
    delta = y.array - x.array
    delta = delta - p * np.round(delta / p)
    V = np.column_stack([auto.v_s, auto.v_u])
    best = None
    for shift in np.ndindex(3, 3):
        cand = np.linalg.solve(V, delta + (np.array(shift) - 1) * p)
        if best is None or np.abs(cand).sum() < np.abs(best).sum():
            best = cand
    return float(best[0]), float(best[1])


def su_path(auto: ToralAutomorphism, x, y, chart_radius: float = CHART_RADIUS) -> list[Leg]:
    """Stable leg then unstable leg from ``x`` to ``y`` (local product structure)."""
    x, y = as_point(x, auto.lattice), as_point(y, auto.lattice)
    if torus_dist(x, y) > chart_radius:
        raise OutsideProductChart(f"dist {torus_dist(x, y):.3g} > chart radius {chart_radius}")
    s, u = leaf_coordinates(auto, x, y)
    corner = TorusPoint(tuple(x.array + s * auto.v_s), auto.lattice)
    return [Leg("stable", x, corner, abs(s)), Leg("unstable", corner, y, abs(u))]


def periodic_point_count(auto: ToralAutomorphism, n: int) -> int:
    """``|det(M^n - Id)|``, the number of points of period dividing ``n``."""
    A = auto.power(n)
    N = tuple(tuple(A[i][j] - int(i == j) for j in range(auto.dim)) for i in range(auto.dim))
    return abs(_det_int(N))


def periodic_points(auto: ToralAutomorphism, n: int, cap: int = PERIODIC_CAP) -> list[TorusPoint]:
    """All ``x`` with ``f^n x = x``, as exact rationals.

    Writing ``x = B y`` with ``B = diag(periods)``, the condition is
    ``N' y in Z^d`` for the integer matrix ``N' = B^-1 (M^n - Id) B``; the
    solutions modulo ``Z^d`` are ``N'^-1 k`` for ``k`` ranging over a residue
    system of ``Z^d / N' Z^d``, read off a Hermite form of ``N'``.
    """
    if n < 1:
        raise InputError("period must be >= 1")
    A = auto.power(n)
    d = auto.dim
    N = tuple(tuple(A[i][j] - int(i == j) for j in range(d)) for i in range(d))
    Np = _lattice_conjugate(N, auto.lattice)
    Np_int = tuple(tuple(int(v) for v in row) for row in Np)
    count = abs(_det_int(Np_int))
    if count == 0:
        raise InputError("M^n - Id is singular")
    if count > cap:
        raise TooManyPeriodicPoints(f"{count} points of period {n} exceed cap {cap}")
    inv = _inverse_frac(Np_int)
    diag = _column_hnf_diagonal(Np_int)
    periods = auto.lattice.periods
    pts = []
    for k in np.ndindex(*diag):
        y = [sum((inv[i][j] * int(k[j]) for j in range(d)), Fraction(0)) % 1 for i in range(d)]
        pts.append(TorusPoint(tuple(yi * p for yi, p in zip(y, periods)), auto.lattice))
    pts.sort(key=lambda q: q.coords)
    return pts
