"""Matrix cocycles over toral automorphisms.

A cocycle is a vectorised function ``points (m, d) -> matrices (m, k, k)``
over a base automorphism; the bundle is trivial, so nearby fibers are
identified by the identity.  Iterates are products along exact orbits,
accumulated with renormalisation so that products of length ``10^7`` stay
finite.  Norms are spectral norms throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import CongruenceViolated, EpsilonOutOfRange, InputError, SingularFiberMap
from .expr import compile_expression
from .torus import Lattice, ToralAutomorphism, as_point, cover_lift, orbit, orbits, reduce_array, uniform_grid

COND_CAP = 1e12
MAX_ITERATE = 10**7
CHUNK = 1 << 16
MAX_FIBER_DIM = 6


@dataclass(frozen=True, eq=False)
class CocycleSpec:
    """A Hölder matrix cocycle ``x -> F(x)`` over ``base``.

    ``func`` maps a float array of points of shape ``(m, d)`` to an array of
    shape ``(m, k, k)`` with ``k = fiber_dim``.
    """

    base: ToralAutomorphism
    fiber_dim: int
    func: Callable[[np.ndarray], np.ndarray]
    beta: float = 1.0
    kind: str = "user"
    params: Mapping = field(default_factory=dict)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        out = np.asarray(self.func(np.atleast_2d(pts)), dtype=float)
        return out[0] if single else out

    def inverse_at(self, points) -> np.ndarray:
        return _checked_inv(self(np.atleast_2d(np.asarray(points, float))))


def _cond_upper(mats: np.ndarray) -> np.ndarray:
    # ||A||_F^k / |det A| bounds sigma_max / sigma_min from above
    k = mats.shape[-1]
    fro = np.sqrt(np.sum(mats * mats, axis=(-2, -1)))
    det = np.abs(np.linalg.det(mats))
    with np.errstate(divide="ignore", invalid="ignore"):
        return fro**k / det


def _checked_inv(mats: np.ndarray) -> np.ndarray:
    bound = _cond_upper(mats)
    suspicious = ~(bound < COND_CAP)
    if np.any(suspicious):
        sv = np.linalg.svd(mats[suspicious], compute_uv=False)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = sv[:, 0] / sv[:, -1]
        if np.any(~(cond < COND_CAP)):
            raise SingularFiberMap(f"fiber map condition number {np.max(cond):.3g} above {COND_CAP:g}")
    return np.linalg.inv(mats)


def make_cocycle(base: ToralAutomorphism, func, fiber_dim: int, beta: float = 1.0,
                 kind: str = "user", params: Mapping | None = None, check_grid: int = 16) -> CocycleSpec:
    """Wrap ``func`` as a cocycle, checking invertibility on a coarse grid."""
    if not 1 <= fiber_dim <= MAX_FIBER_DIM:
        raise InputError(f"fiber dimension must be in [1, {MAX_FIBER_DIM}]")
    if not 0 < beta <= 1:
        raise InputError("Hölder exponent must lie in (0, 1]")
    c = CocycleSpec(base, fiber_dim, func, float(beta), kind, dict(params or {}))
    vals = c(uniform_grid(base.lattice, check_grid))
    if vals.shape[1:] != (fiber_dim, fiber_dim):
        raise InputError(f"cocycle returned shape {vals.shape[1:]}, expected {(fiber_dim, fiber_dim)}")
    _checked_inv(vals)
    return c


def constant_cocycle(base: ToralAutomorphism, A, beta: float = 1.0) -> CocycleSpec:
    A = np.array(A, dtype=float)
    k = A.shape[0]
    return make_cocycle(
        base, lambda pts: np.broadcast_to(A, (len(pts), k, k)).copy(), k, beta, "constant", {"matrix": A.tolist()}
    )


def rotation(theta) -> np.ndarray:
    """Rotation matrices ``R(theta)``; broadcasts over ``theta``."""
    theta = np.asarray(theta, float)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def _as_field(v) -> Callable[[np.ndarray], np.ndarray]:
    if callable(v):
        return v
    value = float(v)
    return lambda pts: np.full(len(pts), value)


def _spd_power(G: np.ndarray, p: float) -> np.ndarray:
    w, V = np.linalg.eigh(G)
    return (V * w**p) @ V.T


def conformal_cocycle(base: ToralAutomorphism, scale=1.0, angle=0.0, metric=None, beta: float = 1.0) -> CocycleSpec:
    """``F(x) = s(x) G^{-1/2} R(theta(x)) G^{1/2}``, conformal for ``<u, v> = u^T G v``.

    ``scale`` and ``angle`` are constants or vectorised functions of points.
    """
    s, th = _as_field(scale), _as_field(angle)
    G = np.eye(2) if metric is None else np.asarray(metric, float)
    Gh, Gmh = _spd_power(G, 0.5), _spd_power(G, -0.5)

    def func(pts):
        return s(pts)[:, None, None] * (Gmh @ rotation(th(pts)) @ Gh)

    params = {"metric": G.tolist()}
    if not callable(scale):
        params["scale"] = float(scale)
    if not callable(angle):
        params["angle"] = float(angle)
    return make_cocycle(base, func, 2, beta, "conformal", params)


def expression_cocycle(base: ToralAutomorphism, entries: Sequence[Sequence[str]], beta: float = 1.0,
                       kind: str = "expression") -> CocycleSpec:
    """Cocycle whose entries are closed-form expressions (see :mod:`cocyclelab.expr`)."""
    k = len(entries)
    if any(len(row) != k for row in entries):
        raise InputError("expression matrix must be square")
    fns = [[compile_expression(e) for e in row] for row in entries]

    def func(pts):
        return np.stack([np.stack([f(pts) for f in row], -1) for row in fns], -2)

    return make_cocycle(base, func, k, beta, kind, {"entries": [list(r) for r in entries]})


# ---------------------------------------------------------------------------
# the explicit example: a fiber bunched cocycle with one exponent a.e. but no
# invariant sub-bundle or conformal structure


@dataclass(frozen=True, eq=False)
class Example46:
    """The example cocycle on ``T^2``, its lifts, and the diagonal model.

    On the 4-cover ``R^2 / (4Z x Z)`` the cocycle is ``C(f x) A(x) C(x)^-1``
    with ``A = diag(1 + eps cos(pi x1), 1 - eps cos(pi x1))`` and
    ``C(x) = R(pi x1 / 2)``.  The same matrices are 1-periodic and define the
    cocycle on ``T^2`` directly by a second closed form.
    """

    epsilon: float
    cocycle: CocycleSpec
    cover2: CocycleSpec
    cover4: CocycleSpec
    project: Callable

    def diagonal(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        c = self.epsilon * np.cos(np.pi * pts[:, 0])
        out = np.zeros((len(pts), 2, 2))
        out[:, 0, 0], out[:, 1, 1] = 1 + c, 1 - c
        return out

    def conjugacy(self, points) -> np.ndarray:
        """``C(x) = R(pi x1 / 2)`` on the 4-cover."""
        pts = np.atleast_2d(np.asarray(points, float))
        return rotation(np.pi / 2 * pts[:, 0])

    def scalings(self, points) -> tuple[np.ndarray, np.ndarray]:
        pts = np.atleast_2d(np.asarray(points, float))
        c = self.epsilon * np.cos(np.pi * pts[:, 0])
        return 1 + c, 1 - c


def example46(base: ToralAutomorphism, epsilon: float) -> Example46:
    """Build the example family over a hyperbolic ``M`` congruent to ``Id`` mod 4.

    Raises
    ------
    CongruenceViolated
        if ``M`` is not congruent to the identity modulo 4.
    EpsilonOutOfRange
        unless ``0 <= epsilon < 1``.
    """
    if base.dim != 2 or base.lattice != Lattice.standard(2):
        raise InputError("example46 needs a base automorphism of Z^2")
    M = base.matrix
    if any((M[i][j] - int(i == j)) % 4 for i in range(2) for j in range(2)):
        raise CongruenceViolated(f"{[list(r) for r in M]} is not congruent to Id mod 4")
    if not 0 <= epsilon < 1:
        raise EpsilonOutOfRange(f"epsilon = {epsilon} outside [0, 1)")
    eps = float(epsilon)
    row = np.array([M[0][0] - 1, M[0][1]], dtype=float)
    Mf = np.array(M, dtype=float)

    def on_torus(pts):
        # R(pi/2 ((f x)_1 - x_1)) times the conjugated diagonal, written out
        t = 2 * np.pi * pts[:, 0]
        c, s = np.cos(t), np.sin(t)
        S = np.empty((len(pts), 2, 2))
        S[:, 0, 0] = 1 + eps * (1 + c) / 2
        S[:, 1, 1] = 1 - eps * (1 + c) / 2
        S[:, 0, 1] = S[:, 1, 0] = eps * s / 2
        return rotation(np.pi / 2 * (pts @ row)) @ S

    cover4_lattice = Lattice((4, 1))

    def on_cover(pts):
        fx = reduce_array(pts @ Mf.T, cover4_lattice)
        cos1 = eps * np.cos(np.pi * pts[:, 0])
        A = np.zeros((len(pts), 2, 2))
        A[:, 0, 0], A[:, 1, 1] = 1 + cos1, 1 - cos1
        Cx = rotation(np.pi / 2 * pts[:, 0])
        return rotation(np.pi / 2 * fx[:, 0]) @ A @ np.swapaxes(Cx, -1, -2)

    params = {"epsilon": eps}
    torus_c = make_cocycle(base, on_torus, 2, 1.0, "example46", params)
    base2, _ = cover_lift(base, (2, 1))
    base4, project = cover_lift(base, (4, 1))
    c2 = make_cocycle(base2, on_cover, 2, 1.0, "example46_cover", {**params, "cover": 2})
    c4 = make_cocycle(base4, on_cover, 2, 1.0, "example46_cover", {**params, "cover": 4})
    return Example46(eps, torus_c, c2, c4, project)


# ---------------------------------------------------------------------------
# products


def chain_product(mats: np.ndarray) -> tuple[np.ndarray, float]:
    """``mats[-1] @ ... @ mats[0]`` as ``(unit, log_scale)``.

    Pairwise (tree) reduction with renormalisation at every level; the true
    product is ``exp(log_scale) * unit`` with ``max |unit_ij| = 1``.
    """
    mats = np.array(mats, dtype=float)
    if len(mats) == 0:
        raise InputError("empty product")
    s = np.abs(mats).max(axis=(1, 2))
    if np.any(s == 0):
        raise SingularFiberMap("zero matrix in product")
    mats /= s[:, None, None]
    logs = np.log(s)
    k = mats.shape[-1]
    while len(mats) > 1:
        if len(mats) % 2:
            mats = np.concatenate([mats, np.eye(k)[None]])
            logs = np.append(logs, 0.0)
        prod = mats[1::2] @ mats[0::2]
        s = np.abs(prod).max(axis=(1, 2))
        if np.any(s == 0):
            raise SingularFiberMap("product underflowed to zero")
        mats = prod / s[:, None, None]
        logs = logs[1::2] + logs[0::2] + np.log(s)
    return mats[0], float(logs[0])


def spectral_norm(mats: np.ndarray) -> np.ndarray:
    """Largest singular value; closed form for 2x2 blocks."""
    mats = np.asarray(mats, float)
    if mats.shape[-2:] == (2, 2):
        a, b, c, d = mats[..., 0, 0], mats[..., 0, 1], mats[..., 1, 0], mats[..., 1, 1]
        return (np.hypot(a + d, c - b) + np.hypot(a - d, b + c)) / 2
    return np.linalg.norm(mats, ord=2, axis=(-2, -1))


def _log_spectral_norm(unit: np.ndarray, log_scale) -> np.ndarray:
    return log_scale + np.log(spectral_norm(unit))


@dataclass(frozen=True)
class IterateResult:
    """``F^n_x`` as ``exp(log_scale) * unit`` plus log-norm and log-conorm.

    ``log_conorm = log ||(F^n_x)^-1||^-1 = log sigma_min``; it comes from an
    independently accumulated product of inverses, not from ``unit``.
    """

    unit: np.ndarray
    log_scale: float
    log_norm: float
    log_conorm: float
    n: int

    @property
    def matrix(self) -> np.ndarray:
        return math.exp(self.log_scale) * self.unit

    @property
    def log_distortion(self) -> float:
        return self.log_norm - self.log_conorm


def _fiber_sequence(c: CocycleSpec, pts: np.ndarray, backward: bool) -> tuple[np.ndarray, np.ndarray]:
    """Applied maps and their inverses for a run of orbit points."""
    F = c(pts)
    Finv = _checked_inv(F)
    return (Finv, F) if backward else (F, Finv)


def iterates_at(c: CocycleSpec, x, ns: Sequence[int], max_n: int = MAX_ITERATE) -> list[IterateResult]:
    """``F^n_x`` for several ``n`` of one sign, from a single pass along the orbit."""
    ns = [int(n) for n in ns]
    if not ns or any(n == 0 for n in ns):
        raise InputError("iterate counts must be nonzero")
    if any(n > 0 for n in ns) and any(n < 0 for n in ns):
        raise InputError("iterate counts must share one sign")
    m = max(abs(n) for n in ns)
    if m > max_n:
        raise InputError(f"|n| = {m} exceeds the iterate cap {max_n}")
    x = as_point(x, c.base.lattice)
    k = c.fiber_dim
    backward = ns[0] < 0
    traj = orbit(c.base, x, m, backward=backward)
    # forward uses x_0..x_{m-1}; backward uses x_{-1}..x_{-m}
    pts = traj[1:] if backward else traj[:-1]
    P, logP = np.eye(k), 0.0
    Q, logQ = np.eye(k), 0.0
    results, pos = {}, 0
    for mark in sorted({abs(n) for n in ns}):
        while pos < mark:
            hi = min(mark, pos + CHUNK)
            G, Ginv = _fiber_sequence(c, pts[pos:hi], backward)
            u, ls = chain_product(G)
            ui, lsi = chain_product(Ginv[::-1])
            P = u @ P
            Q = Q @ ui
            sP, sQ = np.abs(P).max(), np.abs(Q).max()
            P, Q = P / sP, Q / sQ
            logP += ls + math.log(sP)
            logQ += lsi + math.log(sQ)
            pos = hi
        log_norm = float(_log_spectral_norm(P, logP))
        log_conorm = -float(_log_spectral_norm(Q, logQ))
        results[mark] = IterateResult(P.copy(), logP, log_norm, log_conorm, -mark if backward else mark)
    return [results[abs(n)] for n in ns]


def iterate(c: CocycleSpec, x, n: int, max_n: int = MAX_ITERATE) -> IterateResult:
    """``F^n_x = F(f^{n-1} x) ... F(x)``; negative ``n`` gives ``(F^{-n}_{f^n x})^{-1}``.

    For ``n < 0`` the pointwise maps along the backward orbit are inverted
    one at a time; the accumulated product is never inverted.  Products are
    renormalised after every pairwise multiplication, and the inverse is
    carried as its own product so that ``log_conorm`` is as accurate as
    ``log_norm``.
    """
    if n == 0:
        k = c.fiber_dim
        return IterateResult(np.eye(k), 0.0, 0.0, 0.0, 0)
    return iterates_at(c, x, [n], max_n)[0]


def quasiconformal_distortion(c: CocycleSpec, x, n: int) -> tuple[float, float]:
    """``K_F(x, n) = ||F^n_x|| ||(F^n_x)^-1||`` and its logarithm."""
    r = iterate(c, x, n)
    logK = max(r.log_distortion, 0.0)
    return math.exp(logK) if logK < 700 else math.inf, logK


def pointwise_distortion(c: CocycleSpec, points) -> np.ndarray:
    """``||F(x)|| ||F(x)^-1||`` at each point."""
    sv = np.linalg.svd(c(np.atleast_2d(points)), compute_uv=False)
    return sv[:, 0] / sv[:, -1]


def fiber_bunching_margin(c: CocycleSpec, grid=None, beta: float | None = None) -> float:
    """``max_x ||F(x)|| ||F(x)^-1|| max(nu, nu_hat)^beta`` over the grid.

    A value below 1 certifies fiber bunching on the grid; it is also the
    geometric ratio used for holonomy series.
    """
    if grid is None:
        grid = uniform_grid(c.base.lattice, 64)
    grid = np.atleast_2d(np.asarray(grid, float))
    if len(grid) == 0:
        raise InputError("empty grid")
    beta = c.beta if beta is None else beta
    rate = max(c.base.nu, c.base.nu_hat)
    return float(np.max(pointwise_distortion(c, grid)) * rate**beta)


@dataclass
class ProductState:
    """Batched iterates at step ``n`` along many orbits (see :func:`orbit_products`)."""

    n: int
    unit: np.ndarray
    log_scale: np.ndarray
    inv_unit: np.ndarray
    inv_log_scale: np.ndarray

    @property
    def log_norm(self) -> np.ndarray:
        return _log_spectral_norm(self.unit, self.log_scale)

    @property
    def log_conorm(self) -> np.ndarray:
        return -_log_spectral_norm(self.inv_unit, self.inv_log_scale)

    @property
    def log_distortion(self) -> np.ndarray:
        return np.maximum(self.log_norm - self.log_conorm, 0.0)


def orbit_products(c: CocycleSpec, points, n_max: int, backward: bool = False,
                   trajectories: np.ndarray | None = None) -> Iterator[ProductState]:
    """Yield ``F^{+-n}`` at every grid point for ``n = 1..n_max``.

    Products are advanced one step at a time for all points at once and
    renormalised every step.  ``trajectories`` may pass precomputed exact
    orbits of shape ``(n_max + 1, m, d)``.
    """
    if trajectories is None:
        trajectories = orbits(c.base, points, n_max, backward=backward)
    m, k = trajectories.shape[1], c.fiber_dim
    P = np.broadcast_to(np.eye(k), (m, k, k)).copy()
    Q = P.copy()
    lp, lq = np.zeros(m), np.zeros(m)
    for step in range(1, n_max + 1):
        pts = trajectories[step] if backward else trajectories[step - 1]
        G, Ginv = _fiber_sequence(c, pts, backward)
        P = G @ P
        Q = Q @ Ginv
        sp, sq = np.abs(P).max(axis=(1, 2)), np.abs(Q).max(axis=(1, 2))
        P /= sp[:, None, None]
        Q /= sq[:, None, None]
        lp += np.log(sp)
        lq += np.log(sq)
        yield ProductState(step, P, lp.copy(), Q, lq.copy())
