"""Conformal structures: symmetric positive definite matrices of determinant 1.

The space is a symmetric space of nonpositive curvature.  Distances are
``sqrt(d)/2 * ||log spec(C1^-1 C2)||``; ``GL(d)`` acts isometrically by
``A(C) = det(A^T A)^{1/d} A^{-T} C A^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .errors import DimensionMismatch, HypothesisViolated, InputError, NoConvergence, SingularMatrix

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ConformalStructure:
    """An SPD matrix normalised to determinant 1 on construction."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InputError("conformal structure must be a square matrix")
        scale = max(1.0, np.abs(m).max())
        if np.abs(m - m.T).max() > SYMMETRY_TOL * scale:
            raise InputError("conformal structure must be symmetric")
        m = (m + m.T) / 2
        w = np.linalg.eigvalsh(m)
        if w[0] <= 0:
            raise InputError("conformal structure must be positive definite")
        m = m / np.exp(np.mean(np.log(w)))
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, d: int = 2) -> "ConformalStructure":
        return cls(np.eye(d))

    def inverse(self) -> "ConformalStructure":
        return ConformalStructure(np.linalg.inv(self.matrix))

    def __repr__(self) -> str:
        return f"ConformalStructure({self.matrix.tolist()})"


def _as_structure(c) -> ConformalStructure:
    return c if isinstance(c, ConformalStructure) else ConformalStructure(np.asarray(c, float))


def _spd_fn(S: np.ndarray, fn) -> np.ndarray:
    w, V = np.linalg.eigh((S + S.T) / 2)
    return (V * fn(w)) @ V.T


def _sqrt_pair(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, V = np.linalg.eigh(C)
    r = np.sqrt(w)
    return (V * r) @ V.T, (V / r) @ V.T


def distance(c1, c2) -> float:
    """Invariant distance between two conformal structures."""
    a, b = _as_structure(c1), _as_structure(c2)
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimensions {a.dim} and {b.dim} differ")
    # generalized eigenvalues of (C2, C1) = spectrum of C1^{-1} C2
    lam = sla.eigh(b.matrix, a.matrix, eigvals_only=True)
    return float(np.sqrt(a.dim) / 2 * np.linalg.norm(np.log(lam)))


def act(A, c) -> ConformalStructure:
    """Push ``c`` forward by the linear map ``A``."""
    A = np.asarray(A, dtype=float)
    c = _as_structure(c)
    if A.shape != (c.dim, c.dim):
        raise DimensionMismatch(f"map of shape {A.shape} on structures of dimension {c.dim}")
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 1e-14 * sv[0]:
        raise SingularMatrix("map is singular")
    Ainv = np.linalg.inv(A)
    # det normalisation is redone by the constructor
    return ConformalStructure(Ainv.T @ c.matrix @ Ainv)


def act_many(maps: np.ndarray, c) -> np.ndarray:
    """Vectorised :func:`act` returning raw det-1 matrices of shape ``(m, d, d)``."""
    c = _as_structure(c)
    inv = np.linalg.inv(maps)
    out = np.swapaxes(inv, -1, -2) @ c.matrix @ inv
    out = (out + np.swapaxes(out, -1, -2)) / 2
    det = np.linalg.det(out)
    return out / det[:, None, None] ** (1.0 / c.dim)


def perturbation_bound_check(c, A) -> tuple[float, float]:
    """``(distance(C, A(C)), 3 d ||C|| ||C^-1|| ||A - Id||)`` for ``A`` near the identity.

    Raises
    ------
    HypothesisViolated
        if ``||A - Id|| > 1 / (6 ||C|| ||C^-1||)``.
    """
    c = _as_structure(c)
    A = np.asarray(A, float)
    d = c.dim
    w = np.linalg.eigvalsh(c.matrix)
    k = w[-1] / w[0]
    dev = np.linalg.norm(A - np.eye(d), 2)
    if dev > 1 / (6 * k) * (1 + 1e-12):
        raise HypothesisViolated(f"||A - Id|| = {dev:.3g} exceeds {1 / (6 * k):.3g}")
    return distance(c, act(A, c)), 3 * d * k * dev


# ---------------------------------------------------------------------------
# Riemannian exp/log at a base point


def log_map(base, c) -> np.ndarray:
    """Tangent vector at ``base`` (in the whitened chart) pointing to ``c``."""
    X, Y = _as_structure(base).matrix, _as_structure(c).matrix
    h, hi = _sqrt_pair(X)
    return _spd_fn(hi @ Y @ hi, np.log)


def exp_map(base, V: np.ndarray) -> ConformalStructure:
    X = _as_structure(base).matrix
    h, _ = _sqrt_pair(X)
    return ConformalStructure(h @ _spd_fn(V, np.exp) @ h)


def geodesic(c1, c2, t: float) -> ConformalStructure:
    """Point at parameter ``t`` on the geodesic from ``c1`` (t=0) to ``c2`` (t=1)."""
    return exp_map(c1, t * log_map(c1, c2))


def karcher_mean(structures: Sequence, weights: Sequence[float] | None = None, tol: float = 1e-10,
                 max_iter: int = 500) -> ConformalStructure:
    """Weighted Riemannian centre of mass.

    Fixed-point iteration ``X <- Exp_X(sum w_i Log_X C_i)`` with step halving
    whenever the objective fails to decrease; stops when the gradient norm
    drops below ``tol``.
    """
    cs = [_as_structure(c) for c in structures]
    if not cs:
        raise InputError("need at least one structure")
    d = cs[0].dim
    if any(c.dim != d for c in cs):
        raise DimensionMismatch("structures of different dimensions")
    w = np.full(len(cs), 1 / len(cs)) if weights is None else np.asarray(weights, float)
    if len(w) != len(cs) or np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
        raise InputError("weights must be positive and sum to 1")

    def objective(X):
        return sum(wi * distance(X, c) ** 2 for wi, c in zip(w, cs))

    def gradient(X):
        return sum(wi * log_map(X, c) for wi, c in zip(w, cs))

    X = cs[int(np.argmax(w))]
    f = objective(X)
    for _ in range(max_iter):
        G = gradient(X)
        if np.linalg.norm(G) < tol:
            return X
        step = 1.0
        while True:
            Y = exp_map(X, step * G)
            fy = objective(Y)
            if fy <= f or step < 1e-8:
                break
            step /= 2
        X, f = Y, fy
    raise NoConvergence(f"Karcher iteration did not reach gradient {tol:g} in {max_iter} steps")


@dataclass(frozen=True)
class EnclosingBall:
    center: ConformalStructure
    radius: float
    active: int

    def __iter__(self):
        return iter((self.center, self.radius))


def _tangent_minimax(L: np.ndarray, d: int) -> np.ndarray:
    """Centre of the smallest Euclidean ball containing the symmetric matrices ``L``."""
    iu = np.triu_indices(d)
    # Frobenius inner product in upper-triangular coordinates
    wts = np.where(iu[0] == iu[1], 1.0, 2.0)
    P = L[:, iu[0], iu[1]]
    v0 = P.mean(axis=0)
    t0 = float(np.max(((P - v0) ** 2 * wts).sum(1)))
    z0 = np.append(v0, t0)
    scale = max(t0, 1e-300)

    def cons(z):
        return (z[-1] - ((P - z[:-1]) ** 2 * wts).sum(1)) / scale

    def cons_jac(z):
        J = np.empty((len(P), len(z)))
        J[:, :-1] = 2 * (P - z[:-1]) * wts
        J[:, -1] = 1.0
        return J / scale

    res = minimize(lambda z: z[-1] / scale, z0, jac=lambda z: np.eye(len(z))[-1] / scale,
                   constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
                   method="SLSQP", options={"ftol": 1e-16, "maxiter": 500})
    V = np.zeros((d, d))
    V[iu] = res.x[:-1]
    return V + np.triu(V, 1).T


def minimal_enclosing_ball(structures: Sequence, tol: float = 1e-9, max_iter: int = 500,
                           warm_start: int = 50) -> EnclosingBall:
    """Centre and radius of the smallest geodesic ball containing a finite set.

    A few geodesic Badoiu-Clarkson steps (move ``1/(k+1)`` of the way to the
    farthest point) give a starting centre; each refinement then solves the
    Euclidean minimax problem for the log-images of the points in the tangent
    space at the current centre and moves there.  At the fixed point the
    tangent centre is zero, which is exactly the optimality condition for the
    curved problem.  ``active`` counts points within ``1e-8`` of the radius.
    """
    cs = [_as_structure(c) for c in structures]
    if not cs:
        raise InputError("need at least one structure")
    d = cs[0].dim
    if any(c.dim != d for c in cs):
        raise DimensionMismatch("structures of different dimensions")
    if len(cs) == 1:
        return EnclosingBall(cs[0], 0.0, 1)
    X = cs[0]
    for k in range(1, warm_start + 1):
        far = max(cs, key=lambda c: distance(X, c))
        X = geodesic(X, far, 1 / (k + 1))
    for _ in range(max_iter):
        L = np.array([log_map(X, c) for c in cs])
        V = _tangent_minimax(L, d)
        X = exp_map(X, V)
        if np.linalg.norm(V) < tol:
            break
    else:
        raise NoConvergence("enclosing-ball refinement did not settle")
    dists = np.array([distance(X, c) for c in cs])
    radius = float(dists.max())
    return EnclosingBall(X, radius, int(np.sum(dists >= radius - 1e-8)))
