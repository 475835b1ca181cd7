"""Lyapunov exponents along orbits and at periodic points."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cocycle import CHUNK, CocycleSpec, chain_product, iterate, iterates_at
from .errors import InputError, NotPeriodic
from .torus import TorusPoint, apply, as_point, orbit, orbits, periodic_points

BLOCK_COND = 1e6


@dataclass(frozen=True)
class HistoryRow:
    n: int
    top: float
    bottom: float

    @property
    def log_distortion_rate(self) -> float:
        return self.top - self.bottom


@dataclass(frozen=True)
class SpectrumEstimate:
    """Exponents in descending order with partial estimates at powers of two."""

    exponents: tuple
    orbit_length: int
    x0: TorusPoint
    convergence_history: tuple = field(default=(), repr=False)
    log_det_rate: float = 0.0


def exponent_history(c: CocycleSpec, x, n: int) -> list[HistoryRow]:
    """Top and bottom exponent estimates at ``n = 1, 2, 4, ...`` and at ``n``.

    The forward product and the product of inverses are accumulated
    separately, so both estimates come from well-conditioned renormalised
    products.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    marks = sorted({2**j for j in range(n.bit_length()) if 2**j <= n} | {n})
    return [HistoryRow(r.n, r.log_norm / r.n, r.log_conorm / r.n) for r in iterates_at(c, x, marks)]


def top_bottom_exponents(c: CocycleSpec, x, n: int) -> tuple[float, float]:
    """``((1/n) log ||F^n_x||, -(1/n) log ||(F^n_x)^-1||)``."""
    if n < 1:
        raise InputError("n must be >= 1")
    r = iterate(c, x, n)
    return r.log_norm / n, r.log_conorm / n


def _block_products(maps: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Renormalised products of consecutive runs of ``size`` maps, vectorised."""
    m, k = len(maps), maps.shape[-1]
    nb = -(-m // size)
    pad = nb * size - m
    if pad:
        maps = np.concatenate([maps, np.broadcast_to(np.eye(k), (pad, k, k))])
    B = maps.reshape(nb, size, k, k)
    s = np.abs(B).max(axis=(2, 3))
    B = B / s[..., None, None]
    logs = np.log(s).sum(axis=1)
    while B.shape[1] > 1:
        if B.shape[1] % 2:
            B = np.concatenate([B, np.broadcast_to(np.eye(k), (nb, 1, k, k))], axis=1)
        B = B[:, 1::2] @ B[:, 0::2]
        s = np.abs(B).max(axis=(2, 3))
        B = B / s[..., None, None]
        logs = logs + np.log(s).sum(axis=1)
    return B[:, 0], logs


def _qr_sweep(blocks, Q: np.ndarray, n: int, history: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Propagate the frame ``Q`` through the block products; return log-diagonal sums and final frame."""
    acc = np.zeros(Q.shape[1])
    next_mark = 1
    for start, size, units, logs in blocks:
        for j, (U, ls) in enumerate(zip(units, logs)):
            Q, R = np.linalg.qr(U @ Q)
            acc += np.log(np.abs(np.diag(R))) + ls
            if history is not None:
                done = min(start + (j + 1) * size, n)
                while next_mark <= done:
                    # record at block ends that pass a power of two
                    history.append(HistoryRow(done, float(acc.max() / done), float(acc.min() / done)))
                    next_mark *= 2
    return acc, Q


def full_spectrum(c: CocycleSpec, x, n: int, block: int = 64, refine: bool = True) -> SpectrumEstimate:
    """All exponents by QR re-orthonormalisation of block products.

    Blocks of ``block`` steps are multiplied directly; the block length is
    halved wherever a block product has condition number above ``1e6``.

    Started from the standard frame, the diagonal logs differ from the
    logs of the singular values of ``F^n_x`` by an ``O(1/n)`` term set by
    the starting frame.  With ``refine`` a backward sweep with the
    transposed blocks turns the final frame into the right singular frame of
    ``F^n_x`` (one step of subspace iteration) and a second forward sweep
    from that frame gives the exponents.  The convergence history always
    comes from the first sweep.
    """
    k = c.fiber_dim
    if n < k:
        raise InputError(f"n must be at least the fiber dimension {k}")
    x = as_point(x, c.base.lattice)
    traj = orbit(c.base, x, n)
    blocks = []
    logdet = 0.0
    for start in range(0, n, CHUNK):
        F = c(traj[start:min(n, start + CHUNK)])
        logdet += float(np.sum(np.log(np.abs(np.linalg.det(F)))))
        size = block
        while True:
            units, logs = _block_products(F, size)
            sv = np.linalg.svd(units, compute_uv=False)
            if size == 1 or np.all(sv[:, 0] < BLOCK_COND * sv[:, -1]):
                break
            size //= 2
        blocks.append((start, size, units, logs))
    history: list = []
    acc, Q = _qr_sweep(blocks, np.eye(k), n, history)
    if refine and k > 1:
        for _, _, units, _ in reversed(blocks):
            for U in units[::-1]:
                Q, _ = np.linalg.qr(U.T @ Q)
        acc, _ = _qr_sweep(blocks, Q, n)
    exps = tuple(sorted((acc / n).tolist(), reverse=True))
    return SpectrumEstimate(exps, n, x, tuple(history), logdet / n)


def _require_periodic(c: CocycleSpec, p, n: int) -> TorusPoint:
    p = as_point(p, c.base.lattice)
    if n < 1:
        raise InputError("period must be >= 1")
    if apply(c.base, p, n).coords != p.coords:
        raise NotPeriodic(f"{p} is not fixed by f^{n}")
    return p


def _spectrum_logs(unit: np.ndarray, log_scale: np.ndarray, n: int) -> np.ndarray:
    lam = np.abs(np.linalg.eigvals(unit))
    with np.errstate(divide="ignore"):
        out = (np.log(lam) + np.asarray(log_scale)[..., None]) / n
    return -np.sort(-out, axis=-1)


def periodic_exponents(c: CocycleSpec, p, n: int) -> list[float]:
    """``log |eigenvalues of F^n_p| / n`` in descending order.

    Raises
    ------
    NotPeriodic
        unless ``f^n p = p`` exactly.
    """
    p = _require_periodic(c, p, n)
    pts = orbits(c.base, [p], n - 1)[:, 0, :]
    unit, ls = chain_product(c(pts))
    return _spectrum_logs(unit, ls, n).tolist()


@dataclass(frozen=True)
class OneExponentReport:
    passed: bool
    gap: float
    worst_point: TorusPoint | None
    worst_period: int
    tolerance: float
    points_checked: int


def _batched_periodic_spectra(c: CocycleSpec, pts: Sequence[TorusPoint], n: int) -> np.ndarray:
    traj = orbits(c.base, pts, n - 1)  # (n, m, d)
    m, k = len(pts), c.fiber_dim
    P = np.broadcast_to(np.eye(k), (m, k, k)).copy()
    logs = np.zeros(m)
    for step in range(n):
        P = c(traj[step]) @ P
        s = np.abs(P).max(axis=(1, 2))
        P /= s[:, None, None]
        logs += np.log(s)
    return _spectrum_logs(P, logs, n)


def one_exponent_test(c: CocycleSpec, max_period: int, tol: float = 1e-9) -> OneExponentReport:
    """Largest exponent gap over all periodic points of period at most ``max_period``.

    Raises
    ------
    TooManyPeriodicPoints
        if some period has more points than the enumeration cap.
    """
    worst, worst_p, worst_n, count = -math.inf, None, 0, 0
    for n in range(1, max_period + 1):
        pts = periodic_points(c.base, n)
        spectra = _batched_periodic_spectra(c, pts, n)
        gaps = spectra[:, 0] - spectra[:, -1]
        i = int(np.argmax(gaps))
        count += len(pts)
        if gaps[i] > worst:
            worst, worst_p, worst_n = float(gaps[i]), pts[i], n
    return OneExponentReport(worst <= tol, worst, worst_p, worst_n, tol, count)


def write_history_csv(path, rows: Sequence[HistoryRow]) -> Path:
    """Write ``n, lambda_plus, lambda_minus, logK_over_n`` rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "lambda_plus", "lambda_minus", "logK_over_n"])
        for r in rows:
            w.writerow([r.n, repr(r.top), repr(r.bottom), repr(r.log_distortion_rate)])
    return path
