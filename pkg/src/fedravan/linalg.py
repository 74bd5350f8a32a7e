"""Dense float64 matrix kernels: products, one-sided Jacobi SVD, Gram-Schmidt,
effective rank and deterministic random streams.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import DegeneracyError, NumericError, ShapeError, UndefinedRankError

RngStream = np.random.Generator

SVD_MAX_SWEEPS = 100
SVD_TOL = 1e-12
GS_DEGENERACY_TOL = 1e-12


def as_matrix(m, name="matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def make_stream(seed: int, *path: Union[str, int]) -> RngStream:
    """Counter-based (Philox) generator keyed by ``seed`` and a name path.

    Streams with different paths are statistically independent and do not
    depend on the order in which they are created, so each client, the server
    sampler and every initializer can own one.
    """
    key = []
    for part in path:
        if isinstance(part, str):
            key.append(zlib.crc32(part.encode("utf-8")))
        else:
            key.append(int(part))
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(seq))


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(m) -> float:
    a = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def random_normal_matrix(rows: int, cols: int, sigma: float, stream: RngStream) -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return stream.standard_normal((rows, cols)) * sigma


class SvdResult(NamedTuple):
    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray


def _round_robin(n: int):
    """Yield n-1 (or n) rounds of disjoint index pairs covering all pairs once."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    for _ in range(size - 1):
        ps, qs = [], []
        for k in range(size // 2):
            p, q = players[k], players[size - 1 - k]
            if p >= 0 and q >= 0:
                ps.append(min(p, q))
                qs.append(max(p, q))
        if ps:
            yield np.array(ps), np.array(qs)
        players = [players[0]] + [players[-1]] + players[1:-1]


def _complete_orthonormal(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns of ``u`` not flagged ``good`` with an orthonormal completion."""
    m = u.shape[0]
    u = u.copy()
    kept = u[:, good]
    # residual projector onto the complement; its largest column never vanishes
    resid = np.eye(m) - kept @ kept.T
    basis = list(kept.T)
    for j in np.flatnonzero(~good):
        e = np.zeros(m)
        e[int(np.argmax(np.einsum("ij,ij->j", resid, resid)))] = 1.0
        for _ in range(2):
            for q in basis:
                e -= (q @ e) * q
        q_new = e / np.linalg.norm(e)
        u[:, j] = q_new
        basis.append(q_new)
        resid -= np.outer(q_new, q_new @ resid)
    return u


def svd(m, max_sweeps: int = SVD_MAX_SWEEPS, tol: float = SVD_TOL) -> SvdResult:
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Disjoint column pairs are rotated together in round-robin order. A pair
    counts as converged once ``|a_p . a_q| <= tol * |a_p| |a_q|``; the sweep
    loop stops when a full sweep performs no rotation.

    Returns ``u`` (m x k), non-increasing ``singular_values`` (k) and ``vt``
    (k x n) with k = min(m, n). Raises ``NumericError`` if ``max_sweeps`` is
    exhausted.
    """
    a = as_matrix(m)
    if a.size == 0:
        raise ShapeError("svd of an empty matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("svd input contains non-finite entries")

    transpose = a.shape[0] < a.shape[1]
    # unit max entry keeps squared norms clear of underflow and overflow
    scale = float(np.abs(a).max()) or 1.0
    work = (a.T if transpose else a) / scale
    rows, n = work.shape
    v = np.eye(n)
    rounds = list(_round_robin(n))
    # columns below this squared norm are numerically zero and never rotated
    floor = (np.finfo(float).eps * np.sqrt(np.sum(work * work))) ** 2

    for sweep in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            ap, aq = work[:, p], work[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (alpha > floor) & (beta > floor)
            if not active.any():
                continue
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            with np.errstate(over="ignore"):
                zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            moving = t != 0.0
            if not moving.any():
                continue
            rotated = True
            p, q, t = p[moving], q[moving], t[moving]
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for mat in (work, v):
                mp, mq = mat[:, p], mat[:, q]
                mat[:, p] = c * mp - s * mq
                mat[:, q] = s * mp + c * mq
        if not rotated:
            break
    else:
        raise NumericError("one-sided Jacobi SVD did not converge", max_sweeps)

    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]

    good = sigma > (sigma[0] * rows * np.finfo(float).eps if sigma[0] > 0 else 0.0)
    u = np.zeros_like(work)
    u[:, good] = work[:, good] / sigma[good]
    if not good.all():
        u = _complete_orthonormal(u, good)
    sigma = sigma * scale

    if transpose:
        return SvdResult(v, sigma, u.T)
    return SvdResult(u, sigma, v.T)


def numerical_rank(m, rel_tol: float = 1e-9) -> int:
    """Count singular values above ``rel_tol`` times the largest one."""
    sv = svd(m).singular_values
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


def gram_schmidt_columns(m) -> np.ndarray:
    """Orthonormalize columns left to right (modified Gram-Schmidt, two passes).

    The span of the first k output columns equals that of the first k input
    columns. A column whose residual after projection has norm below 1e-12
    raises ``DegeneracyError`` naming that column.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    if cols > rows:
        raise ShapeError(f"cannot orthonormalize {cols} columns in dimension {rows}")
    q = np.zeros_like(a)
    for j in range(cols):
        vec = a[:, j].copy()
        for _ in range(2):
            for i in range(j):
                vec -= (q[:, i] @ vec) * q[:, i]
        nrm = float(np.sqrt(vec @ vec))
        if nrm < GS_DEGENERACY_TOL:
            raise DegeneracyError(j, nrm)
        q[:, j] = vec / nrm
    return q


@dataclass(frozen=True)
class EntropyExp:
    """exp of the Shannon entropy of the normalized singular values."""


@dataclass(frozen=True)
class ThresholdFraction:
    """Number of singular values at least ``tau`` times the largest."""

    tau: float


def effective_rank(singular_values: Sequence[float], method=EntropyExp()) -> float:
    sv = np.asarray(singular_values, dtype=np.float64)
    if sv.ndim != 1 or sv.size == 0:
        raise ValueError("expected a non-empty 1-D spectrum")
    if np.any(sv < 0) or np.any(np.diff(sv) > 0):
        raise ValueError("spectrum must be non-negative and non-increasing")
    total = float(sv.sum())
    if total == 0.0:
        raise UndefinedRankError("effective rank of an all-zero spectrum is undefined")
    if isinstance(method, ThresholdFraction):
        return float(np.sum(sv >= method.tau * sv[0]))
    if isinstance(method, EntropyExp):
        p = sv / total
        p = p[p > 0]  # also drops subnormal masses that underflow
        entropy = -float(np.sum(p * np.log(p)))
        return min(max(math.exp(entropy), 1.0), float(sv.size))
    raise TypeError(f"unknown effective-rank method {method!r}")
