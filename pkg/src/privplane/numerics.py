"""Seeded random streams, plane bases, projections and small numerical oracles.

Every random draw in the package goes through :func:`rng_stream`, which maps a
``(seed, purpose)`` pair to an independent PCG64 stream. Two purposes under the
same seed never share state, so e.g. changing the batch shuffle cannot move the
weight initialisation.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import DegeneratePlane, DimensionMismatch, EmptyShape

PARALLEL_TOL = 1e-9
UNIT_TOL = 1e-9


def rng_stream(seed: int, purpose: str = "default") -> np.random.Generator:
    """Return a PCG64 generator for ``(seed, purpose)``.

    The purpose string is hashed with CRC32 into the SeedSequence spawn key,
    which gives a statistically independent stream per purpose.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    key = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *labels) -> int:
    """Derive a 64-bit seed for a sub-task (one run of a grid, one repeat, ...)."""
    text = "/".join(str(x) for x in labels).encode("utf-8")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(text),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class PlaneBasis:
    """Orthonormal pair spanning the plane of basis vectors ``pair = (i, j)``."""

    e1: np.ndarray
    e2: np.ndarray
    pair: Tuple[int, int] = (0, 1)

    @property
    def dim(self) -> int:
        return self.e1.shape[0]

    def matrix(self) -> np.ndarray:
        """The 2 x n matrix with rows e1, e2."""
        return np.stack([self.e1, self.e2])


def gram_schmidt_plane_basis(b1, b2, pair: Tuple[int, int] = (0, 1)) -> PlaneBasis:
    """Orthonormalise ``(b1, b2)`` keeping ``e1 = b1`` and ``e2 . b2 >= 0``."""
    b1 = np.asarray(b1, dtype=np.float64)
    b2 = np.asarray(b2, dtype=np.float64)
    if b1.shape != b2.shape or b1.ndim != 1:
        raise DimensionMismatch(f"basis vectors must be equal-length 1-d, got {b1.shape} and {b2.shape}")
    for name, b in (("b1", b1), ("b2", b2)):
        if abs(np.linalg.norm(b) - 1.0) > UNIT_TOL:
            raise ValueError(f"{name} is not unit length (norm={np.linalg.norm(b)!r})")
    c = float(b1 @ b2)
    if abs(c) > 1.0 - PARALLEL_TOL:
        raise DegeneratePlane(f"pair {pair} is parallel (cosine {c:.12f})")
    r = b2 - c * b1
    e2 = r / np.linalg.norm(r)
    # one re-orthogonalisation pass keeps e1.e2 at rounding level for nearly parallel pairs
    e2 = e2 - (e2 @ b1) * b1
    e2 /= np.linalg.norm(e2)
    return PlaneBasis(e1=b1.copy(), e2=e2, pair=tuple(pair))


def pseudo_inverse_coefficients(E: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Least-squares in-plane coefficients of the rows of ``V`` for a 2 x n ``E``.

    Solves the 2 x 2 normal equations ``(E E^T) w = E v``; works for any
    full-rank pair of spanning vectors, orthonormal or not.
    """
    V = np.asarray(V, dtype=np.float64)
    gram = E @ E.T
    rhs = E @ np.atleast_2d(V).T
    w = np.linalg.solve(gram, rhs).T
    return w if V.ndim == 2 else w[0]


def project_rows(V: np.ndarray, basis: PlaneBasis) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`project_to_plane` over the rows of ``V``.

    Returns ``(w, ratio)`` with shapes ``(m, 2)`` and ``(m,)``.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] != basis.dim:
        raise DimensionMismatch(f"expected rows of length {basis.dim}, got shape {V.shape}")
    # the ratio is scale-free; rescale rows by a power of two (exact) so tiny vectors stay normal
    _, ex = np.frexp(np.max(np.abs(V), axis=1))
    Vs = np.ldexp(V, -ex[:, None])
    ws = pseudo_inverse_coefficients(basis.matrix(), Vs)
    par = np.hypot(ws[:, 0], ws[:, 1])
    norm = np.linalg.norm(Vs, axis=1)
    ratio = np.zeros(len(V))
    nz = norm > 0
    ratio[nz] = np.minimum(par[nz] / norm[nz], 1.0)
    w = np.ldexp(ws, ex[:, None])
    return w, ratio


def project_to_plane(v, basis: PlaneBasis) -> Tuple[np.ndarray, float]:
    """In-plane coefficients ``w`` of ``v`` and the ratio ``|v_par| / |v|``.

    The zero vector has ratio 0, so it never passes an angular threshold.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != basis.dim:
        raise DimensionMismatch(f"vector of length {v.shape} does not match plane dimension {basis.dim}")
    w, ratio = project_rows(v[None, :], basis)
    return w[0], float(ratio[0])


def sample_standard_normal_matrix(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise EmptyShape(f"matrix shape must be positive, got ({rows}, {cols})")
    return rng.standard_normal((rows, cols))


def sample_haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed sample from O(n).

    QR of a Gaussian matrix, with the columns of Q multiplied by the signs of
    diag(R) so that the factorisation is unique and the law is left-invariant.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    Z = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d[None, :]


def finite_difference_jvp(f: Callable[[np.ndarray], np.ndarray], x, u, h: float = 1e-5) -> np.ndarray:
    """Central difference ``(f(x + h u) - f(x - h u)) / 2h``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    return (np.asarray(f(x + h * u)) - np.asarray(f(x - h * u))) / (2.0 * h)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def standard_basis(n: int, i: Optional[int] = None) -> np.ndarray:
    """Identity matrix, or its ``i``-th row when ``i`` is given."""
    eye = np.eye(n)
    return eye if i is None else eye[i]
