"""Privileged-plane projections of latent representations.

For every pair of distinguished unit vectors ``(b_i, b_j)`` the pair is
orthonormalised into a plane, each representation ``v`` is split into its
in-plane part and remainder, and ``v`` is kept for that plane when
``|v_par| / |v| > epsilon``. Kept representations are stored as records
``(i, j, sample, w, ratio)`` where ``w`` are the in-plane coordinates.

Record sets are numpy structured arrays with dtype
:data:`privplane.formats.RECORD_DTYPE`, always sorted by plane then sample.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np
from scipy import stats

from .errors import DegeneratePlane, DimensionMismatch, EmptyInput
from .formats import RECORD_DTYPE
from .numerics import PlaneBasis, gram_schmidt_plane_basis, project_rows, sample_haar_orthogonal


class Mode(str, enum.Enum):
    COMBINATION = "combination"
    PERMUTATION = "permutation"


@dataclass(frozen=True)
class PppConfig:
    epsilon: float = 0.75
    mode: Mode = Mode.COMBINATION
    subsample_exponent: float = 0.9
    subsample_threshold: int = 10_000
    subsample_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.subsample_exponent <= 1.0:
            raise ValueError("subsample_exponent must lie in (0, 1]")


class ProjectionRecord(NamedTuple):
    plane: tuple
    sample: int
    w: np.ndarray
    ratio: float


def iter_records(table: np.ndarray):
    for r in table:
        yield ProjectionRecord((int(r["i"]), int(r["j"])), int(r["sample"]), np.array(r["w"]), float(r["ratio"]))


def empty_records() -> np.ndarray:
    return np.zeros(0, dtype=RECORD_DTYPE)


def standard_basis(n: int) -> np.ndarray:
    """Distinguished vectors as rows: the standard basis of R^n."""
    return np.eye(n)


def haar_basis(n: int, rng: np.random.Generator) -> np.ndarray:
    """Rows of a Haar-random orthogonal matrix."""
    return sample_haar_orthogonal(n, rng).T.copy()


def check_basis(basis) -> np.ndarray:
    B = np.asarray(basis, dtype=np.float64)
    if B.ndim != 2 or len(B) < 2:
        raise ValueError("a privileged basis needs at least two vectors")
    norms = np.linalg.norm(B, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("privileged basis vectors must be unit length")
    return B


def enumerate_planes(basis, mode=Mode.COMBINATION) -> List[PlaneBasis]:
    """Planes over unordered (combination) or ordered (permutation) pairs; parallel pairs skipped."""
    B = check_basis(basis)
    mode = Mode(mode)
    k = len(B)
    planes = []
    for i in range(k):
        for j in range(k):
            if i == j or (mode is Mode.COMBINATION and j < i):
                continue
            try:
                planes.append(gram_schmidt_plane_basis(B[i], B[j], (i, j)))
            except DegeneratePlane:
                continue
    return planes


def project_representations(latents, planes: List[PlaneBasis], epsilon: float) -> np.ndarray:
    """Records for every (sample, plane) pair with ratio strictly above ``epsilon``."""
    V = np.asarray(latents, dtype=np.float64)
    if V.ndim != 2:
        raise DimensionMismatch(f"latents must be 2-d, got shape {V.shape}")
    chunks = []
    for plane in planes:
        if plane.dim != V.shape[1]:
            raise DimensionMismatch(f"plane dimension {plane.dim} != latent dimension {V.shape[1]}")
        w, ratio = project_rows(V, plane)
        keep = np.flatnonzero(ratio > epsilon)
        if len(keep) == 0:
            continue
        rec = np.zeros(len(keep), dtype=RECORD_DTYPE)
        rec["i"], rec["j"] = plane.pair
        rec["sample"] = keep
        rec["w"] = w[keep]
        rec["ratio"] = ratio[keep]
        chunks.append(rec)
    if not chunks:
        return empty_records()
    return canonical_order(np.concatenate(chunks))


def canonical_order(table: np.ndarray) -> np.ndarray:
    order = np.lexsort((table["sample"], table["j"], table["i"]))
    return table[order]


def subsample_size(m: int, exponent: float) -> int:
    """Closest integer to ``m ** exponent`` (halves round up)."""
    if m <= 0:
        return 0
    return int(math.floor(m ** exponent + 0.5))


def subsample(records: np.ndarray, exponent: float, rng: np.random.Generator, threshold: int = 0) -> np.ndarray:
    """Uniform draw without replacement of ``round(m ** exponent)`` records when ``m > threshold``.

    The draw keeps canonical order. ``threshold=0`` always applies the rule.
    """
    if not 0.0 < exponent <= 1.0:
        raise ValueError("exponent must lie in (0, 1]")
    m = len(records)
    if m <= threshold or m == 0:
        return records
    k = subsample_size(m, exponent)
    idx = np.sort(rng.choice(m, size=k, replace=False))
    return records[idx]


def _nonzero_angles(records) -> np.ndarray:
    w = records["w"] if getattr(records, "dtype", None) is not None and records.dtype.names else np.asarray(records, dtype=np.float64).reshape(-1, 2)
    w = np.asarray(w, dtype=np.float64).reshape(-1, 2)
    keep = np.hypot(w[:, 0], w[:, 1]) >= 1e-9
    return np.arctan2(w[keep, 1], w[keep, 0])


def axis_concentration(records, half_angle_degrees: float = 10.0) -> float:
    """Fraction of records whose ``w`` lies within the half-angle of one of the four semi-axes.

    Accepts a record table or an ``(m, 2)`` array of coordinates. Near-zero
    ``w`` are ignored.
    """
    theta = _nonzero_angles(records)
    if len(theta) == 0:
        raise EmptyInput("no records with non-zero in-plane coordinates")
    # distance to the nearest multiple of 90 degrees
    quarter = np.pi / 2
    off = np.abs(np.mod(theta + quarter / 2, quarter) - quarter / 2)
    # guard the exact diagonal from rounding in the modulo
    return float(np.mean(off <= np.deg2rad(half_angle_degrees) + 1e-12))


def angular_histogram(records, bins: int = 36) -> np.ndarray:
    """Counts of ``atan2`` angles of ``w`` over ``bins`` equal bins of ``[-pi, pi)``."""
    if bins < 2:
        raise ValueError("bins must be at least 2")
    theta = _nonzero_angles(records)
    idx = np.floor((theta + np.pi) / (2 * np.pi) * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)  # atan2 can return exactly +pi
    return np.bincount(idx, minlength=bins)


@dataclass(frozen=True)
class Uniformity:
    statistic: float
    pvalue: float
    dof: int
    count: int


def chi_square_uniformity(counts) -> Uniformity:
    """Pearson chi-square of histogram counts against the uniform distribution."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise EmptyInput("histogram is empty")
    res = stats.chisquare(counts)
    return Uniformity(float(res.statistic), float(res.pvalue), len(counts) - 1, int(total))


def per_plane_counts(records: np.ndarray) -> dict:
    if len(records) == 0:
        return {}
    pairs, counts = np.unique(np.stack([records["i"], records["j"]], axis=1), axis=0, return_counts=True)
    return {f"{int(i)},{int(j)}": int(c) for (i, j), c in zip(pairs, counts)}


def summary(records: np.ndarray, config: PppConfig, n_planes: int, n_samples: int, extra: Optional[dict] = None) -> dict:
    doc = {
        "epsilon": config.epsilon,
        "mode": config.mode.value,
        "planes": n_planes,
        "samples": n_samples,
        "total_records": int(len(records)),
        "per_plane": per_plane_counts(records),
    }
    if extra:
        doc.update(extra)
    return doc


def run_ppp(latents, config: PppConfig = PppConfig(), basis=None):
    """Enumerate planes over ``basis`` (standard basis by default) and project. Returns ``(records, planes)``."""
    V = np.asarray(latents, dtype=np.float64)
    B = standard_basis(V.shape[1]) if basis is None else basis
    planes = enumerate_planes(B, config.mode)
    return project_representations(V, planes, config.epsilon), planes
