"""Symmetry-classified activation functions.

Two families, each with an elementwise (permutation-equivariant) member and a
radial (orthogonal-equivariant) member:

* tanh: ``standard-tanh`` applies tanh per coordinate, ``isotropic-tanh``
  maps ``x -> tanh(|x|) x/|x|``.
* Leaky-ReLU: ``standard-leaky-relu`` is ``max(alpha x_i, x_i)`` per
  coordinate, ``isotropic-leaky-relu`` scales the radius by ``alpha`` inside a
  ball of radius ``eps_ball`` and shifts it by ``-(1 - alpha) eps_ball``
  outside, which keeps the radial profile continuous.

``global-parity-leaky-relu`` keeps ``x`` when the product of coordinate signs
is positive and multiplies it by ``alpha`` otherwise.

All functions act on the last axis, so a ``(batch, n)`` array is a batch of
vectors.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numerics import sample_haar_orthogonal


class Kind(str, enum.Enum):
    STANDARD_TANH = "standard-tanh"
    ISOTROPIC_TANH = "isotropic-tanh"
    STANDARD_LEAKY_RELU = "standard-leaky-relu"
    ISOTROPIC_LEAKY_RELU = "isotropic-leaky-relu"
    GLOBAL_PARITY_LEAKY_RELU = "global-parity-leaky-relu"

    @property
    def is_radial(self) -> bool:
        return self in (Kind.ISOTROPIC_TANH, Kind.ISOTROPIC_LEAKY_RELU)

    @property
    def is_isotropic(self) -> bool:
        return self.is_radial


class Group(str, enum.Enum):
    PERMUTATION = "permutation"
    SIGNED_PERMUTATION = "signed-permutation"
    ORTHOGONAL = "orthogonal"


@dataclass(frozen=True)
class ActivationSpec:
    kind: Kind
    alpha_slope: float = 1e-2
    eps_ball: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not 0.0 < self.alpha_slope < 1.0:
            raise ValueError(f"alpha_slope must lie in (0, 1), got {self.alpha_slope}")
        if not self.eps_ball > 0.0:
            raise ValueError(f"eps_ball must be positive, got {self.eps_ball}")

    @classmethod
    def of(cls, kind, **kwargs) -> "ActivationSpec":
        return kind if isinstance(kind, cls) else cls(Kind(kind), **kwargs)


@dataclass(frozen=True)
class EquivarianceReport:
    max_abs_residual: float
    trials: int
    group: Group


def _radial_profile(spec: ActivationSpec, r: np.ndarray):
    """Radius map ``g(r)`` and its derivative for the radial kinds."""
    if spec.kind is Kind.ISOTROPIC_TANH:
        g = np.tanh(r)
        return g, 1.0 - g * g
    a, eps = spec.alpha_slope, spec.eps_ball
    outer = r >= eps
    g = np.where(outer, r - (1.0 - a) * eps, a * r)
    return g, np.where(outer, 1.0, a)


def _parity_scale(spec: ActivationSpec, x: np.ndarray) -> np.ndarray:
    # a zero coordinate gives sign product 0, which takes the identity branch
    s = np.prod(np.sign(x), axis=-1, keepdims=True)
    return np.where(s < 0, spec.alpha_slope, 1.0)


def _radius(x: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis, scaled first so tiny or huge inputs neither under- nor overflow."""
    m = np.max(np.abs(x), axis=-1, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    return m * np.linalg.norm(x / safe, axis=-1, keepdims=True)


def apply(spec: ActivationSpec, x) -> np.ndarray:
    """Forward map of ``spec`` over the last axis of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    kind = spec.kind
    if kind is Kind.STANDARD_TANH:
        return np.tanh(x)
    if kind is Kind.STANDARD_LEAKY_RELU:
        return np.maximum(spec.alpha_slope * x, x)
    if kind is Kind.GLOBAL_PARITY_LEAKY_RELU:
        return _parity_scale(spec, x) * x
    r = _radius(x)
    g, _ = _radial_profile(spec, r)
    safe = np.where(r > 0, r, 1.0)
    # divide before scaling so that axis-aligned inputs give exact unit directions
    return g * (x / safe)


def jvp(spec: ActivationSpec, x, u) -> np.ndarray:
    """Jacobian-vector product ``J(x) u``.

    Every Jacobian here is symmetric, so this is also the vector-Jacobian
    product used by backpropagation.
    """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    kind = spec.kind
    if kind is Kind.STANDARD_TANH:
        t = np.tanh(x)
        return (1.0 - t * t) * u
    if kind is Kind.STANDARD_LEAKY_RELU:
        return np.where(x > 0, 1.0, spec.alpha_slope) * u
    if kind is Kind.GLOBAL_PARITY_LEAKY_RELU:
        return _parity_scale(spec, x) * u
    r = _radius(x)
    g, dg = _radial_profile(spec, r)
    nz = r > 0
    safe = np.where(nz, r, 1.0)
    xhat = x / safe
    along = np.sum(xhat * u, axis=-1, keepdims=True) * xhat
    # at the origin g(r)/r tends to g'(0)
    tangential = np.where(nz, g / safe, dg)
    return dg * along + tangential * (u - along)


def _trial_inputs(rng: np.random.Generator, n: int) -> np.ndarray:
    # radii spread over both Leaky-ReLU ball branches and tanh saturation
    return rng.standard_normal(n) * rng.uniform(0.1, 3.0)


def check_permutation_equivariance(spec: ActivationSpec, trials: int, rng: np.random.Generator, n: int = 18, signed: bool = False) -> EquivarianceReport:
    """Max over trials of ``|f(Px) - P f(x)|_inf`` for random (signed) permutations ``P``."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    worst = 0.0
    for _ in range(trials):
        x = _trial_inputs(rng, n)
        perm = rng.permutation(n)
        signs = rng.choice([-1.0, 1.0], size=n) if signed else np.ones(n)
        act = lambda v: signs * v[perm]
        res = np.max(np.abs(apply(spec, act(x)) - act(apply(spec, x))))
        worst = max(worst, float(res))
    group = Group.SIGNED_PERMUTATION if signed else Group.PERMUTATION
    return EquivarianceReport(worst, trials, group)


def check_orthogonal_equivariance(spec: ActivationSpec, trials: int, rng: np.random.Generator, n: int = 18) -> EquivarianceReport:
    """Max over trials of ``|f(Rx) - R f(x)|_inf`` for Haar-random ``R``."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    worst = 0.0
    for _ in range(trials):
        x = _trial_inputs(rng, n)
        R = sample_haar_orthogonal(n, rng)
        res = np.max(np.abs(apply(spec, R @ x) - R @ apply(spec, x)))
        worst = max(worst, float(res))
    return EquivarianceReport(worst, trials, Group.ORTHOGONAL)


def equivariance_witness(spec: ActivationSpec, group: Group, n: int = 18) -> float:
    """Residual on a fixed hand-built input that breaks equivariance for elementwise kinds.

    Orthogonal: ``x = 2 e_1`` rotated by 45 degrees in the (e_1, e_2) plane.
    Signed permutation: ``x = e_1`` with the first coordinate negated.
    """
    group = Group(group)
    x = np.zeros(n)
    if group is Group.ORTHOGONAL:
        x[0] = 2.0
        G = np.eye(n)
        c = s = np.sqrt(0.5)
        G[:2, :2] = [[c, -s], [s, c]]
    elif group is Group.SIGNED_PERMUTATION:
        x[0] = 1.0
        G = np.eye(n)
        G[0, 0] = -1.0
    else:
        x[:] = np.arange(1, n + 1) - n / 2.0
        G = np.eye(n)[::-1]
    return float(np.max(np.abs(apply(spec, G @ x) - G @ apply(spec, x))))
