"""Fast self-checks behind ``privplane verify``.

Each check returns a :class:`CheckResult`; :func:`run_checks` collects them.
``corrupt`` swaps in a deliberately broken forward map for one activation kind
so the failure path can be exercised end to end.
"""

from __future__ import annotations

import itertools
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional

import numpy as np

from . import activations, model, ppp
from .activations import ActivationSpec, Group, Kind
from .model import AutoencoderConfig, Autoencoder
from .numerics import PlaneBasis, rng_stream

KINK_MARGIN = 1e-4
FD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


# -- gradient check ----------------------------------------------------------

def near_kink(spec: ActivationSpec, Z: np.ndarray, margin: float = KINK_MARGIN) -> bool:
    """True if any row of ``Z`` sits within ``margin`` of a non-smooth point of ``spec``."""
    if spec.kind in (Kind.STANDARD_LEAKY_RELU, Kind.GLOBAL_PARITY_LEAKY_RELU):
        return bool(np.any(np.abs(Z) < margin))
    r = np.linalg.norm(Z, axis=-1)
    if spec.kind is Kind.ISOTROPIC_LEAKY_RELU:
        return bool(np.any(r < margin) or np.any(np.abs(r - spec.eps_ball) < margin))
    if spec.kind is Kind.ISOTROPIC_TANH:
        return bool(np.any(r < margin))
    return False


def random_point(config: AutoencoderConfig, rng: np.random.Generator, batch: int = 4, max_tries: int = 1000):
    """Random parameters, inputs and targets whose pre-activations avoid every kink."""
    for _ in range(max_tries):
        weights = [rng.standard_normal(s) for s in model.layer_shapes(config)]
        biases = [rng.standard_normal(s[0]) * 0.5 for s in model.layer_shapes(config)]
        m = Autoencoder(config, weights, biases)
        X = rng.standard_normal((batch, config.input_dim))
        T = rng.standard_normal((batch, config.input_dim))
        _, zs = model.forward_collect(m, X)
        if not any(near_kink(config.activation, z) for z in zs):
            return m, X, T
    raise RuntimeError("could not draw a kink-free parameter point")


def finite_difference_grads(m: Autoencoder, X, T, h: float = FD_STEP) -> List[np.ndarray]:
    out = []
    for p in m.parameters():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = model.mse_loss(model.reconstruct(m, X), T)
            flat[i] = orig - h
            down = model.mse_loss(model.reconstruct(m, X), T)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``|a - b| / max(|a|, |b|)`` in the 2-norm (0 when both vanish)."""
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)


def gradient_error(kind: Kind, points: int, rng: np.random.Generator, shape=(5, 3, 1)) -> float:
    """Worst per-tensor relative error of :func:`model.backward` against central differences."""
    d, n, L = shape
    cfg = AutoencoderConfig(d, n, L, ActivationSpec(kind))
    worst = 0.0
    for _ in range(points):
        m, X, T = random_point(cfg, rng)
        _, grads = model.backward(m, X, T)
        fd = finite_difference_grads(m, X, T)
        worst = max(worst, max(relative_error(g, f) for g, f in zip(grads, fd)))
    return worst


# -- projection oracle -------------------------------------------------------

def brute_force_records(V: np.ndarray, basis: np.ndarray, epsilon: float):
    """Reference PPP: explicit Gram-Schmidt, least squares, and a norm ratio per (plane, sample)."""
    out = []
    n = basis.shape[0]
    for i, j in itertools.combinations(range(n), 2):
        b1, b2 = basis[i], basis[j]
        e2 = b2 - (b1 @ b2) * b1
        e2 = e2 / np.linalg.norm(e2)
        E = np.stack([b1, e2], axis=1)
        for s, v in enumerate(V):
            # power-of-two rescaling is exact and keeps subnormal inputs out of lstsq
            _, ex = np.frexp(np.max(np.abs(v)))
            vs = np.ldexp(v, -ex)
            ws, *_ = np.linalg.lstsq(E, vs, rcond=None)
            nv = np.linalg.norm(vs)
            ratio = 0.0 if nv == 0 else np.linalg.norm(E @ ws) / nv
            w = np.ldexp(ws, ex)
            if ratio > epsilon:
                out.append((i, j, s, w[0], w[1], ratio))
    return out


def projection_oracle_error(V: np.ndarray, epsilon: float = 0.75):
    """(membership mismatches, max |delta| in w and ratio) between the pipeline and the brute-force oracle over the standard basis."""
    basis = np.eye(V.shape[1])
    recs = ppp.project_representations(V, ppp.enumerate_planes(basis), epsilon)
    ref = brute_force_records(V, basis, epsilon)
    got = {(int(r["i"]), int(r["j"]), int(r["sample"])): (r["w"][0], r["w"][1], r["ratio"]) for r in recs}
    want = {(i, j, s): (a, b, c) for i, j, s, a, b, c in ref}
    mismatch = len(set(got) ^ set(want))
    err = max((max(abs(x - y) for x, y in zip(got[k], want[k])) for k in set(got) & set(want)), default=0.0)
    return mismatch, float(err)


# -- corruption hook ---------------------------------------------------------

@contextmanager
def corrupted(kind: Optional[Kind]):
    """Temporarily perturb ``activations.apply`` for ``kind`` (no-op for ``None``)."""
    if kind is None:
        yield
        return
    kind = Kind(kind)
    original = activations.apply

    def broken(spec, x):
        y = original(spec, x)
        if spec.kind is kind:
            x = np.asarray(x, dtype=np.float64)
            y = y + 0.05 * x[..., :1] ** 2
        return y

    activations.apply = broken
    try:
        yield
    finally:
        activations.apply = original


# -- suite -------------------------------------------------------------------

def _timed(name: str, threshold: float, fn: Callable[[], float], cmp=lambda v, t: v <= t, detail: str = "") -> CheckResult:
    t0 = time.perf_counter()
    try:
        value = float(fn())
        ok = bool(cmp(value, threshold)) and math.isfinite(value)
    except Exception as exc:  # a crashing check is a failing check
        return CheckResult(name, False, float("nan"), threshold, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0)
    return CheckResult(name, ok, value, threshold, detail, time.perf_counter() - t0)


def run_checks(seed: int = 0, trials: int = 200, gradient_points: int = 2, corrupt: Optional[Kind] = None) -> List[CheckResult]:
    results = []
    with corrupted(corrupt):
        def rng(purpose):
            return rng_stream(seed, purpose)

        S = ActivationSpec.of
        eq = [
            ("equivariance/standard-tanh/signed-permutation", Kind.STANDARD_TANH, Group.SIGNED_PERMUTATION, 1e-12),
            ("equivariance/standard-leaky-relu/permutation", Kind.STANDARD_LEAKY_RELU, Group.PERMUTATION, 1e-12),
            ("equivariance/global-parity-leaky-relu/permutation", Kind.GLOBAL_PARITY_LEAKY_RELU, Group.PERMUTATION, 1e-12),
            ("equivariance/isotropic-tanh/orthogonal", Kind.ISOTROPIC_TANH, Group.ORTHOGONAL, 1e-10),
            ("equivariance/isotropic-leaky-relu/orthogonal", Kind.ISOTROPIC_LEAKY_RELU, Group.ORTHOGONAL, 1e-10),
        ]
        for name, kind, group, tol in eq:
            def fn(kind=kind, group=group, name=name):
                if group is Group.ORTHOGONAL:
                    return activations.check_orthogonal_equivariance(S(kind), trials, rng(name)).max_abs_residual
                return activations.check_permutation_equivariance(S(kind), trials, rng(name), signed=group is Group.SIGNED_PERMUTATION).max_abs_residual
            results.append(_timed(name, tol, fn))
        for name, kind, group in [
            ("witness/standard-tanh/orthogonal", Kind.STANDARD_TANH, Group.ORTHOGONAL),
            ("witness/standard-leaky-relu/signed-permutation", Kind.STANDARD_LEAKY_RELU, Group.SIGNED_PERMUTATION),
        ]:
            results.append(_timed(name, 0.1, lambda kind=kind, group=group: activations.equivariance_witness(S(kind), group), cmp=lambda v, t: v > t))

        def axis():
            worst = 0.0
            for a in np.linspace(-5, 5, 101):
                for i in range(18):
                    x = np.zeros(18)
                    x[i] = a
                    worst = max(worst, np.max(np.abs(activations.apply(S(Kind.ISOTROPIC_TANH), x) - activations.apply(S(Kind.STANDARD_TANH), x))))
            return worst
        results.append(_timed("axis-agreement/tanh", 0.0, axis))

        for kind in Kind:
            name = f"gradient/{kind.value}"
            results.append(_timed(name, 1e-6, lambda kind=kind, name=name: gradient_error(kind, gradient_points, rng(name))))

        def oracle():
            V = rng("oracle").standard_normal((200, 3))
            V[:3] = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0) * np.array([[1.0], [2.0], [-0.5]])
            mismatch, err = projection_oracle_error(V)
            return err if mismatch == 0 else float("inf")
        results.append(_timed("ppp/brute-force-oracle", 1e-10, oracle))
        results.append(_timed("ppp/plane-count", 0.0, lambda: abs(len(ppp.enumerate_planes(np.eye(18))) - 153) + abs(len(ppp.enumerate_planes(np.eye(18), ppp.Mode.PERMUTATION)) - 306)))
        results.append(_timed("subsample/arithmetic", 0.0, lambda: abs(ppp.subsample_size(100, 0.9) - 63) + abs(ppp.subsample_size(1000, 0.9) - 501)))
        results.append(_timed("schedule/cumulative", 0.0, lambda: float(model.cumulative_checkpoints(model.DEFAULT_EPOCH_INCREMENTS) != [1, 2, 4, 6, 8, 13, 18, 24, 30, 40, 50, 60, 75, 90, 105, 125])))
    return results
