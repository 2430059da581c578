import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from privplane import activations
from privplane.activations import ActivationSpec, Group, Kind, apply, jvp
from privplane.numerics import finite_difference_jvp, rng_stream

ALL = list(Kind)
CONTINUOUS = [k for k in Kind if k is not Kind.GLOBAL_PARITY_LEAKY_RELU]


def S(kind, **kw):
    return ActivationSpec(kind, **kw)


# -- forward values ----------------------------------------------------------

def test_isotropic_tanh_origin():
    assert np.array_equal(apply(S(Kind.ISOTROPIC_TANH), np.zeros(5)), np.zeros(5))


def test_isotropic_tanh_on_axis_matches_standard():
    x = np.zeros(18)
    x[2] = 2.0
    iso = apply(S(Kind.ISOTROPIC_TANH), x)
    expected = np.zeros(18)
    expected[2] = np.tanh(2.0)
    assert np.array_equal(iso, expected)
    assert np.array_equal(iso, apply(S(Kind.STANDARD_TANH), x))


def test_standard_leaky_relu_values():
    assert np.allclose(apply(S(Kind.STANDARD_LEAKY_RELU), [1.0, -1.0]), [1.0, -0.01])


def test_isotropic_leaky_relu_inner_branch():
    assert np.allclose(apply(S(Kind.ISOTROPIC_LEAKY_RELU), [0.3, 0.4]), [0.003, 0.004], atol=1e-15)


def test_isotropic_leaky_relu_outer_branch():
    # g(2) = 2 - (1 - 0.01) * 1
    assert np.allclose(apply(S(Kind.ISOTROPIC_LEAKY_RELU), [2.0, 0.0]), [1.01, 0.0], atol=1e-15)


def test_isotropic_leaky_relu_origin():
    assert np.array_equal(apply(S(Kind.ISOTROPIC_LEAKY_RELU), np.zeros(3)), np.zeros(3))


def test_global_parity_values():
    spec = S(Kind.GLOBAL_PARITY_LEAKY_RELU)
    assert np.allclose(apply(spec, [1.0, -1.0]), [0.01, -0.01])
    assert np.allclose(apply(spec, [1.0, 1.0]), [1.0, 1.0])
    assert np.allclose(apply(spec, [-1.0, -1.0]), [-1.0, -1.0])


def test_global_parity_zero_component_takes_identity():
    x = np.array([0.0, -3.0, 2.0])
    assert np.array_equal(apply(S(Kind.GLOBAL_PARITY_LEAKY_RELU), x), x)


def test_batched_apply_matches_rows():
    X = rng_stream(3, "batch").standard_normal((7, 5))
    for kind in ALL:
        rows = np.stack([apply(S(kind), x) for x in X])
        assert np.array_equal(apply(S(kind), X), rows)


@pytest.mark.parametrize("kw", [{"alpha_slope": 0.0}, {"alpha_slope": 1.0}, {"eps_ball": 0.0}])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        S(Kind.ISOTROPIC_LEAKY_RELU, **kw)


def test_kind_from_string():
    assert S("isotropic-tanh").kind is Kind.ISOTROPIC_TANH


# -- jvp ---------------------------------------------------------------------

def test_standard_tanh_jvp_at_origin():
    u = np.array([0.3, -1.2, 4.0])
    assert np.array_equal(jvp(S(Kind.STANDARD_TANH), np.zeros(3), u), u)


def test_isotropic_tanh_jvp_matches_fd():
    spec = S(Kind.ISOTROPIC_TANH)
    x, u = np.array([3.0, 4.0]), np.array([0.0, 1.0])
    fd = finite_difference_jvp(lambda z: apply(spec, z), x, u)
    assert np.linalg.norm(jvp(spec, x, u) - fd) <= 1e-6 * np.linalg.norm(fd)


def test_standard_leaky_jvp_slopes():
    assert np.allclose(jvp(S(Kind.STANDARD_LEAKY_RELU), [2.0, -2.0], [1.0, 1.0]), [1.0, 0.01])


def test_radial_jvp_at_origin_uses_inner_slope():
    u = np.array([1.0, -2.0])
    assert np.allclose(jvp(S(Kind.ISOTROPIC_TANH), np.zeros(2), u), u)
    assert np.allclose(jvp(S(Kind.ISOTROPIC_LEAKY_RELU), np.zeros(2), u), 0.01 * u)


def test_isotropic_leaky_jvp_on_boundary_takes_outer_branch():
    x = np.array([1.0, 0.0])
    assert np.allclose(jvp(S(Kind.ISOTROPIC_LEAKY_RELU), x, [1.0, 0.0]), [1.0, 0.0])


def _away_from_kinks(kind, x, margin=1e-3):
    if kind in (Kind.STANDARD_LEAKY_RELU, Kind.GLOBAL_PARITY_LEAKY_RELU):
        return np.all(np.abs(x) > margin)
    r = np.linalg.norm(x)
    if kind is Kind.ISOTROPIC_LEAKY_RELU:
        return r > margin and abs(r - 1.0) > margin
    return r > margin


@pytest.mark.parametrize("kind", ALL)
def test_jvp_matches_finite_differences(kind):
    rng = rng_stream(17, f"jvp/{kind.value}")
    spec = S(kind)
    checked = 0
    while checked < 1000:
        x = rng.standard_normal(6) * rng.uniform(0.05, 3.0)
        if not _away_from_kinks(kind, x):
            continue
        u = rng.standard_normal(6)
        fd = finite_difference_jvp(lambda z: apply(spec, z), x, u, 1e-6)
        an = jvp(spec, x, u)
        assert np.linalg.norm(an - fd) <= 1e-6 * max(np.linalg.norm(an), 1e-12), (x, u)
        checked += 1


# -- invariants --------------------------------------------------------------

@given(st.floats(-50, 50, allow_nan=False), st.integers(0, 17))
def test_axis_agreement_tanh(a, i):
    x = np.zeros(18)
    x[i] = a
    assert np.array_equal(apply(S(Kind.ISOTROPIC_TANH), x), apply(S(Kind.STANDARD_TANH), x))


def test_isotropic_leaky_continuity_at_ball():
    spec = S(Kind.ISOTROPIC_LEAKY_RELU)
    d = 1e-8
    inner = apply(spec, [1.0 - d, 0.0])[0]
    outer = apply(spec, [1.0 + d, 0.0])[0]
    assert abs(inner - outer) <= 1e-7


@given(arrays(np.float64, 9, elements=st.floats(-20, 20, allow_nan=False)))
def test_isotropic_tanh_norm_contract(x):
    y = apply(S(Kind.ISOTROPIC_TANH), x)
    assert abs(np.linalg.norm(y) - np.tanh(np.linalg.norm(x))) <= 1e-12


@pytest.mark.parametrize("kind", CONTINUOUS)
def test_lipschitz_bound(kind):
    rng = rng_stream(23, f"lipschitz/{kind.value}")
    spec = S(kind)
    bound = 1.0 if kind in (Kind.STANDARD_TANH, Kind.ISOTROPIC_TANH) else max(1.0, spec.alpha_slope)
    X = rng.uniform(-4, 4, size=(10_000, 6))
    # half the pairs close together, half far apart
    Y = np.where(np.arange(10_000)[:, None] % 2 == 0, X + rng.normal(scale=1e-3, size=X.shape), rng.uniform(-4, 4, size=X.shape))
    lhs = np.linalg.norm(apply(spec, X) - apply(spec, Y), axis=1)
    rhs = np.linalg.norm(X - Y, axis=1)
    assert np.all(lhs <= bound * rhs + 1e-12)


def test_global_parity_is_discontinuous_across_coordinate_hyperplanes():
    # crossing x_1 = 0 flips the sign product, so no Lipschitz bound holds there
    spec = S(Kind.GLOBAL_PARITY_LEAKY_RELU)
    x, y = np.array([1e-6, 1.0]), np.array([-1e-6, 1.0])
    assert np.linalg.norm(apply(spec, x) - apply(spec, y)) > 0.9


# -- equivariance checkers ---------------------------------------------------

def test_standard_tanh_signed_permutation_equivariant():
    rep = activations.check_permutation_equivariance(S(Kind.STANDARD_TANH), 1000, rng_stream(1, "eq"), signed=True)
    assert rep.max_abs_residual <= 1e-12 and rep.group is Group.SIGNED_PERMUTATION and rep.trials == 1000


def test_standard_leaky_permutation_but_not_signed():
    spec = S(Kind.STANDARD_LEAKY_RELU)
    assert activations.check_permutation_equivariance(spec, 1000, rng_stream(2, "eq")).max_abs_residual <= 1e-12
    assert activations.equivariance_witness(spec, Group.SIGNED_PERMUTATION) > 0.1
    assert activations.check_permutation_equivariance(spec, 1000, rng_stream(2, "eq"), signed=True).max_abs_residual > 0.1


def test_global_parity_permutation_equivariant():
    spec = S(Kind.GLOBAL_PARITY_LEAKY_RELU)
    assert activations.check_permutation_equivariance(spec, 1000, rng_stream(3, "eq")).max_abs_residual <= 1e-12


def test_global_parity_brute_force_all_permutations_n3():
    spec = S(Kind.GLOBAL_PARITY_LEAKY_RELU)
    rng = rng_stream(4, "eq")
    for _ in range(50):
        x = rng.standard_normal(3)
        for perm in itertools.permutations(range(3)):
            P = np.eye(3)[list(perm)]
            assert np.max(np.abs(apply(spec, P @ x) - P @ apply(spec, x))) <= 1e-15


@pytest.mark.parametrize("kind", [Kind.ISOTROPIC_TANH, Kind.ISOTROPIC_LEAKY_RELU])
def test_radial_kinds_orthogonal_equivariant(kind):
    rep = activations.check_orthogonal_equivariance(S(kind), 1000, rng_stream(5, "eq"))
    assert rep.max_abs_residual <= 1e-10 and rep.group is Group.ORTHOGONAL


def test_standard_tanh_not_orthogonal_equivariant():
    spec = S(Kind.STANDARD_TANH)
    assert activations.equivariance_witness(spec, Group.ORTHOGONAL) > 0.1
    assert activations.check_orthogonal_equivariance(spec, 1000, rng_stream(6, "eq")).max_abs_residual > 0.1


def test_radial_kinds_pass_the_witnesses():
    for kind in (Kind.ISOTROPIC_TANH, Kind.ISOTROPIC_LEAKY_RELU):
        assert activations.equivariance_witness(S(kind), Group.ORTHOGONAL) <= 1e-12


def test_checkers_reject_zero_trials():
    with pytest.raises(ValueError):
        activations.check_permutation_equivariance(S(Kind.STANDARD_TANH), 0, rng_stream(0))
    with pytest.raises(ValueError):
        activations.check_orthogonal_equivariance(S(Kind.STANDARD_TANH), 0, rng_stream(0))
