import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from privplane import ppp
from privplane.errors import EmptyInput
from privplane.formats import RECORD_DTYPE
from privplane.numerics import child_seed, rng_stream, sample_haar_orthogonal
from privplane.ppp import (
    Mode,
    PppConfig,
    angular_histogram,
    axis_concentration,
    chi_square_uniformity,
    enumerate_planes,
    run_ppp,
    subsample,
    subsample_size,
)
from privplane.verify import brute_force_records, projection_oracle_error


def _angles(theta, r=1.0):
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


# -- planes ------------------------------------------------------------------

@pytest.mark.parametrize("n,mode,count", [(3, Mode.COMBINATION, 3), (18, Mode.COMBINATION, 153), (18, Mode.PERMUTATION, 306), (24, Mode.COMBINATION, 276)])
def test_plane_counts(n, mode, count):
    assert len(enumerate_planes(np.eye(n), mode)) == count


def test_combination_pairs_are_ordered():
    assert [p.pair for p in enumerate_planes(np.eye(3))] == [(0, 1), (0, 2), (1, 2)]


def test_parallel_basis_vectors_skipped():
    B = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 0, 1.0]])
    assert [p.pair for p in enumerate_planes(B)] == [(0, 2), (1, 2)]


def test_basis_validation():
    with pytest.raises(ValueError):
        enumerate_planes([[2.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        enumerate_planes([[1.0, 0.0]])


def test_epsilon_validation():
    for eps in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            PppConfig(epsilon=eps)


# -- records -----------------------------------------------------------------

def test_axis_vector_in_two_planes():
    v = np.zeros((1, 3))
    v[0, 0] = 1.0
    rec, _ = run_ppp(v)
    assert [(int(r["i"]), int(r["j"])) for r in rec] == [(0, 1), (0, 2)]
    assert np.allclose(rec["ratio"], 1.0)
    assert np.allclose(rec["w"], [[1.0, 0.0], [1.0, 0.0]])


def test_diagonal_vector_in_all_three_planes():
    rec, _ = run_ppp(np.ones((1, 3)) / np.sqrt(3))
    assert len(rec) == 3
    assert np.allclose(rec["ratio"], np.sqrt(2 / 3), atol=1e-14)
    assert np.allclose(rec["ratio"], 0.8165, atol=1e-4)


def test_zero_vector_gives_no_records():
    rec, _ = run_ppp(np.zeros((2, 4)))
    assert len(rec) == 0 and rec.dtype == RECORD_DTYPE


def test_strict_threshold():
    # ratio exactly 0.6 / 1.0 against epsilon 0.6 is excluded
    v = np.array([[0.6, 0.0, 0.8]])
    rec, _ = run_ppp(v, PppConfig(epsilon=0.6))
    assert (0, 1) not in {(int(r["i"]), int(r["j"])) for r in rec}


def test_permutation_mode_mirrors_coordinates():
    v = np.array([[3.0, 4.0, 0.0]])
    rec, _ = run_ppp(v, PppConfig(mode="permutation"))
    by_pair = {(int(r["i"]), int(r["j"])): r["w"] for r in rec}
    assert np.allclose(by_pair[(0, 1)], [3, 4]) and np.allclose(by_pair[(1, 0)], [4, 3])


def test_records_sorted_canonically():
    V = rng_stream(1, "v").standard_normal((200, 6))
    rec, _ = run_ppp(V, PppConfig(epsilon=0.5))
    keys = list(zip(rec["i"], rec["j"], rec["sample"]))
    assert keys == sorted(keys)


def test_iter_records():
    rec, _ = run_ppp(np.eye(3)[:1])
    first = next(ppp.iter_records(rec))
    assert first.plane == (0, 1) and first.sample == 0 and first.ratio == pytest.approx(1.0)


@given(arrays(np.float64, (12, 5), elements=st.floats(-5, 5, allow_nan=False)), st.floats(0.3, 0.95))
def test_matches_brute_force_oracle(V, eps):
    mismatches, err = projection_oracle_error(V, eps)
    assert mismatches == 0 and err <= 1e-10


@given(st.integers(0, 2**32 - 1))
def test_rotational_covariance(seed):
    rng = rng_stream(seed, "cov")
    V = rng.standard_normal((30, 5))
    B = ppp.haar_basis(5, rng)
    R = sample_haar_orthogonal(5, rng)
    a, _ = run_ppp(V, PppConfig(epsilon=0.6), basis=B)
    b, _ = run_ppp(V @ R.T, PppConfig(epsilon=0.6), basis=B @ R.T)
    assert len(a) == len(b) == len(brute_force_records(V, B, 0.6))
    assert np.array_equal(a["sample"], b["sample"])
    assert np.allclose(a["w"], b["w"], atol=1e-10)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 0.9), st.floats(0.1, 0.9))
def test_epsilon_monotone(seed, e1, e2):
    lo, hi = sorted((e1, e2))
    V = rng_stream(seed, "mono").standard_normal((40, 6))
    a, _ = run_ppp(V, PppConfig(epsilon=lo))
    b, _ = run_ppp(V, PppConfig(epsilon=hi))
    keys_a = set(zip(a["i"], a["j"], a["sample"]))
    assert set(zip(b["i"], b["j"], b["sample"])) <= keys_a


def test_run_ppp_deterministic():
    V = rng_stream(4, "det").standard_normal((100, 8))
    a, _ = run_ppp(V)
    b, _ = run_ppp(V)
    assert a.tobytes() == b.tobytes()


# -- subsampling -------------------------------------------------------------

@pytest.mark.parametrize("m,k", [(1, 1), (100, 63), (1000, 501), (0, 0)])
def test_subsample_sizes(m, k):
    assert subsample_size(m, 0.9) == k


def test_subsample_respects_threshold():
    rec = np.zeros(50, dtype=RECORD_DTYPE)
    assert len(subsample(rec, 0.9, rng_stream(0), threshold=10_000)) == 50
    assert len(subsample(rec, 0.9, rng_stream(0))) == subsample_size(50, 0.9)


def test_subsample_deterministic_and_ordered():
    rec = np.zeros(400, dtype=RECORD_DTYPE)
    rec["sample"] = np.arange(400)
    a = subsample(rec, 0.9, rng_stream(child_seed(0, "subsample", 1, 0), "subsample"))
    b = subsample(rec, 0.9, rng_stream(child_seed(0, "subsample", 1, 0), "subsample"))
    assert np.array_equal(a, b) and np.all(np.diff(a["sample"]) > 0)


# -- concentration and uniformity -------------------------------------------

def test_axis_concentration_extremes():
    assert axis_concentration(_angles(np.array([0.0, np.pi / 2, np.pi, -np.pi / 2]))) == 1.0
    assert axis_concentration(_angles(np.full(4, np.pi / 4))) == 0.0


def test_axis_concentration_half_angle_edge():
    assert axis_concentration(_angles(np.deg2rad([10.0, 10.5]))) == 0.5


def test_axis_concentration_uniform_angles():
    theta = rng_stream(5, "theta").uniform(-np.pi, np.pi, 10_000)
    assert abs(axis_concentration(_angles(theta)) - 2 / 9) <= 0.02


def test_axis_concentration_empty():
    with pytest.raises(EmptyInput):
        axis_concentration(np.zeros((0, 2)))
    with pytest.raises(EmptyInput):
        axis_concentration(np.zeros((3, 2)))


def test_histogram_semi_axes_in_separate_bins():
    # bins of width 90 degrees starting at -180: each semi-axis pointing just inside a bin
    theta = np.array([-np.pi + 0.1, -np.pi / 2 + 0.1, 0.1, np.pi / 2 + 0.1])
    assert angular_histogram(_angles(theta), bins=4).tolist() == [1, 1, 1, 1]


def test_histogram_total_and_pi_edge():
    h = angular_histogram(_angles(np.array([np.pi, -np.pi, 0.0])), bins=36)
    assert h.sum() == 3 and h[-1] + h[0] == 2


def test_uniform_records_pass_chi_square():
    theta = rng_stream(6, "theta").uniform(-np.pi, np.pi, 100_000)
    u = chi_square_uniformity(angular_histogram(_angles(theta)))
    assert u.pvalue > 0.01 and u.dof == 35 and u.count == 100_000


def test_chi_square_known_value():
    u = chi_square_uniformity([10, 20, 30])
    assert u.statistic == pytest.approx(10.0)
    assert u.pvalue == pytest.approx(stats.chi2.sf(10.0, 2))


def test_chi_square_empty():
    with pytest.raises(EmptyInput):
        chi_square_uniformity(np.zeros(4))


def test_summary_contents():
    rec, planes = run_ppp(np.eye(3)[:2])
    doc = ppp.summary(rec, PppConfig(), len(planes), 2)
    assert doc["epsilon"] == 0.75 and doc["planes"] == 3 and doc["total_records"] == len(rec)
    assert sum(doc["per_plane"].values()) == len(rec)
