import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from framenet.errors import DegenerateFrameError, InputError
from framenet.frames import (
    CoefficientVector,
    Frame,
    ScalingMap,
    SmoothnessWeights,
    analysis,
    coefficients_from_csv,
    coefficients_to_csv,
    dual_frame,
    frame_bounds,
    frame_from_json,
    frame_to_json,
    in_cube,
    inverse_Sr,
    sample_gamma,
    scale_Sr,
    sigma_Rr,
    smooth_norm,
    synthesis,
    torus_basis,
    torus_multi_indices,
    xi_1d,
    xi_eval,
)

ONES = Frame(np.array([[1.0, 1.0]]))
finite = st.floats(-10, 10, allow_nan=False)


def random_riesz(rng, k):
    A = rng.normal(size=(k, k)) + 3 * np.eye(k)
    return Frame(A, riesz=True)


# analysis / synthesis


def test_analysis_of_unit_vector_in_onb():
    f = Frame.orthonormal(4)
    np.testing.assert_array_equal(analysis(f, [1, 0, 0, 0]), [1, 0, 0, 0])


def test_analysis_of_redundant_pair():
    c = analysis(ONES, [3.0])
    np.testing.assert_array_equal(c, [3.0, 3.0])
    assert np.linalg.norm(c) == pytest.approx(3 * np.sqrt(2))


def test_analysis_of_zero_is_zero():
    np.testing.assert_array_equal(analysis(random_riesz(np.random.default_rng(0), 3), np.zeros(3)), 0)


def test_synthesis_examples():
    np.testing.assert_array_equal(synthesis(Frame.orthonormal(3), [0, 1, 0]), [0, 1, 0])
    np.testing.assert_array_equal(synthesis(ONES, [1.0, 2.0]), [3.0])


def test_coefficient_vector_rejects_nan():
    with pytest.raises(InputError):
        CoefficientVector([1.0, np.nan])


def test_analysis_dimension_mismatch():
    with pytest.raises(InputError):
        analysis(Frame.orthonormal(3), np.zeros(2))


@given(arrays(float, 5, elements=finite))
def test_onb_synthesis_inverts_analysis(x):
    f = Frame.orthonormal(5)
    np.testing.assert_allclose(synthesis(f, analysis(f, x)), x, atol=1e-12)


# duals and bounds


def test_dual_of_onb_is_itself():
    np.testing.assert_allclose(dual_frame(Frame.orthonormal(3)).vectors, np.eye(3))


def test_dual_of_redundant_pair_is_halves():
    np.testing.assert_allclose(dual_frame(ONES).vectors, [[0.5, 0.5]])


def test_frame_bounds_examples():
    assert frame_bounds(Frame.orthonormal(3)) == pytest.approx((1.0, 1.0))
    assert frame_bounds(ONES) == pytest.approx((np.sqrt(2), np.sqrt(2)))


def test_dual_bounds_are_reciprocal(rng):
    f = Frame(rng.normal(size=(3, 5)))
    lo, hi = frame_bounds(f)
    dlo, dhi = frame_bounds(dual_frame(f))
    assert dlo == pytest.approx(1 / hi, rel=1e-10)
    assert dhi == pytest.approx(1 / lo, rel=1e-10)


def test_frame_operator_norm_is_upper_bound_squared(rng):
    f = Frame(rng.normal(size=(4, 7)))
    assert np.linalg.norm(f.frame_operator, 2) == pytest.approx(frame_bounds(f)[1] ** 2, rel=1e-12)


def test_dual_of_dual_is_original(rng):
    f = Frame(rng.normal(size=(3, 6)))
    np.testing.assert_allclose(dual_frame(dual_frame(f)).vectors, f.vectors, atol=1e-10)


def test_degenerate_frame_is_reported():
    with pytest.raises(DegenerateFrameError):
        dual_frame(Frame(np.array([[1.0, 2.0], [2.0, 4.0]])))


def test_incomplete_frame_has_zero_lower_bound():
    assert frame_bounds(Frame(np.array([[1.0], [0.0]])))[0] == 0.0


@given(st.integers(1, 5), st.integers(0, 3), st.integers(0, 10_000))
def test_lower_bound_never_exceeds_upper(k, extra, seed):
    f = Frame(np.random.default_rng(seed).normal(size=(k, k + extra)))
    lo, hi = frame_bounds(f)
    assert lo <= hi + 1e-12


def test_frame_json_round_trip(rng):
    f = Frame(rng.normal(size=(2, 3)), metadata={"kind": "test"})
    g = frame_from_json(frame_to_json(f))
    np.testing.assert_array_equal(g.vectors, f.vectors)
    assert g.metadata == {"kind": "test"}


# torus basis


def test_univariate_xi_functions():
    x = np.linspace(0, 1, 7, endpoint=False)
    np.testing.assert_array_equal(xi_1d(0, x), 1.0)
    np.testing.assert_allclose(xi_1d(2, x), np.sqrt(2) * np.cos(2 * np.pi * x))
    np.testing.assert_allclose(xi_1d(1, x), np.sqrt(2) * np.sin(2 * np.pi * x))


def test_xi_discrete_orthonormality():
    frame, _ = torus_basis(2, 3.0)
    x = np.arange(64) / 64
    pts = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
    Phi = np.stack([xi_eval(j, pts) for j in frame.metadata["indices"]], axis=1)
    np.testing.assert_allclose(Phi.T @ Phi / len(pts), np.eye(Phi.shape[1]), atol=1e-12)


def test_zero_mode_has_unit_weight():
    frame, theta = torus_basis(2, 2.0)
    assert frame.metadata["indices"][0] == [0, 0]
    assert theta.theta[0] == 1.0


def test_torus_enumeration_order():
    assert torus_multi_indices(2, 1.5) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert len(torus_multi_indices(1, 4.0)) == 5


def test_theta_monotone_and_harmonic_decay():
    _, theta = torus_basis(2, 20.0)
    t = theta.theta
    assert np.all(t > 0) and np.all(np.diff(t) <= 0)
    ratio = t * np.arange(1, t.size + 1)
    # frozen on this case: theta_i * i stays within [1/c, c]
    c = 4.0
    assert ratio.min() >= 1 / c and ratio.max() <= c


def test_n_modes_truncation_and_error():
    frame, _ = torus_basis(2, 3.0, n_modes=5)
    assert frame.size == 5
    with pytest.raises(InputError):
        torus_basis(2, 1.0, n_modes=50)


# scaling and sampling


def _smap(k, R=0.7, r=1.5):
    return ScalingMap(R, r, SmoothnessWeights(1.0 / np.arange(1, k + 1)))


def test_sigma_zero_and_unit_vector():
    f, smap = Frame.orthonormal(4), _smap(4)
    np.testing.assert_array_equal(sigma_Rr(smap, f, np.zeros(4)), 0)
    np.testing.assert_allclose(sigma_Rr(smap, f, [1, 0, 0, 0]), [0.7, 0, 0, 0])


def test_sigma_rejects_points_outside_cube():
    with pytest.raises(InputError):
        sigma_Rr(_smap(2), Frame.orthonormal(2), [1.5, 0])


def test_scale_examples():
    smap = _smap(3)
    u, clamped = scale_Sr(smap, np.zeros(3))
    np.testing.assert_array_equal(u, 0)
    assert not clamped
    u, _ = scale_Sr(smap, smap.radii(3))
    np.testing.assert_allclose(u, 1.0)


def test_scale_clamps_and_flags():
    smap = _smap(2)
    u, clamped = scale_Sr(smap, [3 * smap.radii(2)[0], 0.0])
    assert clamped and u[0] == 1.0


@given(arrays(float, 4, elements=st.floats(-1, 1)))
def test_scale_inverts_inverse_scale(u):
    smap = _smap(4)
    np.testing.assert_allclose(scale_Sr(smap, inverse_Sr(smap, u))[0], u, atol=1e-15)


@given(arrays(float, 3, elements=st.floats(-1, 1)), st.integers(0, 1000))
def test_encode_of_sigma_recovers_cube_point(u, seed):
    f = random_riesz(np.random.default_rng(seed), 3)
    smap = _smap(3)
    x = sigma_Rr(smap, f, u)
    assert in_cube(x, smap, f.dual)
    back, _ = scale_Sr(smap, analysis(f.dual, x))
    np.testing.assert_allclose(back, u, atol=1e-12)


def test_in_cube_examples():
    f, smap = Frame.orthonormal(3), _smap(3)
    assert in_cube(np.zeros(3), smap, f.dual)
    assert not in_cube([2 * smap.radii(1)[0], 0, 0], smap, f.dual)


def test_gamma_samples_are_centered_and_reproducible():
    f, smap = random_riesz(np.random.default_rng(1), 3), _smap(3)
    x, u = sample_gamma(smap, f, 7, n=10_000, return_u=True)
    se = x.std(axis=0) / np.sqrt(len(x))
    assert np.all(np.abs(x.mean(axis=0)) <= 3 * se)
    assert all(in_cube(row, smap, f.dual) for row in x[:200])
    np.testing.assert_array_equal(sample_gamma(smap, f, 7, n=10_000), x)


def test_smooth_norm_examples():
    f = Frame.orthonormal(3)
    theta = SmoothnessWeights(np.array([0.5, 0.25, 0.125]))
    assert smooth_norm(np.zeros(3), 1.0, theta, f) == 0.0
    assert smooth_norm([3.0, 4.0, 0.0], 0.0, theta, f) == pytest.approx(5.0)
    assert smooth_norm([1.0, 0.0, 0.0], 2.0, theta, f) == pytest.approx(0.5 ** -2)


def test_scaling_rejects_small_r():
    with pytest.raises(InputError):
        ScalingMap(1.0, 0.5, SmoothnessWeights(np.ones(2)))


def test_coefficients_csv_round_trip(tmp_path, rng):
    rows = rng.normal(size=(4, 3))
    coefficients_to_csv(rows, tmp_path / "c.csv")
    np.testing.assert_array_equal(coefficients_from_csv(tmp_path / "c.csv"), rows)
