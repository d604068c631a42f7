import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline as ScipyBSpline

from vcm.basis import BSplineBasis, basis_matrix, evaluate_basis, make_uniform_basis


def naive_bspline_value(x, degree, i, knots, t_max):
    """Textbook recursion, scalar; the last span is closed at the right end."""
    if degree == 0:
        if knots[i] <= x < knots[i + 1]:
            return 1.0
        if x == t_max and knots[i] < knots[i + 1] == t_max:
            return 1.0
        return 0.0
    left = 0.0
    if knots[i + degree] > knots[i]:
        left = (x - knots[i]) / (knots[i + degree] - knots[i]) \
            * naive_bspline_value(x, degree - 1, i, knots, t_max)
    right = 0.0
    if knots[i + degree + 1] > knots[i + 1]:
        right = (knots[i + degree + 1] - x) / (knots[i + degree + 1] - knots[i + 1]) \
            * naive_bspline_value(x, degree - 1, i + 1, knots, t_max)
    return left + right


def naive_basis_vector(basis, x):
    knots = basis.knot_vector()
    return np.array([naive_bspline_value(x, basis.order, i, knots, basis.t_max)
                     for i in range(basis.M)])


class TestMakeUniformBasis:
    def test_two_endpoint_hats(self):
        b = make_uniform_basis(0.0, 1.0, M=2, order=1)
        assert b.interior_knots == ()
        assert evaluate_basis(b, 0.0)[0] == 1.0
        assert evaluate_basis(b, 1.0)[1] == 1.0

    def test_three_hats_midpoint(self):
        b = make_uniform_basis(0.0, 1.0, M=3, order=1)
        assert b.interior_knots == (0.5,)
        assert evaluate_basis(b, 0.5)[1] == 1.0
        assert evaluate_basis(b, 0.25)[1] == pytest.approx(0.5)

    def test_m_convention(self):
        # M = interior knots + order + 1
        for order in (0, 1, 2, 3):
            for M in range(order + 1, order + 7):
                b = make_uniform_basis(-2.0, 3.0, M=M, order=order)
                assert b.M == M
                assert len(b.interior_knots) == M - order - 1

    def test_errors(self):
        with pytest.raises(ValueError):
            make_uniform_basis(0.0, 1.0, M=1, order=1)
        with pytest.raises(ValueError):
            make_uniform_basis(1.0, 1.0, M=3, order=1)
        with pytest.raises(ValueError):
            make_uniform_basis(0.0, 1.0, M=3, order=-1)

    def test_constant_basis(self):
        b = make_uniform_basis(0.0, 1.0, M=1, order=0)
        npt.assert_array_equal(evaluate_basis(b, 0.3), [1.0])


class TestEvaluateBasis:
    def test_hat_values(self):
        b = make_uniform_basis(0.0, 1.0, M=3, order=1)
        npt.assert_allclose(evaluate_basis(b, 0.5), [0.0, 1.0, 0.0])
        npt.assert_allclose(evaluate_basis(b, 0.75), [0.0, 0.5, 0.5])

    def test_clamping(self):
        b = make_uniform_basis(0.0, 1.0, M=4, order=1)
        npt.assert_array_equal(evaluate_basis(b, -3.0), evaluate_basis(b, 0.0))
        npt.assert_array_equal(evaluate_basis(b, 7.0), evaluate_basis(b, 1.0))

    @settings(max_examples=50, deadline=None)
    @given(t=st.floats(0.0, 1.0), M=st.integers(2, 9), order=st.integers(0, 3))
    def test_matches_naive_recursion(self, t, M, order):
        if M < order + 1:
            M = order + 1
        b = make_uniform_basis(0.0, 1.0, M=M, order=order)
        npt.assert_allclose(evaluate_basis(b, t), naive_basis_vector(b, t), atol=1e-13)

    @settings(max_examples=30, deadline=None)
    @given(t=st.floats(0.0, 1.0), M=st.integers(4, 10), order=st.integers(1, 3))
    def test_matches_scipy(self, t, M, order):
        b = make_uniform_basis(0.0, 1.0, M=M, order=order)
        knots = b.knot_vector()
        ours = evaluate_basis(b, t)
        theirs = np.array([
            ScipyBSpline.basis_element(knots[i:i + order + 2], extrapolate=False)(t)
            for i in range(M)])
        theirs = np.nan_to_num(theirs)
        if t == 1.0:  # scipy's half-open convention zeroes the right endpoint
            theirs[-1] = 1.0
        npt.assert_allclose(ours, theirs, atol=1e-12)

    def test_partition_of_unity(self):
        b = make_uniform_basis(0.0, 1.0, M=10, order=1)
        t = np.random.default_rng(0).uniform(0.0, 1.0, 1000)
        sums = basis_matrix(b, t).sum(axis=1)
        assert np.abs(sums - 1.0).max() < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(t=st.floats(0.0, 1.0), M=st.integers(2, 12), order=st.integers(0, 3))
    def test_partition_of_unity_property(self, t, M, order):
        if M < order + 1:
            M = order + 1
        b = make_uniform_basis(0.0, 1.0, M=M, order=order)
        v = evaluate_basis(b, t)
        assert abs(v.sum() - 1.0) < 1e-12
        assert np.all(v >= 0.0)

    def test_local_support_order_one(self):
        b = make_uniform_basis(0.0, 1.0, M=8, order=1)
        for t in np.random.default_rng(1).uniform(0.0, 1.0, 200):
            assert np.count_nonzero(evaluate_basis(b, t)) <= 2

    def test_local_support_zero_outside(self):
        b = make_uniform_basis(0.0, 1.0, M=6, order=2)
        knots = b.knot_vector()
        grid = np.linspace(0.0, 1.0, 301)
        mat = basis_matrix(b, grid)
        for i in range(b.M):
            outside = (grid < knots[i]) | (grid > knots[i + b.order + 1])
            assert np.all(mat[outside, i] == 0.0)


class TestBasisMatrix:
    def test_rows_equal_pointwise_eval(self):
        b = make_uniform_basis(0.0, 2.0, M=7, order=2)
        times = np.random.default_rng(3).uniform(0.0, 2.0, 40)
        mat = basis_matrix(b, times)
        for j, t in enumerate(times):
            npt.assert_array_equal(mat[j], evaluate_basis(b, t))

    def test_unit_rows_at_knots_order_one(self):
        b = make_uniform_basis(0.0, 1.0, M=5, order=1)
        knots = [0.0, *b.interior_knots, 1.0]
        mat = basis_matrix(b, knots)
        npt.assert_array_equal(mat, np.eye(5))

    def test_single_time_point(self):
        b = make_uniform_basis(0.0, 1.0, M=4, order=1)
        mat = basis_matrix(b, [0.3])
        assert mat.shape == (1, 4)
        npt.assert_array_equal(mat[0], evaluate_basis(b, 0.3))

    def test_linear_reproduction(self):
        # order-1 splines with knot-ordinate coefficients reproduce t exactly
        b = make_uniform_basis(0.0, 1.0, M=6, order=1)
        knots = np.array([0.0, *b.interior_knots, 1.0])
        grid = np.linspace(0.0, 1.0, 257)
        curve = basis_matrix(b, grid) @ knots
        assert np.abs(curve - grid).max() < 1e-12


class TestBSplineBasisValidation:
    def test_knots_must_increase(self):
        with pytest.raises(ValueError):
            BSplineBasis(order=1, interior_knots=(0.6, 0.4), t_min=0.0, t_max=1.0)

    def test_knots_inside_interval(self):
        with pytest.raises(ValueError):
            BSplineBasis(order=1, interior_knots=(0.0,), t_min=0.0, t_max=1.0)

    def test_immutable(self):
        b = make_uniform_basis(0.0, 1.0, M=3, order=1)
        with pytest.raises(Exception):
            b.order = 2
