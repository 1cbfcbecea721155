import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_array_equal

from apa_lab.signals import SignalModel, arma22, autocorrelation, shifted_corr_matrix
from apa_lab.structured import (
    ConsistencyError,
    MAX_J,
    decompose_shifted,
    enumerate_index_lists,
    imonio,
    in_C,
    in_F,
    is_valid_index_list,
    masked_identity,
    membership_tol,
    scalar_expansion_identity,
)


@st.composite
def sized(draw, lo=1):
    K = draw(st.integers(lo, 8))
    seed = draw(st.integers(0, 2**32 - 1))
    return K, np.random.default_rng(seed)


class TestShiftMatrices:
    def test_examples(self):
        assert_array_equal(imonio(2, 1), [[0, 1], [0, 0]])
        assert_array_equal(imonio(3, 0), np.eye(3))
        assert_array_equal(imonio(3, 3), np.zeros((3, 3)))
        assert_array_equal(imonio(3, -5), np.zeros((3, 3)))

    @given(K=st.integers(1, 16), m=st.integers(-20, 20))
    def test_count_of_ones(self, K, m):
        A = imonio(K, m)
        assert A.sum() == max(0, K - abs(m))
        q, p = np.nonzero(A)
        assert np.all(p - q == m)

    def test_shifts_rows(self):
        R = np.arange(16.0).reshape(4, 4)
        assert_array_equal((imonio(4, 1) @ R)[:3], R[1:])
        assert_array_equal((imonio(4, -1) @ R)[1:], R[:3])

    def test_bounds(self):
        with pytest.raises(ValueError):
            imonio(0, 0)
        with pytest.raises(ValueError):
            imonio(17, 0)

    def test_masked_identity(self):
        assert_array_equal(masked_identity(3, 0), np.eye(3))
        assert_array_equal(masked_identity(3, 2), np.diag([0, 0, 1.0]))
        assert np.linalg.matrix_rank(masked_identity(5, 2)) == 3
        with pytest.raises(ValueError):
            masked_identity(3, 4)

    @given(K=st.integers(2, 16), data=st.data())
    def test_inverse_pair(self, K, data):
        m = data.draw(st.integers(1, K - 1))
        assert_array_equal(imonio(K, -m) @ imonio(K, m), masked_identity(K, m))

    @given(K=st.integers(2, 16), data=st.data())
    def test_composition(self, K, data):
        m = data.draw(st.integers(1, K - 1))
        n = data.draw(st.integers(1, K - 1))
        assert_array_equal(imonio(K, m) @ imonio(K, n), imonio(K, m + n))


class TestMembership:
    def test_trivial_cases(self):
        K = 4
        for m in range(K + 1):
            assert in_F(np.zeros((K, K)), m)
            assert in_C(np.zeros((K, K)), m)
        assert in_F(np.eye(K), K)
        assert not any(in_F(np.eye(K), m) for m in range(K))
        assert in_C(np.eye(K), 0)
        assert not any(in_C(np.eye(K), m) for m in range(1, K + 1))

    def test_tolerance(self):
        A = np.eye(3)
        A[2, 2] = 0.0
        A[2, 0] = 5e-13
        assert in_F(A, 2)
        assert not in_F(A, 2, tol=0.0)
        assert membership_tol(np.full((2, 2), 1e3)) == pytest.approx(1e-9)

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            in_F(np.zeros((2, 3)), 1)
        with pytest.raises(ValueError):
            in_C(np.zeros((3, 3)), 4)

    @given(sized())
    @settings(max_examples=100)
    def test_closure(self, case):
        K, rng = case
        n, m = rng.integers(0, K + 1, size=2)
        A = rng.standard_normal((K, K))
        A[n:] = 0
        B = rng.standard_normal((K, K))
        B[:, :m] = 0
        R = rng.standard_normal((K, K))
        assert in_F(A @ R, n)
        assert in_C(R @ B, m)
        assert in_F(A @ R @ B, n) and in_C(A @ R @ B, m)

    @given(sized(lo=2))
    @settings(max_examples=100)
    def test_down_shift_grows_class(self, case):
        K, rng = case
        m = int(rng.integers(0, K + 1))
        j = -int(rng.integers(1, K))
        A = rng.standard_normal((K, K))
        A[m:] = 0
        assert in_F(imonio(K, j) @ A, min(K, m - j))

    @given(sized())
    @settings(max_examples=100)
    def test_intersection_is_strictly_upper(self, case):
        K, rng = case
        m = int(rng.integers(0, K + 1))
        R = rng.standard_normal((K, K))
        R[m:] = 0
        R[:, :m] = 0
        assert in_F(R, m) and in_C(R, m)
        assert not np.any(np.tril(R))


class TestDecomposition:
    @pytest.mark.parametrize("K", [2, 4, 8])
    def test_white_residual_zero(self, K):
        r = autocorrelation(SignalModel.white(1.7), 2 * K)
        for m in range(1, K):
            M_m = decompose_shifted(shifted_corr_matrix(r, K, 0), shifted_corr_matrix(r, K, -m), m)
            assert not np.any(M_m)

    def test_ar1_k2(self):
        a = 0.6
        r = autocorrelation(SignalModel.ar1(a), 4)
        M_1 = decompose_shifted(shifted_corr_matrix(r, 2, 0), shifted_corr_matrix(r, 2, -1), 1)
        np.testing.assert_allclose(M_1, [[r(1), r(2)], [0.0, 0.0]])
        assert r(2) == pytest.approx(a * a / (1 - a * a))

    @pytest.mark.parametrize("model", [SignalModel.ar1(0.95), arma22()])
    def test_reconstruction(self, model):
        r = autocorrelation(model, 16)
        for K in range(2, 9):
            R = shifted_corr_matrix(r, K, 0)
            for m in range(1, K):
                R_shift = shifted_corr_matrix(r, K, -m)
                M_m = decompose_shifted(R, R_shift, m)
                assert in_F(M_m, m)
                np.testing.assert_allclose(imonio(K, -m) @ R + M_m, R_shift, rtol=0, atol=1e-12 * r(0))

    def test_inconsistent_inputs(self):
        r1 = autocorrelation(SignalModel.ar1(0.9), 8)
        r2 = autocorrelation(SignalModel.ar1(0.3), 8)
        with pytest.raises(ConsistencyError):
            decompose_shifted(shifted_corr_matrix(r1, 4, 0), shifted_corr_matrix(r2, 4, -1), 1)

    def test_bad_shift(self):
        R = np.eye(3)
        with pytest.raises(ValueError):
            decompose_shifted(R, R, 0)
        with pytest.raises(ValueError):
            decompose_shifted(R, R, 3)


class TestIndexLists:
    def test_small_cases(self):
        assert enumerate_index_lists(10, 2) == [[9]]
        assert sorted(map(tuple, enumerate_index_lists(10, 3))) == [(8,), (9,), (9, 8)]

    @pytest.mark.parametrize("j", range(2, 11))
    def test_count_and_validity(self, j):
        i = 20
        lists = enumerate_index_lists(i, j)
        assert len(lists) == 2 ** (j - 1) - 1
        assert len({tuple(x) for x in lists}) == len(lists)
        assert all(is_valid_index_list(x, i, j) for x in lists)

    def test_invalid_lists(self):
        assert not is_valid_index_list([], 10, 3)
        assert not is_valid_index_list([8, 9], 10, 3)
        assert not is_valid_index_list([9, 8, 7], 10, 3)
        assert not is_valid_index_list([10], 10, 3)
        assert not is_valid_index_list([7], 10, 3)
        assert not is_valid_index_list([8.5], 10, 3)

    def test_guards(self):
        with pytest.raises(ValueError):
            enumerate_index_lists(5, 1)
        with pytest.raises(ValueError):
            enumerate_index_lists(30, MAX_J + 1)


class TestExpansionIdentity:
    def test_extremes(self):
        assert scalar_expansion_identity(np.ones(10), 8, 4) == (0.0, 0.0)
        assert scalar_expansion_identity(np.zeros(10), 8, 4) == (1.0, 1.0)

    @given(j=st.integers(2, 8), seed=st.integers(0, 2**32 - 1))
    def test_random(self, j, seed):
        mu = np.random.default_rng(seed).uniform(0, 1, size=j + 3)
        lhs, rhs = scalar_expansion_identity(mu, j + 2, j)
        assert abs(lhs - rhs) <= 1e-12

    def test_mapping_input(self):
        mu = {99: 0.5, 98: 0.25}
        lhs, rhs = scalar_expansion_identity(mu, 100, 3)
        assert rhs == pytest.approx(0.375)
        assert lhs == pytest.approx(rhs, abs=1e-15)
