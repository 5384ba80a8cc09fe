import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slang.errors import ConfigError, NumericError
from slang.linalg import (
    LowRankDiagMatrix,
    diag_of_outer,
    fast_eig,
    logdet_and_trace_inverse,
    sample,
    symmetric_factor_apply,
    woodbury_solve,
)

from conftest import random_lowrank

dims = st.integers(2, 30)


@st.composite
def lowrank_cases(draw):
    dim = draw(dims)
    rank = draw(st.integers(0, min(5, dim)))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    return random_lowrank(rng, dim, rank), rng


class TestLowRankDiagMatrix:
    def test_isotropic_is_scaled_identity(self):
        a = LowRankDiagMatrix.isotropic(4, 2.5, rank=2)
        np.testing.assert_array_equal(a.to_dense(), 2.5 * np.eye(4))
        assert a.rank == 2 and a.dim == 4

    def test_nonpositive_diag_rejected(self):
        with pytest.raises(NumericError):
            LowRankDiagMatrix(np.zeros((3, 1)), np.array([1.0, 0.0, 1.0]))

    def test_rank_above_dim_rejected(self):
        with pytest.raises(ConfigError):
            LowRankDiagMatrix(np.ones((2, 3)), np.ones(2))

    def test_arrays_are_read_only(self, rng):
        a = random_lowrank(rng, 5, 2)
        with pytest.raises(ValueError):
            a.diag[0] = 3.0

    def test_matvec_matches_dense(self, rng):
        a = random_lowrank(rng, 7, 3)
        x = rng.standard_normal(7)
        np.testing.assert_allclose(a.matvec(x), a.to_dense() @ x, rtol=1e-13)


class TestWoodbury:
    def test_pure_diagonal(self):
        a = LowRankDiagMatrix(np.zeros((2, 0)), np.array([2.0, 4.0]))
        np.testing.assert_allclose(woodbury_solve(a, np.array([2.0, 4.0])), [1.0, 1.0])

    def test_rank_one_hand_example(self):
        # [[2, 1], [1, 2]] x = [3, 3]  =>  x = [1, 1]
        a = LowRankDiagMatrix(np.ones((2, 1)), np.ones(2))
        np.testing.assert_allclose(woodbury_solve(a, np.array([3.0, 3.0])), [1.0, 1.0], rtol=1e-14)

    @given(lowrank_cases())
    def test_matches_dense_solve(self, case):
        a, rng = case
        g = rng.standard_normal(a.dim)
        ref = np.linalg.solve(a.to_dense(), g)
        err = np.linalg.norm(woodbury_solve(a, g) - ref) / np.linalg.norm(ref)
        assert err <= 1e-10

    def test_block_right_hand_side(self, rng):
        a = random_lowrank(rng, 9, 3)
        g = rng.standard_normal((9, 4))
        np.testing.assert_allclose(woodbury_solve(a, g), np.linalg.solve(a.to_dense(), g), rtol=1e-10)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ConfigError):
            woodbury_solve(random_lowrank(rng, 4, 1), np.ones(5))


class TestSymmetricFactor:
    def test_diagonal_case(self):
        a = LowRankDiagMatrix(np.zeros((2, 0)), np.array([4.0, 9.0]))
        np.testing.assert_allclose(symmetric_factor_apply(a, np.array([1.0, 1.0])), [0.5, 1 / 3])

    @given(lowrank_cases())
    def test_factor_squares_to_inverse(self, case):
        a, _ = case
        f = symmetric_factor_apply(a, np.eye(a.dim))
        assert np.max(np.abs(f @ f.T - np.linalg.inv(a.to_dense()))) <= 1e-8

    def test_zero_columns_are_ignored(self, rng):
        u = np.zeros((6, 3))
        u[:, 1] = rng.standard_normal(6)
        a = LowRankDiagMatrix(u, rng.uniform(0.5, 2, 6))
        f = symmetric_factor_apply(a, np.eye(6))
        np.testing.assert_allclose(f @ f.T, np.linalg.inv(a.to_dense()), atol=1e-12)

    def test_dependent_columns_raise(self, rng):
        col = rng.standard_normal(5)
        a = LowRankDiagMatrix(np.column_stack([col, 2 * col]), np.ones(5))
        with pytest.raises(NumericError):
            symmetric_factor_apply(a, np.eye(5))


class TestSample:
    def test_same_seed_same_draw(self, rng):
        a = random_lowrank(rng, 6, 2)
        mean = rng.standard_normal(6)
        np.testing.assert_array_equal(sample(mean, a, 5), sample(mean, a, 5))

    def test_huge_precision_collapses_to_mean(self):
        a = LowRankDiagMatrix(np.zeros((3, 1)), np.full(3, 1e20))
        mean = np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(sample(mean, a, 0), mean, atol=1e-9)

    def test_empirical_covariance_within_five_standard_errors(self):
        rng = np.random.default_rng(3)
        a = random_lowrank(rng, 4, 2)
        mean = rng.standard_normal(4)
        n = 200_000
        draws = sample(mean, a, rng, n_samples=n)
        cov = np.linalg.inv(a.to_dense())
        emp = np.cov(draws.T)
        # Var of a sample covariance entry: (S_ii S_jj + S_ij^2) / n
        se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
        assert np.all(np.abs(emp - cov) <= 5 * se)
        assert np.all(np.abs(draws.mean(axis=0) - mean) <= 5 * np.sqrt(np.diag(cov) / n))


class TestLogdetTrace:
    @given(lowrank_cases())
    def test_matches_dense(self, case):
        a, _ = case
        dense = a.to_dense()
        logdet, trace = logdet_and_trace_inverse(a)
        ref_logdet = np.linalg.slogdet(dense)[1]
        ref_trace = np.trace(np.linalg.inv(dense))
        assert abs(logdet - ref_logdet) <= 1e-10 * max(1.0, abs(ref_logdet))
        assert abs(trace - ref_trace) <= 1e-10 * ref_trace

    def test_identity(self):
        logdet, trace = logdet_and_trace_inverse(LowRankDiagMatrix.isotropic(5, 1.0, 2))
        assert logdet == pytest.approx(0.0, abs=1e-15) and trace == pytest.approx(5.0)


class TestFastEig:
    def test_rank_zero(self, rng):
        out = fast_eig(rng.standard_normal((5, 3)), 0)
        assert out.vectors.shape == (5, 0) and out.values.shape == (0,)

    def test_recovers_known_spectrum(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((8, 3)))
        cols = q * np.sqrt([9.0, 4.0, 1.0])
        out = fast_eig(cols, 2, rng=1)
        np.testing.assert_allclose(out.values, [9.0, 4.0], rtol=1e-12)

    @given(st.integers(2, 40), st.integers(1, 5), st.integers(0, 2**31 - 1))
    def test_values_match_dense_when_sketch_covers_rank(self, dim, ell, seed):
        rng = np.random.default_rng(seed)
        ell = min(ell, dim)
        k = min(ell + 3, dim)
        cols = rng.standard_normal((dim, k))
        out = fast_eig(cols, ell, oversample=3, rng=rng)
        ref = np.sort(np.linalg.eigvalsh(cols @ cols.T))[::-1][:ell]
        np.testing.assert_allclose(out.values, ref, rtol=1e-6)
        np.testing.assert_allclose(out.vectors.T @ out.vectors, np.eye(ell), atol=1e-10)

    def test_accepts_list_of_vectors(self, rng):
        cols = rng.standard_normal((6, 4))
        a = fast_eig(cols, 2, rng=0)
        b = fast_eig(list(cols.T), 2, rng=0)
        np.testing.assert_array_equal(a.values, b.values)

    def test_rank_too_large(self, rng):
        with pytest.raises(ConfigError):
            fast_eig(rng.standard_normal((4, 2)), 3)

    def test_values_sorted_and_nonnegative(self, rng):
        out = fast_eig(rng.standard_normal((10, 6)), 4, rng=2)
        assert np.all(np.diff(out.values) <= 0) and np.all(out.values >= 0)


def test_diag_of_outer():
    u = np.array([[1.0, 2.0], [3.0, 0.0]])
    np.testing.assert_array_equal(diag_of_outer(u), np.diag(u @ u.T))
