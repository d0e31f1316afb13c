import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from lipcert.linalg import (
    NonConvergence,
    NotPositiveDefinite,
    SpdFactor,
    _power_extremal,
    diag_quadratic,
    factor_spd,
    max_eig_sym,
    min_eig_sym,
    spd_solve,
)

from conftest import random_spd


class TestFactorSpd:
    def test_identity(self):
        F = factor_spd(np.eye(3))
        assert np.allclose(F.lower, np.eye(3))

    def test_hand_cholesky(self):
        # [[4,2],[2,3]] factors into [[2,0],[1,sqrt(2)]]
        F = factor_spd(np.array([[4.0, 2.0], [2.0, 3.0]]))
        assert np.allclose(F.lower, np.array([[2.0, 0.0], [1.0, math.sqrt(2.0)]]))

    def test_indefinite_reports_failing_pivot(self):
        # second pivot is 1 - 4 < 0
        with pytest.raises(NotPositiveDefinite) as exc:
            factor_spd(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert exc.value.index == 2

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            factor_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_tiny_pivot_rejected(self):
        # diagonal entry far below the scale-relative threshold
        S = np.diag([1.0, 1e-14])
        with pytest.raises(NotPositiveDefinite) as exc:
            factor_spd(S)
        assert exc.value.index == 2

    @pytest.mark.parametrize("n", [1, 2, 5, 11, 20])
    def test_reconstruct_roundtrip(self, n):
        rng = np.random.default_rng(n)
        for _ in range(20):
            S = random_spd(rng, n)
            F = factor_spd(S)
            assert np.allclose(F.reconstruct(), S, rtol=1e-10, atol=1e-12)
            assert np.all(np.diag(F.lower) > 0)


class TestSpdSolve:
    def test_identity_returns_rhs(self):
        F = SpdFactor.identity(4)
        B = np.arange(12.0).reshape(4, 3)
        assert np.allclose(spd_solve(F, B), B)

    def test_scalar_division(self):
        F = factor_spd(np.array([[2.0]]))
        assert np.allclose(spd_solve(F, np.array([6.0])), [3.0])

    def test_hand_inverse(self):
        F = factor_spd(np.array([[4.0, 2.0], [2.0, 3.0]]))
        X = spd_solve(F, np.eye(2))
        assert np.allclose(X, np.array([[0.375, -0.25], [-0.25, 0.5]]))

    def test_dimension_mismatch(self):
        F = factor_spd(np.eye(3))
        with pytest.raises(ValueError):
            spd_solve(F, np.ones(4))

    def test_residual_contract(self):
        rng = np.random.default_rng(17)
        for n in (3, 8, 25):
            S = random_spd(rng, n, scale=5.0)
            B = rng.standard_normal((n, 4))
            X = spd_solve(factor_spd(S), B)
            resid = np.linalg.norm(S @ X - B) / np.linalg.norm(B)
            assert resid <= 1e-9


class TestExtremalEigs:
    def test_identity(self):
        assert max_eig_sym(np.eye(4)) == pytest.approx(1.0)
        assert min_eig_sym(np.eye(4)) == pytest.approx(1.0)

    def test_diagonal(self):
        assert max_eig_sym(np.diag([1.0, 5.0, 3.0])) == pytest.approx(5.0)
        assert min_eig_sym(np.diag([-2.0, 7.0])) == pytest.approx(-2.0)

    def test_two_by_two(self):
        S = np.array([[2.0, 1.0], [1.0, 2.0]])
        assert max_eig_sym(S) == pytest.approx(3.0, rel=1e-9)
        assert min_eig_sym(S) == pytest.approx(1.0, rel=1e-9)

    @pytest.mark.parametrize("n", [2, 7, 30, 80, 300])
    def test_against_general_eigensolver(self, n):
        # oracle: generic (non-symmetric) eigensolver on the same matrix
        rng = np.random.default_rng(n)
        A = rng.standard_normal((n, n))
        S = 0.5 * (A + A.T)
        eigs = np.real(scipy.linalg.eig(S, right=False))
        assert max_eig_sym(S) == pytest.approx(eigs.max(), rel=1e-8)
        assert min_eig_sym(S) == pytest.approx(eigs.min(), rel=1e-8)

    def test_power_engine_matches_dense(self):
        rng = np.random.default_rng(0)
        for n in (5, 20, 60):
            S = random_spd(rng, n)
            exact = np.linalg.eigvalsh(S)[-1]
            assert _power_extremal(S, largest=True) == pytest.approx(exact, rel=1e-9)

    def test_power_engine_iteration_cap(self):
        # eigenvalues 1 and 1 - 1e-12: hopeless gap for power iteration
        S = np.diag([1.0, 1.0 - 1e-12])
        with pytest.raises(NonConvergence):
            _power_extremal(S, largest=True, max_iter=50)

    def test_lemma_shared_spectrum(self):
        # max eig of sym(W M^-1 W^T) equals max eig of W^T W M^-1 for SPD M
        rng = np.random.default_rng(5)
        for _ in range(30):
            m, n = rng.integers(1, 9, size=2)
            W = rng.standard_normal((m, n))
            M = random_spd(rng, n)
            P = W @ np.linalg.solve(M, W.T)
            lhs = max_eig_sym(0.5 * (P + P.T))
            general = scipy.linalg.eig(W.T @ W @ np.linalg.inv(M), right=False)
            rhs = np.real(general).max()
            assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-12)


class TestDiagQuadratic:
    def test_identity_pair(self):
        assert np.allclose(diag_quadratic(np.eye(3), SpdFactor.identity(3)), np.ones(3))

    def test_hand_values(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(diag_quadratic(W, SpdFactor.identity(2)), [5.0, 25.0])

    def test_scaled_identity(self):
        F = factor_spd(2.0 * np.eye(2))
        assert np.allclose(diag_quadratic(np.array([[1.0, 1.0]]), F), [1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            diag_quadratic(np.ones((2, 3)), SpdFactor.identity(2))

    def test_matches_explicit_product(self):
        # vectorized diagonal equals diag of the full W M^-1 W^T
        rng = np.random.default_rng(42)
        for _ in range(100):
            m, n = rng.integers(1, 10, size=2)
            W = rng.standard_normal((m, n))
            M = random_spd(rng, n)
            expected = np.diag(W @ np.linalg.solve(M, W.T))
            got = diag_quadratic(W, factor_spd(M))
            assert np.allclose(got, expected, atol=1e-12, rtol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_factor_roundtrip_property(n, seed):
    S = random_spd(np.random.default_rng(seed), n)
    F = factor_spd(S)
    assert np.allclose(F.reconstruct(), S, rtol=1e-10, atol=1e-12)
