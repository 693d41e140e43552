import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prunecert.linalg import (
    PowerIterationError,
    SingularMatrixError,
    as_matrix,
    as_vector,
    auto_damping,
    damped_inverse,
    frobenius_norm,
    gram,
    spectral_norm,
)


def _spectral_oracle_2x2(a):
    """Largest singular value of a 2x2 matrix straight from the
    characteristic polynomial of A^T A."""
    ata = a.T @ a
    tr = ata[0, 0] + ata[1, 1]
    det = ata[0, 0] * ata[1, 1] - ata[0, 1] * ata[1, 0]
    lam_max = (tr + math.sqrt(tr * tr - 4.0 * det)) / 2.0
    return math.sqrt(lam_max)


class TestValidation:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            as_matrix([[1.0, float("nan")]])
        with pytest.raises(ValueError):
            as_vector([float("inf")])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            as_matrix(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            as_vector([])


class TestSpectralNorm:
    def test_identity(self):
        assert spectral_norm(np.eye(3)) == pytest.approx(1.0, abs=1e-12)

    def test_diagonal(self):
        assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, abs=1e-12)

    def test_2x2_hand_oracle(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        expected = _spectral_oracle_2x2(a)
        assert expected == pytest.approx(5.4649857, abs=1e-6)
        assert spectral_norm(a) == pytest.approx(expected, rel=1e-9)

    def test_zero_matrix(self):
        assert spectral_norm(np.zeros((4, 2))) == 0.0

    def test_rectangular_matches_transpose(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(7, 3))
        assert spectral_norm(a) == pytest.approx(spectral_norm(a.T), rel=1e-9)

    def test_nonconvergence_raises_with_last_estimate(self):
        with pytest.raises(PowerIterationError) as err:
            spectral_norm(np.diag([3.0, 1.0]), max_iter=1)
        assert err.value.last_estimate >= 0.0
        assert err.value.last_vector is not None

    def test_agrees_with_svd_oracle_on_random_matrices(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            rows = int(rng.integers(1, 65))
            cols = int(rng.integers(1, 65))
            a = rng.normal(size=(rows, cols))
            truth = float(np.linalg.svd(a, compute_uv=False)[0])
            est = spectral_norm(a)
            assert abs(est - truth) / max(truth, 1.0) < 1e-6

    def test_repeated_top_singular_value_converges(self):
        # orthogonal matrix: every singular value is 1
        q, _ = np.linalg.qr(np.random.default_rng(7).normal(size=(8, 8)))
        assert spectral_norm(q) == pytest.approx(1.0, rel=1e-9)

    def test_at_most_frobenius(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a = rng.normal(size=(int(rng.integers(1, 12)), int(rng.integers(1, 12))))
            assert spectral_norm(a) <= frobenius_norm(a) * (1.0 + 1e-9)

    @given(st.floats(min_value=-100, max_value=100, allow_nan=False))
    @settings(max_examples=50, deadline=None)
    def test_scaling_homogeneity(self, c):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        base = spectral_norm(a)
        assert spectral_norm(c * a) == pytest.approx(abs(c) * base, rel=2e-10, abs=1e-12)


class TestFrobeniusNorm:
    def test_zero(self):
        assert frobenius_norm(np.zeros((3, 3))) == 0.0

    def test_identity(self):
        assert frobenius_norm(np.eye(2)) == pytest.approx(math.sqrt(2.0), abs=1e-15)

    def test_three_four_five(self):
        assert frobenius_norm([[3.0, 4.0]]) == 5.0


class TestGram:
    def test_identity(self):
        np.testing.assert_allclose(gram(np.eye(2)), np.diag([2.0, 2.0]))

    def test_diagonal_squares_doubled(self):
        np.testing.assert_allclose(gram([[1.0, 0.0], [0.0, 2.0]]), np.diag([2.0, 8.0]))

    def test_symmetric_psd_on_random_input(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 5))
        g = gram(x)
        np.testing.assert_array_equal(g, g.T)
        # oracle eigendecomposition confirms PSD
        assert np.linalg.eigvalsh(g).min() >= -1e-10
        # Rayleigh probes stay nonnegative
        for _ in range(200):
            v = rng.normal(size=3)
            assert v @ g @ v >= -1e-10

    def test_matches_definition(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 7))
        np.testing.assert_allclose(gram(x), 2.0 * x @ x.T, rtol=1e-13, atol=1e-13)


class TestDampedInverse:
    def test_identity_no_damping(self):
        np.testing.assert_allclose(damped_inverse(np.eye(3), 0.0), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(
            damped_inverse(np.diag([2.0, 8.0]), 0.0), np.diag([0.5, 0.125])
        )

    def test_rank_deficient_without_damping_raises(self):
        h = gram(np.array([[1.0], [1.0]]))  # rank 1
        with pytest.raises(SingularMatrixError):
            damped_inverse(h, 0.0)

    def test_rank_deficient_with_damping_succeeds(self):
        h = gram(np.array([[1.0], [1.0]]))
        inv = damped_inverse(h, 1e-3)
        np.testing.assert_allclose(
            inv @ (h + 1e-3 * np.eye(2)), np.eye(2), atol=1e-6
        )

    def test_inverse_residual_on_well_conditioned(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            d = int(rng.integers(1, 10))
            x = rng.normal(size=(d, d + 3))
            h = gram(x)
            lam = auto_damping(h)
            inv = damped_inverse(h, lam)
            resid = inv @ (h + lam * np.eye(d)) - np.eye(d)
            assert np.abs(resid).max() < 1e-8

    def test_output_symmetric(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(5, 9))
        inv = damped_inverse(gram(x), 0.0)
        assert np.abs(inv - inv.T).max() <= 1e-10

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            damped_inverse(np.array([[1.0, 2.0], [0.0, 1.0]]), 0.0)

    def test_rejects_negative_damping(self):
        with pytest.raises(ValueError):
            damped_inverse(np.eye(2), -1.0)


class TestAutoDamping:
    def test_scales_with_trace(self):
        h = np.diag([2.0, 8.0])
        assert auto_damping(h) == pytest.approx(1e-8 * 10.0 / 2.0)
