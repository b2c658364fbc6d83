import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mec.matkernel import (
    CodingConfig,
    EmbeddingBatch,
    MatrixError,
    SingularMatrixError,
    gram,
    log1p_series_coefficient,
    logdet_ipc,
    lu_factor_ipc,
    spectral_bound,
    trace_log_taylor,
)

from conftest import unit_batch


def gram_oracle(a, b):
    """Naive triple-loop a^T b."""
    d, m = a.shape
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            s = 0.0
            for k in range(d):
                s += a[k, i] * b[k, j]
            out[i, j] = s
    return out


def det_cofactor(a):
    """Recursive cofactor expansion along the first row."""
    n = a.shape[0]
    if n == 1:
        return a[0, 0]
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(a, 0, axis=0), j, axis=1)
        total += ((-1) ** j) * a[0, j] * det_cofactor(minor)
    return total


def scaled_to_norm(rng, n, target):
    c = rng.standard_normal((n, n))
    return c * (target / np.linalg.norm(c, 2))


class TestGram:
    def test_unit_column_identity(self, rng):
        col = unit_batch(5, 1, rng)
        out = gram(col, col, side="batch")
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_orthonormal_columns_give_identity(self):
        q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((6, 4)))
        out = gram(q, q, side="batch")
        assert np.allclose(out, np.eye(4), atol=1e-12)

    def test_matches_triple_loop_oracle(self, rng):
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((4, 3))
        assert np.allclose(gram(a, b, side="batch"), gram_oracle(a, b), atol=1e-12)

    def test_feature_side_shape(self, rng):
        a = unit_batch(4, 3, rng)
        out = gram(a, a, side="feature")
        assert out.shape == (4, 4)

    def test_shape_mismatch_names_both_shapes(self, rng):
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((4, 2))
        with pytest.raises(MatrixError, match=r"\(4, 3\).*\(4, 2\)"):
            gram(a, b)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_transpose_duality(self, seed):
        r = np.random.default_rng(seed)
        a = unit_batch(5, 4, r)
        b = unit_batch(5, 4, r)
        assert np.allclose(gram(a, b, side="batch"), gram(b, a, side="batch").T,
                           rtol=0.0, atol=1e-15)


class TestLogdet:
    def test_zero_matrix(self):
        assert logdet_ipc(np.zeros((3, 3))) == pytest.approx(0.0, abs=1e-15)

    def test_scaled_identity(self):
        assert logdet_ipc(0.5 * np.eye(2)) == pytest.approx(2 * math.log(1.5), abs=1e-12)

    def test_rank_one_all_ones(self):
        # 0.1 * J with J the 4x4 all-ones matrix: J has one eigenvalue 4, rest 0.
        c = 0.1 * np.ones((4, 4))
        expected = math.log(1.4)
        assert logdet_ipc(c) == pytest.approx(expected, abs=1e-12)
        assert det_cofactor(np.eye(4) + c) == pytest.approx(math.exp(expected), abs=1e-12)

    def test_matches_eigen_oracle(self):
        for seed in range(30):
            r = np.random.default_rng(seed)
            n = int(r.integers(2, 33))
            c = scaled_to_norm(r, n, 0.9)
            got = math.exp(logdet_ipc(c))
            want = float(np.prod(np.abs(np.linalg.eigvals(np.eye(n) + c))))
            assert got == pytest.approx(want, rel=1e-8)

    def test_singular_raises(self):
        with pytest.raises(SingularMatrixError):
            logdet_ipc(-np.eye(3))

    def test_negative_determinant_raises(self):
        # I + c = diag(1, -1): determinant sign is negative.
        with pytest.raises(SingularMatrixError):
            logdet_ipc(np.diag([0.0, -2.0]))

    def test_nonfinite_input_rejected(self):
        c = np.zeros((2, 2))
        c[0, 1] = np.nan
        with pytest.raises(MatrixError):
            logdet_ipc(c)

    def test_lu_solve_round_trip(self, rng):
        c = scaled_to_norm(rng, 12, 0.7)
        fac = lu_factor_ipc(c)
        b = rng.standard_normal((12, 3))
        x = fac.solve(b)
        assert np.allclose((np.eye(12) + c) @ x, b, atol=1e-10)


class TestTraceLogTaylor:
    def test_zero_matrix(self):
        for n in (1, 2, 5):
            assert trace_log_taylor(np.zeros((3, 3)), n) == 0.0

    def test_scalar_series(self):
        got = trace_log_taylor(np.array([[0.5]]), 4)
        assert got == pytest.approx(0.5 - 0.5 ** 2 / 2 + 0.5 ** 3 / 3 - 0.5 ** 4 / 4, abs=1e-15)
        assert got == pytest.approx(0.4010416666666667, abs=1e-12)
        assert abs(got - math.log(1.5)) < 0.005

    def test_order_four_tracks_exact(self, rng):
        # 64x64 scaled Gram of a random unit batch, the matrix family the
        # truncation is built for; its spectral norm stays well below 1.
        z = unit_batch(1024, 64, rng)
        c = gram(z, z, side="batch") / (64 * 0.08)
        assert np.linalg.norm(c, 2) <= 0.8
        exact = logdet_ipc(c)
        approx = trace_log_taylor(c, 4)
        assert abs(approx - exact) / abs(exact) < 0.005

    def test_error_non_increasing_in_order(self):
        # Single-batch Grams: the spectrum is real and nonnegative, so each
        # added order strictly shrinks the truncation remainder. (Cross-view
        # Grams can have complex eigenvalues whose low-order errors cancel
        # by luck, so they are not covered by this monotonicity claim.)
        for seed in range(100):
            r = np.random.default_rng(seed)
            n = int(r.integers(4, 24))
            z = unit_batch(n, n, r)
            c = gram(z, z, side="batch")
            c *= 0.8 / np.linalg.norm(c, 2)
            exact = logdet_ipc(c)
            errs = [abs(trace_log_taylor(c, k) - exact) for k in (1, 2, 4, 8)]
            assert all(a >= b - 1e-13 for a, b in zip(errs, errs[1:])), (seed, errs)

    def test_order_validation(self):
        with pytest.raises(ValueError):
            trace_log_taylor(np.zeros((2, 2)), 0)

    def test_coefficients(self):
        assert log1p_series_coefficient(1) == 1.0
        assert log1p_series_coefficient(2) == -0.5
        assert log1p_series_coefficient(3) == pytest.approx(1 / 3)


class TestSpectralBound:
    def test_diagonal(self):
        holder, power = spectral_bound(0.3 * np.eye(5))
        assert holder == pytest.approx(0.3, abs=1e-12)
        assert power == pytest.approx(0.3, abs=1e-9)

    def test_unit_batch_holder_below_lambda_m(self, rng):
        cfg = CodingConfig(m=4, d=8, eps_d_sq=1.25)
        for _ in range(50):
            c = cfg.lam * gram(unit_batch(8, 4, rng), unit_batch(8, 4, rng), side="batch")
            holder, power = spectral_bound(c)
            assert holder <= cfg.lam_m + 1e-12
            assert power <= holder + 1e-9

    def test_power_matches_svd_oracle(self):
        for seed in range(20):
            r = np.random.default_rng(seed)
            c = r.standard_normal((8, 8))
            _, power = spectral_bound(c)
            want = float(np.linalg.svd(c, compute_uv=False)[0])
            assert power == pytest.approx(want, abs=1e-8)

    def test_guard_soundness_many_trials(self):
        r = np.random.default_rng(99)
        for _ in range(500):
            n = int(r.integers(1, 65))
            c = r.standard_normal((n, n)) * r.uniform(0.01, 2.0)
            holder, power = spectral_bound(c)
            assert power <= holder + 1e-9


class TestTypes:
    def test_coding_config_derivations(self):
        cfg = CodingConfig(m=4, d=8, eps_d_sq=1.25, order=4)
        assert cfg.mu == 6.0
        assert cfg.lam == pytest.approx(1.0 / 5.0)
        assert cfg.lam_m == pytest.approx(0.8)

    @pytest.mark.parametrize("kwargs", [
        dict(m=0, d=8, eps_d_sq=1.0),
        dict(m=4, d=0, eps_d_sq=1.0),
        dict(m=4, d=8, eps_d_sq=0.0),
        dict(m=4, d=8, eps_d_sq=-1.0),
        dict(m=4, d=8, eps_d_sq=1.0, order=0),
    ])
    def test_coding_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            CodingConfig(**kwargs)

    def test_embedding_batch_requires_unit_columns(self, rng):
        bad = rng.standard_normal((4, 3))
        with pytest.raises(MatrixError, match="unit-norm"):
            EmbeddingBatch(bad)

    def test_embedding_batch_accepts_normalized(self, rng):
        z = EmbeddingBatch(unit_batch(4, 3, rng))
        assert z.dim == 4 and z.batch == 3

    def test_embedding_batch_rejects_empty(self):
        with pytest.raises(MatrixError):
            EmbeddingBatch(np.zeros((0, 3)))
