import math

import numpy as np
import pytest

from mec.baselines import (
    BaselineConfig,
    CompositeConfig,
    barlow_loss,
    composite_loss,
    infonce_loss,
    simsiam_loss,
)
from mec.matkernel import CodingConfig
from mec.objective import MecLossConfig, gradient_check, mec_loss
from mec.verify import second_order_decomposition

from conftest import unit_batch


def mec_cfg(d, m, eps=1.25, order=4, **kw):
    return MecLossConfig(CodingConfig(m=m, d=d, eps_d_sq=eps, order=order), **kw)


class TestSimsiam:
    def test_identical_views(self, rng):
        z = unit_batch(8, 4, rng)
        assert simsiam_loss(z, z).value == pytest.approx(-4.0, abs=1e-12)

    def test_orthogonal_views(self):
        z1 = np.tile(np.eye(4)[:, :1], (1, 3))
        z2 = np.tile(np.eye(4)[:, 1:2], (1, 3))
        assert simsiam_loss(z1, z2).value == pytest.approx(0.0, abs=1e-15)

    def test_gradients_are_partner_columns(self, rng):
        z1, z2 = unit_batch(8, 4, rng), unit_batch(8, 4, rng)
        res = simsiam_loss(z1, z2)
        assert np.allclose(res.grad_z1, -z2)
        assert np.allclose(res.grad_z2, -z1)

    def test_first_order_identity(self, rng):
        for _ in range(10):
            z1, z2 = unit_batch(8, 4, rng), unit_batch(8, 4, rng)
            cfg = mec_cfg(8, 4, order=1, form="batch", normalize_by_mu=False)
            coding = cfg.coding
            lhs = mec_loss(z1, z2, cfg)
            rhs = simsiam_loss(z1, z2)
            scale = coding.mu * coding.lam
            assert lhs.value == pytest.approx(scale * rhs.value, rel=1e-12)
            assert np.allclose(lhs.grad_z1, scale * rhs.grad_z1, rtol=1e-12)


class TestBarlow:
    def test_identity_correlation_is_minimum(self):
        # An orthogonal square batch gives cross-correlation exactly I.
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((5, 5)))
        cfg = BaselineConfig(kind="barlow")
        assert barlow_loss(q, q, cfg).value == pytest.approx(0.0, abs=1e-20)

    def test_zero_correlation_costs_d(self):
        # Rows of z1 orthogonal to rows of z2 as m-vectors: C = 0.
        z1 = np.array([[1.0, 1.0], [0.0, 0.0]])
        z2 = np.array([[0.0, 0.0], [1.0, -1.0]])
        cfg = BaselineConfig(kind="barlow", lambda_barlow=0.3)
        assert barlow_loss(z1, z2, cfg).value == pytest.approx(2.0, abs=1e-15)

    def test_second_order_decomposition_general(self, rng):
        for _ in range(10):
            z1, z2 = unit_batch(8, 4, rng), unit_batch(8, 4, rng)
            coding = CodingConfig(m=4, d=8, eps_d_sq=1.25, order=2)
            lhs, rhs = second_order_decomposition(z1, z2, coding)
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))

    def test_second_order_decomposition_shared_view_squares(self, rng):
        # With z1 = z2 the feature Gram is symmetric, so the paired
        # off-diagonal products are literally squared entries.
        z = unit_batch(8, 4, rng)
        coding = CodingConfig(m=4, d=8, eps_d_sq=1.25, order=2)
        c = coding.lam * (z @ z.T)
        diag = np.diag(c)
        verbatim = coding.mu * float(np.sum(-diag + 0.5 * diag ** 2))
        verbatim += 0.5 * coding.mu * float(np.sum(c ** 2) - np.sum(diag ** 2))
        cfg = mec_cfg(8, 4, order=2, form="feature", normalize_by_mu=False)
        assert verbatim == pytest.approx(mec_loss(z, z, cfg).value, abs=1e-10)

    @pytest.mark.parametrize("normalization", ["l2", "batchnorm"])
    def test_gradcheck(self, rng, normalization):
        cfg = BaselineConfig(kind="barlow", normalization=normalization)
        z1, z2 = unit_batch(8, 4, rng), unit_batch(8, 4, rng)
        err = gradient_check(lambda a, b: barlow_loss(a, b, cfg), z1, z2)
        assert err < 1e-4

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BaselineConfig(kind="barlow", lambda_barlow=-1.0)
        with pytest.raises(ValueError):
            BaselineConfig(kind="barlow", normalization="spectral")


class TestInfonce:
    def test_single_pair_is_zero(self, rng):
        z1, z2 = unit_batch(6, 1, rng), unit_batch(6, 1, rng)
        cfg = BaselineConfig(kind="infonce", temperature=0.7)
        assert infonce_loss(z1, z2, cfg).value == pytest.approx(0.0, abs=1e-12)

    def test_orthonormal_two_sample_value(self):
        z = np.eye(2)
        cfg = BaselineConfig(kind="infonce", temperature=1.0)
        want = 2.0 * math.log(1.0 + math.exp(-1.0))
        assert infonce_loss(z, z, cfg).value == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(0.6265234, abs=1e-7)

    def test_gradcheck(self, rng):
        cfg = BaselineConfig(kind="infonce", temperature=0.5)
        z1, z2 = unit_batch(8, 4, rng), unit_batch(8, 4, rng)
        err = gradient_check(lambda a, b: infonce_loss(a, b, cfg), z1, z2)
        assert err < 1e-4

    def test_temperature_validation(self):
        with pytest.raises(ValueError):
            BaselineConfig(kind="infonce", temperature=0.0)


class TestComposite:
    def test_zero_weight_is_base(self, rng):
        z1, z2 = unit_batch(8, 4, rng), unit_batch(8, 4, rng)
        cfg = CompositeConfig(base=BaselineConfig(kind="simsiam"),
                              mec=mec_cfg(8, 4), reg_weight=0.0)
        comp = composite_loss(z1, z2, cfg)
        base = simsiam_loss(z1, z2)
        assert comp.value == base.value
        assert np.array_equal(comp.grad_z1, base.grad_z1)

    def test_first_order_composite_scales_simsiam(self, rng):
        # simsiam + 1.0 * mec(n=1, unnormalized) = (1 + mu*lam) * simsiam.
        z1, z2 = unit_batch(8, 4, rng), unit_batch(8, 4, rng)
        mcfg = mec_cfg(8, 4, order=1, form="batch", normalize_by_mu=False)
        cfg = CompositeConfig(base=BaselineConfig(kind="simsiam"), mec=mcfg,
                              reg_weight=1.0)
        comp = composite_loss(z1, z2, cfg)
        base = simsiam_loss(z1, z2)
        scale = 1.0 + mcfg.coding.mu * mcfg.coding.lam
        assert comp.value == pytest.approx(scale * base.value, rel=1e-12)
        assert np.allclose(comp.grad_z1, scale * base.grad_z1, rtol=1e-12)

    def test_gradcheck(self, rng):
        cfg = CompositeConfig(
            base=BaselineConfig(kind="infonce", temperature=0.5),
            mec=mec_cfg(8, 4, normalize_by_mu=True),
            reg_weight=0.7,
        )
        z1, z2 = unit_batch(8, 4, rng), unit_batch(8, 4, rng)
        err = gradient_check(lambda a, b: composite_loss(a, b, cfg), z1, z2)
        assert err < 1e-4

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            CompositeConfig(base=BaselineConfig(), mec=mec_cfg(8, 4), reg_weight=-0.1)
