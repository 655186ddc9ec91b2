import math

import numpy as np
import pytest
import torch

from sils.errors import ConfigError, InvalidInputError
from sils.losses import (
    LossReport,
    LossWeights,
    d_phi,
    d_psi,
    loss_cc,
    loss_gan_discriminator,
    loss_gan_generator,
    loss_ss,
    loss_ss_n,
    total_loss,
)


def t(*vals, shape=None):
    out = torch.tensor(vals, dtype=torch.float64)
    return out.reshape(shape) if shape else out


class TestDPhi:
    def test_identity(self):
        a = torch.rand(2, 3, 4)
        assert d_phi(a, a).item() == 0.0

    def test_constant_difference(self):
        a = torch.zeros(8)
        b = torch.ones(8)
        assert d_phi(a, b).item() == pytest.approx(1.0)

    def test_symmetric(self):
        a, b = torch.rand(8), torch.rand(8)
        assert d_phi(a, b).item() == pytest.approx(d_phi(b, a).item())

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            d_phi(torch.rand(3), torch.rand(4))


class TestDPsi:
    def test_midpoint_at_alpha_e_alpha(self):
        alpha = 1.4
        dist = alpha * math.exp(alpha)  # ~5.6773
        a = torch.zeros(4, dtype=torch.float64)
        b = torch.full((4,), dist, dtype=torch.float64)
        assert abs(d_psi(a, b, alpha).item() - 0.5) < 1e-9

    def test_identical_codes_value(self):
        # 1/(1 + e^{e^alpha / alpha}) computed independently
        alpha = 1.4
        expected = 1.0 / (1.0 + math.exp(math.exp(alpha) / alpha))
        a = torch.rand(8, dtype=torch.float64)
        assert d_psi(a, a, alpha).item() == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.0523, abs=5e-5)

    def test_monotone_increasing_and_bounded(self):
        alpha = 1.4
        a = torch.zeros(4, dtype=torch.float64)
        vals = []
        for dist in np.linspace(0, 30, 100):
            v = d_psi(a, torch.full((4,), dist, dtype=torch.float64), alpha).item()
            assert 0.0 < v < 1.0
            vals.append(v)
        assert all(v2 > v1 for v1, v2 in zip(vals, vals[1:]))
        assert vals[-1] > 0.99

    def test_bad_alpha(self):
        with pytest.raises(ConfigError):
            d_psi(torch.rand(3), torch.rand(3), 0.0)


class TestLossSS:
    def test_vanishes_in_separated_limit(self):
        w = LossWeights()
        fy = torch.zeros(8, dtype=torch.float64)
        fz = torch.full((8,), 1e6, dtype=torch.float64)
        val = loss_ss(fy, fy.clone(), fz, fz.clone(), w).item()
        assert val == pytest.approx(0.0, abs=1e-9)

    def test_identical_codes_default_weights(self):
        # intra terms vanish; inter term = 1 - d_psi(a,a)
        w = LossWeights(lambda1=0.5, lambda2=0.5, lambda3=1.0, alpha=1.4)
        a = torch.rand(8, dtype=torch.float64)
        expected = 1.0 - 1.0 / (1.0 + math.exp(math.exp(1.4) / 1.4))
        assert loss_ss(a, a, a, a, w).item() == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(0.9477, abs=5e-5)

    def test_lambda3_scales_only_inter_term(self):
        fy_x, fy_y = torch.rand(8, dtype=torch.float64), torch.rand(8, dtype=torch.float64)
        fz_x, fz_z = torch.rand(8, dtype=torch.float64), torch.rand(8, dtype=torch.float64)
        base = LossWeights(lambda3=1.0)
        scaled = LossWeights(lambda3=3.0)
        inter = (1.0 - d_psi(fy_x, fz_x, base.alpha)).item()
        delta = loss_ss(fy_x, fy_y, fz_x, fz_z, scaled).item() - loss_ss(
            fy_x, fy_y, fz_x, fz_z, base
        ).item()
        assert delta == pytest.approx(2.0 * inter, rel=1e-9)

    def test_n_stream_reduces_to_two_stream(self):
        w = LossWeights()
        fy_x, fy_y = torch.rand(8), torch.rand(8)
        fz_x, fz_z = torch.rand(8), torch.rand(8)
        a = loss_ss(fy_x, fy_y, fz_x, fz_z, w).item()
        b = loss_ss_n([fy_x, fz_x], [fy_y, fz_z], w).item()
        assert a == pytest.approx(b, rel=1e-12)

    def test_three_streams_average_pairs(self):
        w = LossWeights(lambda1=0, lambda2=0, lambda3=1.0)
        codes = [torch.rand(8, dtype=torch.float64) for _ in range(3)]
        val = loss_ss_n(codes, codes, w).item()
        pairs = [(0, 1), (0, 2), (1, 2)]
        expected = np.mean(
            [1.0 - d_psi(codes[i], codes[j], w.alpha).item() for i, j in pairs]
        )
        assert val == pytest.approx(expected, rel=1e-12)


class TestGanLosses:
    def test_example_value_10_log_2(self):
        val = loss_gan_discriminator(t(0.5), t(0.5), 5.0).item()
        assert val == pytest.approx(10.0 * math.log(2.0), abs=1e-9)

    def test_generator_monotone_in_score(self):
        scores = np.linspace(0.01, 0.99, 50)
        vals = [loss_gan_generator(t(s), 5.0).item() for s in scores]
        assert all(v2 < v1 for v1, v2 in zip(vals, vals[1:]))

    def test_zero_weight_annihilates(self):
        assert loss_gan_discriminator(t(0.3), t(0.7), 0.0).item() == 0.0
        assert loss_gan_generator(t(0.3), 0.0).item() == 0.0

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.1])
    def test_out_of_range_scores_rejected(self, bad):
        with pytest.raises(InvalidInputError):
            loss_gan_generator(t(bad), 1.0)
        with pytest.raises(InvalidInputError):
            loss_gan_discriminator(t(bad), t(0.5), 1.0)


class TestLossCC:
    def imgs(self, n=2):
        gen = torch.Generator().manual_seed(0)
        x = torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64)
        preds = [torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64)
                 for _ in range(n)]
        return x, preds

    def test_perfect_reconstruction(self):
        x, preds = self.imgs()
        preds[1] = x - preds[0]
        cc_x, _ = loss_cc(x, preds, [p.clone() for p in preds], LossWeights())
        assert cc_x.item() == pytest.approx(0.0, abs=1e-12)

    def test_fixed_point_of_reseparation(self):
        x, preds = self.imgs()
        _, cc_layers = loss_cc(x, preds, [p.clone() for p in preds], LossWeights())
        for c in cc_layers:
            assert c.item() == 0.0

    def test_linear_scaling(self):
        w = LossWeights(lambda4=10.0, lambda5=10.0, lambda6=10.0)
        x = torch.zeros(1, 3, 8, 8, dtype=torch.float64)
        preds = [torch.full((1, 3, 8, 8), 0.005, dtype=torch.float64),
                 torch.full((1, 3, 8, 8), 0.005, dtype=torch.float64)]
        re = [p + 0.01 for p in preds]
        cc_x, cc_layers = loss_cc(x, preds, re, w)
        assert cc_x.item() == pytest.approx(0.1, rel=1e-9)
        for c in cc_layers:
            assert c.item() == pytest.approx(0.1, rel=1e-9)


class TestTotalLoss:
    def test_reduces_to_plain_sum(self):
        parts = [torch.tensor(v, dtype=torch.float64)
                 for v in (0.3, 0.5, 0.7, 0.9, 1.1, 1.3)]
        val = total_loss(parts[0], parts[1:3], parts[3:], 1.0, 1.0).item()
        assert val == pytest.approx(sum(p.item() for p in parts), rel=1e-9)

    def test_w1_zero_removes_ss(self):
        ss = torch.tensor(123.0)
        val = total_loss(ss, [torch.tensor(1.0)], [torch.tensor(2.0)], 0.0, 1.0)
        assert val.item() == pytest.approx(3.0)

    def test_w2_scales_cc(self):
        val = total_loss(torch.tensor(0.0), [torch.tensor(0.0)],
                         [torch.tensor(1.0), torch.tensor(2.0)], 1.0, 10.0)
        assert val.item() == pytest.approx(30.0)


class TestReportConsistency:
    def test_consistency_check(self):
        w = LossWeights(w1=1.0, w2=1.0)
        r = LossReport(step=1, ss=1.0, gan_y=2.0, gan_z=3.0,
                       cc_x=4.0, cc_y=5.0, cc_z=6.0, total=21.0, d_scores={})
        r.check_consistency(w)
        bad = LossReport(step=1, ss=1.0, gan_y=2.0, gan_z=3.0,
                         cc_x=4.0, cc_y=5.0, cc_z=6.0, total=22.0, d_scores={})
        with pytest.raises(InvalidInputError):
            bad.check_consistency(w)


class TestLossGradients:
    """Every term's gradient vs central finite differences on 8-element
    inputs."""

    def _check(self, f, x, rtol=1e-3, h=1e-4):
        x = x.clone().requires_grad_(True)
        (grad,) = torch.autograd.grad(f(x), x)
        flat = x.detach().flatten()
        for k in range(flat.numel()):
            xp = flat.clone()
            xm = flat.clone()
            xp[k] += h
            xm[k] -= h
            fp = f(xp.reshape(x.shape)).item()
            fm = f(xm.reshape(x.shape)).item()
            fd = (fp - fm) / (2 * h)
            an = grad.flatten()[k].item()
            denom = max(abs(an), abs(fd), 1e-5)
            assert abs(an - fd) / denom < rtol

    def test_d_phi_gradient(self):
        b = torch.rand(8, dtype=torch.float64) + 2.0
        self._check(lambda a: d_phi(a, b), torch.rand(8, dtype=torch.float64))

    def test_d_psi_gradient(self):
        b = torch.rand(8, dtype=torch.float64) + 2.0
        self._check(lambda a: d_psi(a, b, 1.4), torch.rand(8, dtype=torch.float64))

    def test_loss_ss_gradient(self):
        w = LossWeights()
        fy_y = torch.rand(8, dtype=torch.float64) + 1.0
        fz_x = torch.rand(8, dtype=torch.float64) - 1.0
        fz_z = torch.rand(8, dtype=torch.float64) - 2.0
        self._check(lambda a: loss_ss(a, fy_y, fz_x, fz_z, w),
                    torch.rand(8, dtype=torch.float64))

    def test_gan_gradients(self):
        s = torch.rand(8, dtype=torch.float64) * 0.8 + 0.1
        other = torch.rand(8, dtype=torch.float64) * 0.8 + 0.1
        self._check(lambda d: loss_gan_generator(d, 5.0), s)
        self._check(lambda d: loss_gan_discriminator(d, other, 5.0), s)
        self._check(lambda d: loss_gan_discriminator(other, d, 5.0), s)

    def test_loss_cc_gradient(self):
        w = LossWeights()
        x = torch.rand(8, dtype=torch.float64) + 3.0
        p2 = torch.rand(8, dtype=torch.float64) - 3.0
        r1 = torch.rand(8, dtype=torch.float64) + 5.0
        r2 = torch.rand(8, dtype=torch.float64) - 5.0

        def f(p1):
            cc_x, cc_layers = loss_cc(x, [p1, p2], [r1, r2], w)
            return cc_x + sum(cc_layers)

        self._check(f, torch.rand(8, dtype=torch.float64))

    def test_zero_lambda_removes_gradient_contribution(self):
        # grad of the full objective with lambda3=0 equals grad of the
        # objective with the inter term deleted
        fy_y = torch.rand(8, dtype=torch.float64)
        fz_x = torch.rand(8, dtype=torch.float64)
        fz_z = torch.rand(8, dtype=torch.float64)
        a = torch.rand(8, dtype=torch.float64).requires_grad_(True)
        w0 = LossWeights(lambda3=0.0)
        (g_full,) = torch.autograd.grad(loss_ss(a, fy_y, fz_x, fz_z, w0), a)
        reduced = w0.lambda1 * d_phi(fy_y, a)
        (g_reduced,) = torch.autograd.grad(reduced, a)
        assert torch.allclose(g_full, g_reduced, atol=1e-12)
