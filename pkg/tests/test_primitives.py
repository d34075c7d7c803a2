import numpy as np
import pytest
import torch

from helpers import module_gradcheck
from styleclone.nn.primitives import (ConformerBlock, DurationPredictor,
                                      FFTBlock, MeanStyleNorm,
                                      durations_from_log, length_regulate,
                                      mean_instance_norm)

torch.manual_seed(0)


class TestMeanInstanceNorm:
    def test_constant_input(self):
        x = torch.full((6, 4), 3.5)
        centered, mean = mean_instance_norm(x)
        assert torch.all(centered == 0)
        assert torch.allclose(mean, torch.full((4,), 3.5))

    def test_zeros(self):
        centered, mean = mean_instance_norm(torch.zeros(5, 3))
        assert torch.all(centered == 0) and torch.all(mean == 0)

    def test_reconstruction_and_zero_mean(self):
        gen = torch.Generator().manual_seed(1)
        for _ in range(50):
            x = torch.randn(9, 7, generator=gen, dtype=torch.float64)
            centered, mean = mean_instance_norm(x)
            assert torch.all(centered.mean(dim=0).abs() <= 1e-6)
            assert torch.allclose(centered + mean.unsqueeze(0), x)

    def test_shift_equivariance(self):
        gen = torch.Generator().manual_seed(2)
        x = torch.randn(8, 5, generator=gen, dtype=torch.float64)
        v = torch.randn(5, generator=gen, dtype=torch.float64)
        c0, m0 = mean_instance_norm(x)
        c1, m1 = mean_instance_norm(x + v.unsqueeze(0))
        assert torch.allclose(c0, c1)
        assert torch.allclose(m1, m0 + v)


class TestMeanStyleNorm:
    def test_init_is_identity_modulation(self):
        norm = MeanStyleNorm(8)
        x = torch.randn(5, 8)
        cond = torch.randn(8)
        out = norm(x, cond)
        expected = x - x.mean(dim=-1, keepdim=True)
        assert torch.allclose(out, expected)

    def test_constant_channels_yield_beta(self):
        norm = MeanStyleNorm(6)
        with torch.no_grad():
            norm.shift.weight.uniform_(-0.5, 0.5)
        x = torch.ones(4, 6) * 2.0
        cond = torch.randn(6)
        out = norm(x, cond)
        beta = norm.shift(cond)
        assert torch.allclose(out, beta.expand(4, -1))

    def test_idempotent_on_centered_input_at_init(self):
        norm = MeanStyleNorm(7)
        x = torch.randn(6, 7)
        cond = torch.randn(7)
        once = norm(x, cond)
        twice = norm(once, cond)
        assert torch.allclose(once, twice)

    def test_rejects_wrong_cond_dim(self):
        norm = MeanStyleNorm(6)
        with pytest.raises(ValueError):
            norm(torch.randn(4, 6), torch.randn(5))

    def test_gradcheck(self):
        norm = MeanStyleNorm(8)
        with torch.no_grad():
            for p in norm.parameters():
                p.uniform_(-0.3, 0.3)
        x = torch.randn(5, 8, dtype=torch.float64)
        cond = torch.randn(8, dtype=torch.float64)
        assert module_gradcheck(norm, (x, cond), wrt_args=(0, 1))


class TestFFTBlock:
    @pytest.mark.parametrize("t", [1, 7, 80])
    def test_shape_preserved(self, t):
        block = FFTBlock(8, n_heads=2, ff_dim=12)
        x = torch.randn(t, 8)
        assert block(x).shape == (t, 8)

    def test_batch_permutation_equivariance(self):
        block = FFTBlock(8, n_heads=2, ff_dim=12)
        x = torch.randn(3, 9, 8)
        perm = torch.tensor([2, 0, 1])
        out = block(x)
        out_perm = block(x[perm])
        assert torch.allclose(out[perm], out_perm, atol=1e-6)

    def test_gradcheck(self):
        block = FFTBlock(4, n_heads=2, ff_dim=6)
        x = torch.randn(5, 4, dtype=torch.float64)
        assert module_gradcheck(block, (x,), wrt_args=(0,))


class TestConformerBlock:
    def test_shape_preserved(self):
        block = ConformerBlock(8, n_heads=2, ff_dim=12)
        for t in (1, 7, 40):
            assert block(torch.randn(t, 8)).shape == (t, 8)

    def test_gradcheck(self):
        block = ConformerBlock(4, n_heads=2, ff_dim=6, conv_kernel=3)
        x = torch.randn(5, 4, dtype=torch.float64)
        assert module_gradcheck(block, (x,), wrt_args=(0,))


class TestLengthRegulate:
    def test_repeats_rows_in_order(self):
        x = torch.tensor([[1.0, 1.0], [2.0, 2.0]])
        out = length_regulate(x, torch.tensor([2, 3]))
        expected = torch.tensor([[1.0, 1.0]] * 2 + [[2.0, 2.0]] * 3)
        assert torch.equal(out, expected)

    def test_all_ones_is_identity(self):
        x = torch.randn(6, 3)
        assert torch.equal(length_regulate(x, torch.ones(6, dtype=torch.long)), x)

    def test_zero_duration_drops_row(self):
        x = torch.tensor([[1.0], [2.0], [3.0]])
        out = length_regulate(x, torch.tensor([1, 0, 2]))
        assert torch.equal(out, torch.tensor([[1.0], [3.0], [3.0]]))

    def test_all_zero_durations_rejected(self):
        with pytest.raises(ValueError):
            length_regulate(torch.randn(3, 2), torch.zeros(3, dtype=torch.long))


class TestDurationPredictor:
    @pytest.mark.parametrize("n", [1, 5, 24])
    def test_one_prediction_per_phoneme(self, n):
        pred = DurationPredictor(8, hidden=8)
        out = pred(torch.randn(n, 8), torch.randn(8), torch.randn(8))
        assert out.shape == (n,)

    def test_zero_params_give_constant(self):
        pred = DurationPredictor(8, hidden=8)
        with torch.no_grad():
            for p in pred.parameters():
                p.zero_()
        out = pred(torch.randn(9, 8), torch.randn(8), torch.randn(8))
        assert torch.allclose(out, out[0].expand(9))

    def test_gradcheck(self):
        pred = DurationPredictor(4, hidden=4)
        h = torch.randn(3, 4, dtype=torch.float64)
        es = torch.randn(4, dtype=torch.float64)
        et = torch.randn(4, dtype=torch.float64)
        assert module_gradcheck(pred, (h, es, et), wrt_args=(0, 1, 2))

    def test_rounding_is_positive(self):
        pred = torch.tensor([-3.0, 0.0, 1.5])
        d = durations_from_log(pred)
        assert (d >= 1).all()
