import pytest
import torch

from helpers import fd_slice_check, module_gradcheck
from styleclone.nn.encoders import (MultiLevelEmbedding, SpeakerSpecificEncoder,
                                    StyleSpecificEncoder, TextEncoder)
from styleclone.nn.model import CloningModel

torch.manual_seed(0)


def tiny_model():
    return CloningModel(n_phonemes=6, n_mels=8, dim=8, n_text_blocks=2,
                        n_spk_blocks=5, n_sty_blocks=4, n_heads=2, ff_dim=12,
                        score_channels=(4, 6, 8))


class TestTextEncoder:
    def test_content_length_matches_durations(self):
        enc = TextEncoder(6, dim=8, n_blocks=2, ff_dim=12)
        phonemes = torch.tensor([0, 3, 5])
        durs = torch.tensor([2, 4, 3])
        content, pred, used = enc(phonemes, torch.zeros(8), torch.zeros(8), durs)
        assert content.shape == (9, 8)
        assert pred.shape == (3,)
        assert torch.equal(used, durs)

    def test_trunk_unconditioned_then_conditioning_differs(self):
        enc = TextEncoder(6, dim=8, n_blocks=2, ff_dim=12)
        phonemes = torch.tensor([1, 2, 4])
        trunk_a = enc.trunk(phonemes)
        trunk_b = enc.trunk(phonemes)
        assert torch.equal(trunk_a, trunk_b)
        v = torch.randn(8)
        durs = torch.tensor([1, 1, 1])
        ca, _, _ = enc(phonemes, torch.zeros(8), torch.zeros(8), durs)
        cb, _, _ = enc(phonemes, torch.zeros(8), v, durs)
        assert not torch.allclose(ca, cb)

    def test_empty_phonemes_rejected(self):
        enc = TextEncoder(6, dim=8, n_blocks=1, ff_dim=12)
        with pytest.raises(ValueError):
            enc(torch.zeros(0, dtype=torch.long), torch.zeros(8), torch.zeros(8))

    def test_predicted_durations_used_at_inference(self):
        enc = TextEncoder(6, dim=8, n_blocks=1, ff_dim=12)
        content, _, used = enc(torch.tensor([0, 1]), torch.zeros(8), torch.zeros(8))
        assert (used >= 1).all()
        assert content.shape[0] == int(used.sum())

    def test_gradcheck_small(self):
        enc = TextEncoder(4, dim=4, n_blocks=1, ff_dim=6)

        class Wrapped(torch.nn.Module):
            def __init__(self, inner):
                super().__init__()
                self.inner = inner

            def forward(self, e_spk, e_sty):
                content, pred, _ = self.inner(
                    torch.tensor([0, 2, 3]), e_spk, e_sty,
                    torch.tensor([1, 2, 1]))
                return content.sum() + (pred * torch.tensor([0.3, -0.7, 1.1],
                                                            dtype=pred.dtype)).sum()

        es = torch.randn(4, dtype=torch.float64)
        et = torch.randn(4, dtype=torch.float64)
        assert module_gradcheck(Wrapped(enc), (es, et), wrt_args=(0, 1))


class TestSpeakerEncoder:
    def test_extract_centered_output_and_level_count(self):
        enc = SpeakerSpecificEncoder(n_mels=8, dim=8, n_blocks=5, ff_dim=12)
        mel = torch.randn(20, 8)
        content_hat, levels = enc.extract(mel)
        assert len(levels) == 5
        assert all(v.shape == (8,) for v in levels.levels)
        assert content_hat.shape == (20, 8)
        assert content_hat.mean(dim=0).abs().max() <= 1e-6

    def test_block1_offset_shifts_level_exactly(self):
        enc = SpeakerSpecificEncoder(n_mels=8, dim=8, n_blocks=5, ff_dim=12).double()
        mel = torch.randn(12, 8, dtype=torch.float64)
        _, base = enc.extract(mel)
        offset = torch.randn(8, dtype=torch.float64)

        handle = enc.extractor.blocks[0].register_forward_hook(
            lambda mod, inp, out: out + offset)
        try:
            shifted_out, shifted = enc.extract(mel)
        finally:
            handle.remove()
        base_out, _ = enc.extract(mel)
        assert torch.allclose(shifted.levels[0], base.levels[0] + offset)
        assert torch.allclose(shifted_out, base_out)
        assert torch.allclose(shifted.levels[1], base.levels[1])

    def test_reconstruct_shape_and_level_validation(self):
        enc = SpeakerSpecificEncoder(n_mels=8, dim=8, n_blocks=5, ff_dim=12)
        content = torch.randn(17, 8)
        levels = MultiLevelEmbedding([torch.randn(8) for _ in range(5)])
        out = enc.reconstruct(content, levels)
        assert out.shape == (17, 8)
        with pytest.raises(ValueError):
            enc.reconstruct(content, MultiLevelEmbedding([torch.randn(8)] * 4))

    def test_conditioning_inert_at_init(self):
        enc = SpeakerSpecificEncoder(n_mels=8, dim=8, n_blocks=5, ff_dim=12)
        content = torch.randn(9, 8)
        a = enc.reconstruct(content, MultiLevelEmbedding([torch.randn(8)] * 5))
        b = enc.reconstruct(content, MultiLevelEmbedding([torch.zeros(8)] * 5))
        assert torch.allclose(a, b)

    def test_gradcheck_extract(self):
        enc = SpeakerSpecificEncoder(n_mels=4, dim=4, n_blocks=2, ff_dim=6)

        class Wrapped(torch.nn.Module):
            def __init__(self, inner):
                super().__init__()
                self.inner = inner

            def forward(self, mel):
                out, levels = self.inner.extract(mel)
                return out.sum() + levels.total.sum()

        mel = torch.randn(5, 4, dtype=torch.float64)
        assert module_gradcheck(Wrapped(enc), (mel,), wrt_args=(0,))

    def test_gradcheck_reconstruct(self):
        enc = SpeakerSpecificEncoder(n_mels=4, dim=4, n_blocks=2, ff_dim=6)
        with torch.no_grad():  # move SALN off its zero init
            for p in enc.reconstructor.norms.parameters():
                p.uniform_(-0.2, 0.2)

        class Wrapped(torch.nn.Module):
            def __init__(self, inner):
                super().__init__()
                self.inner = inner

            def forward(self, content, l1, l2):
                return self.inner.reconstruct(
                    content, MultiLevelEmbedding([l1, l2])).sum()

        content = torch.randn(5, 4, dtype=torch.float64)
        l1 = torch.randn(4, dtype=torch.float64)
        l2 = torch.randn(4, dtype=torch.float64)
        assert module_gradcheck(Wrapped(enc), (content, l1, l2), wrt_args=(0, 1, 2))


class TestStyleEncoder:
    def test_extract_output_shape_and_levels(self):
        enc = StyleSpecificEncoder(n_mels=8, dim=8, n_blocks=4, ff_dim=12)
        mel = torch.randn(15, 8)
        melless_hat, levels = enc.extract(mel)
        assert melless_hat.shape == (15, 8)
        assert len(levels) == 4

    def test_reconstruct_shape(self):
        enc = StyleSpecificEncoder(n_mels=8, dim=8, n_blocks=4, ff_dim=12)
        melless = torch.randn(11, 8)
        out = enc.reconstruct(melless, MultiLevelEmbedding([torch.randn(8)] * 4))
        assert out.shape == (11, 8)

    def test_conditioning_inert_at_init(self):
        enc = StyleSpecificEncoder(n_mels=8, dim=8, n_blocks=4, ff_dim=12)
        melless = torch.randn(9, 8)
        a = enc.reconstruct(melless, MultiLevelEmbedding([torch.randn(8)] * 4))
        b = enc.reconstruct(melless, MultiLevelEmbedding([torch.zeros(8)] * 4))
        assert torch.allclose(a, b)

    def test_gradcheck_extract(self):
        enc = StyleSpecificEncoder(n_mels=4, dim=4, n_blocks=2, ff_dim=6)

        class Wrapped(torch.nn.Module):
            def __init__(self, inner):
                super().__init__()
                self.inner = inner

            def forward(self, mel):
                out, levels = self.inner.extract(mel)
                return (out * 0.7).sum() + levels.total.sum()

        mel = torch.randn(5, 4, dtype=torch.float64)
        assert module_gradcheck(Wrapped(enc), (mel,), wrt_args=(0,))


class TestMultiLevelEmbedding:
    def test_total_is_sum_bitwise(self):
        levels = [torch.randn(6) for _ in range(5)]
        emb = MultiLevelEmbedding(levels)
        manual = levels[0] + levels[1] + levels[2] + levels[3] + levels[4]
        assert torch.equal(emb.total, manual)


class TestClonePath:
    def test_identical_references_accepted(self):
        m = tiny_model()
        ref = torch.randn(20, 8)
        out = m.clone(torch.tensor([0, 1, 2]), ref, ref)
        assert out.prior_mel.shape[1] == 8

    @pytest.mark.parametrize("length", [20, 80, 300])
    def test_level_dim_independent_of_reference_length(self, length):
        m = tiny_model()
        out = m.clone(torch.tensor([0, 1]), torch.randn(length, 8),
                      torch.randn(40, 8))
        assert out.e_spk.shape == (8,)
        assert out.e_sty.shape == (8,)

    def test_clone_is_deterministic(self):
        m = tiny_model()
        ph = torch.tensor([0, 1, 2])
        a_ref = torch.randn(24, 8)
        b_ref = torch.randn(31, 8)
        a = m.clone(ph, a_ref, b_ref)
        b = m.clone(ph, a_ref, b_ref)
        assert torch.equal(a.prior_mel, b.prior_mel)
        assert torch.equal(a.durations, b.durations)

    def test_frame_duplication_leaves_levels_unchanged(self):
        m = tiny_model().double()
        ref = torch.randn(18, 8, dtype=torch.float64)
        _, levels = m.speaker_encoder.extract(ref)
        _, levels_dup = m.speaker_encoder.extract(
            torch.repeat_interleave(ref, 2, dim=0))
        for a, b in zip(levels.levels, levels_dup.levels):
            assert (a - b).abs().max() <= 1e-6
        _, sty = m.style_encoder.extract(ref)
        _, sty_dup = m.style_encoder.extract(
            torch.repeat_interleave(ref, 2, dim=0))
        for a, b in zip(sty.levels, sty_dup.levels):
            assert (a - b).abs().max() <= 1e-6

    def test_composite_gradient_check(self):
        torch.manual_seed(3)
        m = tiny_model().double()
        with torch.no_grad():  # exercise the conditioning path
            for enc in (m.speaker_encoder, m.style_encoder):
                for p in enc.reconstructor.norms.parameters():
                    p.uniform_(-0.2, 0.2)
        ph = torch.tensor([1, 3])
        durs = torch.tensor([5, 3])
        spk_ref = torch.randn(8, 8, dtype=torch.float64)
        sty_ref = torch.randn(8, 8, dtype=torch.float64)
        weights = torch.randn(8, 8, dtype=torch.float64)

        # the clone path stops at the prior: score net and the duration
        # predictor (fixed durations here) are not part of the graph
        params = [p for n, p in m.named_parameters()
                  if not n.startswith("score_net")
                  and "duration_predictor" not in n]

        def scalar():
            out = m.clone_differentiable(ph, spk_ref, sty_ref, durs)
            return (out * weights).sum()

        worst = fd_slice_check(scalar, params, n_coords=len(params), rtol=1e-3)
        assert worst <= 1e-3, worst
