"""Velocity-field transformer: identity-at-init structure, conditioning
variants, masked-context independence, and end-to-end gradients."""

import numpy as np
import pytest

from adt import fusion
from adt.dit import DiTBlock, MelInpainter
from adt.errors import DimensionError, DomainError, InputError
from adt.nn import timestep_embedding
from adt.rng import Rng
from adt.tensor import Tensor
from conftest import directional_gradcheck

VOCAB = 10  # 9 characters + blank
VIDEO_DIM = 5


def _small(variant, seed=0, **kw):
    kw.setdefault("dim", 16)
    kw.setdefault("heads", 2)
    kw.setdefault("n_blocks", 3)
    kw.setdefault("ff_hidden", 32)
    kw.setdefault("n_mels", 12)
    kw.setdefault("text_blocks", 1)
    kw.setdefault("video_blocks", 1)
    return MelInpainter(Rng(seed), vocab=VOCAB, video_dim=VIDEO_DIM,
                        variant=variant, **kw)


def _inputs(t=16, seed=5, n_mels=12):
    r = Rng(seed)
    x_t = r.split("x").normal((t, n_mels))
    mel = r.split("mel").normal((t, n_mels))
    mask = fusion.span_mask(t, 4, 12)
    video = r.split("v").normal((t // 4, VIDEO_DIM))
    text = np.array([1, 4, 2, 9, 3])
    return x_t, mel, mask, video, text


class TestDiTBlock:
    def test_identity_at_init(self):
        block = DiTBlock(Rng(0), dim=16, heads=2, ff_hidden=32)
        x = Tensor(Rng(1).normal((7, 16)))
        temb = Tensor(Rng(2).normal((1, 16)))
        out = block(x, temb)
        np.testing.assert_allclose(out.data, x.data, atol=1e-7)

    def test_cross_block_identity_at_init(self):
        block = DiTBlock(Rng(0), dim=16, heads=2, ff_hidden=32, cross=True)
        x = Tensor(Rng(1).normal((7, 16)))
        temb = Tensor(Rng(2).normal((1, 16)))
        memory = Tensor(Rng(3).normal((4, 16)))
        out = block(x, temb, memory)
        np.testing.assert_allclose(out.data, x.data, atol=1e-7)

    def test_not_identity_after_perturbing_modulation(self):
        block = DiTBlock(Rng(0), dim=16, heads=2, ff_hidden=32)
        block.mod.w.data[...] = Rng(9).normal(block.mod.w.shape, std=0.1)
        x = Tensor(Rng(1).normal((7, 16)))
        temb = Tensor(Rng(2).normal((1, 16)))
        assert not np.allclose(block(x, temb).data, x.data, atol=1e-4)


class TestMelInpainterStructure:
    @pytest.mark.parametrize("variant", fusion.VARIANTS)
    def test_zero_velocity_at_init(self, variant):
        model = _small(variant)
        x_t, mel, mask, video, text = _inputs()
        v, _ = model(x_t, 0.37, mel, mask, video=video, text_ids=text)
        assert v.shape == (16, 12)
        np.testing.assert_allclose(v.data, 0.0, atol=1e-7)

    @pytest.mark.parametrize("variant", fusion.VARIANTS)
    def test_ctc_heads_are_log_distributions(self, variant):
        model = _small(variant)
        x_t, mel, mask, video, text = _inputs()
        _, heads = model(x_t, 0.5, mel, mask, video=video, text_ids=text,
                         want_ctc=True)
        assert len(heads) == 2
        for lp in heads:
            assert lp.shape == (16, VOCAB)
            np.testing.assert_allclose(np.exp(lp.data).sum(axis=-1),
                                       np.ones(16), rtol=1e-5)

    def test_taps_are_thirds_of_depth(self):
        model = _small("xattn", n_blocks=6)
        assert model.ctc_taps == (2, 4)

    def test_too_shallow_rejected(self):
        with pytest.raises(InputError):
            _small("xattn", n_blocks=2)

    def test_prefix_rows_are_stripped(self):
        model = _small("prefix")
        x_t, mel, mask, video, text = _inputs()
        v, heads = model(x_t, 0.2, mel, mask, video=video, text_ids=text,
                         want_ctc=True)
        assert v.shape == (16, 12)
        for lp in heads:
            assert lp.shape == (16, VOCAB)

    def test_deterministic_given_seed(self):
        x_t, mel, mask, video, text = _inputs()
        outs = []
        for _ in range(2):
            model = _small("xattn", seed=3)
            model.blocks[0].mod.w.data[...] = 0.01
            v, _ = model(x_t, 0.5, mel, mask, video=video, text_ids=text)
            outs.append(v.data)
        np.testing.assert_array_equal(outs[0], outs[1])


class TestConditionHandling:
    @pytest.mark.parametrize("variant", fusion.VARIANTS)
    def test_null_streams_accepted(self, variant):
        model = _small(variant)
        x_t, mel, mask, video, text = _inputs()
        for kw in ({}, {"video": video}, {"text_ids": text},
                   {"video": video, "text_ids": text}):
            v, _ = model(x_t, 0.4, mel, mask, **kw)
            assert v.shape == (16, 12)

    @pytest.mark.parametrize("variant", fusion.VARIANTS)
    def test_conditions_change_output(self, variant):
        # at init the head is zero; nudge it so differences are visible
        model = _small(variant)
        model.out_head.w.data[...] = Rng(8).normal(model.out_head.w.shape,
                                                   std=0.2)
        for block in model.blocks:
            block.mod.w.data[...] = Rng(9).normal(block.mod.w.shape, std=0.05)
            if block.cross_attn is not None:
                block.cross_gate.data[...] = Rng(10).normal(
                    block.cross_gate.shape, std=0.2)
        x_t, mel, mask, video, text = _inputs()
        v_full = model(x_t, 0.5, mel, mask, video=video, text_ids=text)[0].data
        v_no_text = model(x_t, 0.5, mel, mask, video=video)[0].data
        v_no_vid = model(x_t, 0.5, mel, mask, text_ids=text)[0].data
        assert not np.allclose(v_full, v_no_text, atol=1e-5)
        assert not np.allclose(v_full, v_no_vid, atol=1e-5)

    def test_masked_mel_rows_cannot_leak(self):
        model = _small("xattn")
        model.out_head.w.data[...] = Rng(8).normal(model.out_head.w.shape,
                                                   std=0.2)
        x_t, mel, mask, video, text = _inputs()
        v1 = model(x_t, 0.5, mel, mask, video=video, text_ids=text)[0].data
        poked = mel.copy()
        poked[mask == 1.0] = 123.0
        v2 = model(x_t, 0.5, poked, mask, video=video, text_ids=text)[0].data
        np.testing.assert_array_equal(v1, v2)

    def test_video_length_mismatch_rejected(self):
        model = _small("xattn")
        x_t, mel, mask, video, text = _inputs()
        with pytest.raises(DimensionError):
            model(x_t, 0.5, mel, mask, video=video[:-1], text_ids=text)

    def test_early_text_longer_than_frames_rejected(self):
        model = _small("early")
        x_t, mel, mask, video, _ = _inputs()
        with pytest.raises(InputError):
            model(x_t, 0.5, mel, mask, video=video,
                  text_ids=np.arange(1, 8).repeat(3))

    def test_flow_time_bounds(self):
        model = _small("xattn")
        x_t, mel, mask, video, text = _inputs()
        with pytest.raises(DomainError):
            model(x_t, 1.5, mel, mask, video=video, text_ids=text)

    def test_blank_and_filler_ids_rejected_in_text(self):
        model = _small("xattn")
        x_t, mel, mask, video, _ = _inputs()
        with pytest.raises(DomainError):
            model(x_t, 0.5, mel, mask, video=video, text_ids=np.array([0, 1]))
        with pytest.raises(DomainError):
            model(x_t, 0.5, mel, mask, video=video,
                  text_ids=np.array([VOCAB]))


class TestGradients:
    @pytest.mark.parametrize("variant", fusion.VARIANTS)
    def test_whole_model_grad(self, f64, variant):
        model = _small(variant, dim=8, heads=2, ff_hidden=16, n_mels=6)
        r = Rng(21)
        t_frames = 8
        x_t = Tensor(r.split("x").normal((t_frames, 6)), dtype=np.float64)
        mel = Tensor(r.split("m").normal((t_frames, 6)), dtype=np.float64)
        mask = fusion.span_mask(t_frames, 2, 7)
        video = Tensor(r.split("v").normal((2, VIDEO_DIM)), dtype=np.float64)
        text = np.array([3, 1, 4])
        target = r.split("tgt").normal((t_frames, 6))

        def loss():
            v, heads = model(x_t, 0.6, mel, mask, video=video, text_ids=text,
                             want_ctc=True)
            diff = v - Tensor(target, dtype=np.float64)
            out = (diff * diff).mean()
            for lp in heads:
                out = out + lp.mean() * 0.1
            return out

        directional_gradcheck(loss, model.params(), rtol=2e-3)

    def test_null_embeddings_receive_grad(self, f64):
        model = _small("xattn", dim=8, heads=2, ff_hidden=16, n_mels=6)
        r = Rng(22)
        x_t = Tensor(r.split("x").normal((8, 6)), dtype=np.float64)
        mel = Tensor(r.split("m").normal((8, 6)), dtype=np.float64)
        mask = fusion.span_mask(8, 0, 8)

        def loss():
            v, heads = model(x_t, 0.3, mel, mask, want_ctc=True)
            out = (v * v).mean()
            for lp in heads:
                out = out + lp.mean()
            return out

        loss().backward()
        assert model.null_text.grad is not None
        assert model.null_video.grad is not None
        assert np.abs(model.null_video.grad).max() > 0
