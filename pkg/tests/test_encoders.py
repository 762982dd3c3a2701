"""Encoders: frame sampling, temporal pooling, conv stacks, projections."""

import numpy as np
import pytest

from crossfuse import tensor as T
from crossfuse.config import FusionModelConfig
from crossfuse.encoders import (
    AudioClip,
    ProjectionParams,
    VideoClip,
    audio_sequence_length,
    encode_audio,
    encode_video,
    frame_indices,
    init_encoder_params,
    projection_layer,
    sample_frames,
    temporal_mean_pool,
)
from crossfuse.errors import ConfigError, ShapeError
from crossfuse.gradcheck import central_diff, rel_error
from crossfuse.tensor import Tensor, backward


def make_clip(t_total=40, res=32, channels=3, seed=0):
    rng = np.random.default_rng(seed)
    frames = rng.uniform(0.0, 1.0, size=(channels, t_total, res, res)).astype(np.float32)
    return VideoClip(Tensor(frames))


def make_audio(length=16000, seed=0):
    rng = np.random.default_rng(seed)
    wave = rng.uniform(-1.0, 1.0, size=length).astype(np.float32)
    return AudioClip(Tensor(wave))


class TestSampleFrames:
    # Center-of-strata rule: index_i = floor((i + 0.5) * T / count).
    @pytest.mark.parametrize("t_total,expected", [
        (40, [2, 7, 12, 17, 22, 27, 32, 37]),
        (8, [0, 1, 2, 3, 4, 5, 6, 7]),
        (3, [0, 0, 0, 1, 1, 2, 2, 2]),
    ])
    def test_index_rule(self, t_total, expected):
        assert frame_indices(t_total, 8) == expected
        clip = make_clip(t_total=t_total)
        out = sample_frames(clip, 8)
        np.testing.assert_array_equal(out.data, clip.frames.data[:, expected])

    def test_bad_count(self):
        with pytest.raises(ShapeError):
            sample_frames(make_clip(), 0)


class TestTemporalMeanPool:
    def test_single_frame_identity(self):
        clip = make_clip(t_total=1)
        out = temporal_mean_pool(clip.frames)
        np.testing.assert_array_equal(out.data, clip.frames.data[:, 0])

    def test_zeros_and_ones_average_to_half(self):
        frames = np.stack([np.zeros((2, 4, 4)), np.ones((2, 4, 4))], axis=1).astype(np.float32)
        out = temporal_mean_pool(Tensor(frames))
        np.testing.assert_allclose(out.data, 0.5)

    def test_matches_direct_resummation(self):
        rng = np.random.default_rng(9)
        frames = rng.standard_normal((3, 4, 2, 2)).astype(np.float32)
        out = temporal_mean_pool(Tensor(frames)).data
        expected = np.zeros((3, 2, 2), dtype=np.float64)
        for t in range(4):
            expected += frames[:, t]
        np.testing.assert_allclose(out, expected / 4.0, rtol=1e-6)

    def test_permutation_invariant_over_time(self):
        rng = np.random.default_rng(10)
        frames = rng.standard_normal((3, 6, 4, 4)).astype(np.float32)
        perm = rng.permutation(6)
        a = temporal_mean_pool(Tensor(frames)).data
        b = temporal_mean_pool(Tensor(frames[:, perm])).data
        np.testing.assert_allclose(a, b, atol=1e-6)


class TestProjectionLayer:
    def test_identity_weights(self):
        cfg = FusionModelConfig()
        x = Tensor(np.random.default_rng(0).standard_normal((5, 64)).astype(np.float32))
        proj = ProjectionParams(Tensor(np.eye(64, dtype=np.float32), requires_grad=True),
                                Tensor(np.zeros(64, dtype=np.float32), requires_grad=True))
        np.testing.assert_allclose(projection_layer(x, proj, cfg).data, x.data, rtol=1e-6)

    def test_gelu_variant_zero_second_affine(self):
        cfg = FusionModelConfig(gelu_projection_module=True)
        rng = np.random.default_rng(1)
        proj = ProjectionParams(
            Tensor(rng.standard_normal((10, 64)).astype(np.float32), requires_grad=True),
            Tensor(np.zeros(64, dtype=np.float32), requires_grad=True),
            Tensor(np.zeros((64, 64), dtype=np.float32), requires_grad=True),
            Tensor(np.zeros(64, dtype=np.float32), requires_grad=True),
        )
        x = Tensor(rng.standard_normal((5, 10)).astype(np.float32))
        np.testing.assert_array_equal(projection_layer(x, proj, cfg).data, 0.0)

    def test_default_matches_independent_recomputation(self):
        cfg = FusionModelConfig()
        rng = np.random.default_rng(2)
        w = rng.standard_normal((12, 64)).astype(np.float32)
        b = rng.standard_normal(64).astype(np.float32)
        x = rng.standard_normal((7, 12)).astype(np.float32)
        proj = ProjectionParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))
        out = projection_layer(Tensor(x), proj, cfg).data
        np.testing.assert_allclose(out, x @ w + b, rtol=1e-5)

    def test_dim_mismatch(self):
        cfg = FusionModelConfig()
        proj = ProjectionParams(Tensor(np.zeros((8, 64), dtype=np.float32)),
                                Tensor(np.zeros(64, dtype=np.float32)))
        with pytest.raises(ShapeError):
            projection_layer(Tensor(np.zeros((5, 9), dtype=np.float32)), proj, cfg)


class TestEncodeVideo:
    def test_default_config_embedding_shape(self):
        # 32x32 input through strides (2, 2, 1) leaves an 8x8 grid of 32-dim
        # cells, so the sequence is 64 cells projected to 64 features.
        cfg = FusionModelConfig()
        params = init_encoder_params(cfg, np.random.default_rng(0))
        emb = encode_video(make_clip(), params, cfg)
        assert emb.modality == "video"
        assert emb.seq.shape == (64, 64)

    def test_zero_input_finite(self):
        cfg = FusionModelConfig()
        params = init_encoder_params(cfg, np.random.default_rng(1))
        clip = VideoClip(Tensor(np.zeros((3, 40, 32, 32), dtype=np.float32)))
        emb = encode_video(clip, params, cfg)
        assert np.all(np.isfinite(emb.seq.data))

    def test_gradients_reach_every_backbone_weight(self):
        cfg = FusionModelConfig()
        rng = np.random.default_rng(2)
        params = init_encoder_params(cfg, rng)
        emb = encode_video(make_clip(seed=3), params, cfg)
        target = Tensor(rng.standard_normal(emb.seq.shape).astype(np.float32))
        backward(T.sum_all(T.mul(emb.seq, target)))
        for name, p in params.named_parameters():
            if name.startswith("video"):
                assert p.grad is not None and np.any(p.grad != 0), name

    def test_pool_placement_agrees_on_static_clips(self):
        # When all sampled frames are identical, pooling pixels first and
        # pooling backbone features last must coincide.
        rng = np.random.default_rng(4)
        frame = rng.uniform(0.0, 1.0, size=(3, 1, 32, 32)).astype(np.float32)
        clip = VideoClip(Tensor(np.repeat(frame, 40, axis=1)))
        before = FusionModelConfig(pool_placement="before_backbone")
        after = FusionModelConfig(pool_placement="after_backbone")
        params = init_encoder_params(before, np.random.default_rng(5))
        emb_before = encode_video(clip, params, before)
        emb_after = encode_video(clip, params, after)
        np.testing.assert_allclose(emb_before.seq.data, emb_after.seq.data, atol=1e-5)

    def test_unsampled_frames_never_influence_output(self):
        cfg = FusionModelConfig()
        params = init_encoder_params(cfg, np.random.default_rng(6))
        clip = make_clip(seed=7)
        base = encode_video(clip, params, cfg).seq.data.copy()
        sampled = set(frame_indices(40, cfg.frame_count))
        unsampled = [t for t in range(40) if t not in sampled]
        rng = np.random.default_rng(8)
        perm = list(range(40))
        shuffled = rng.permutation(unsampled)
        for src, dst in zip(unsampled, shuffled):
            perm[src] = dst
        clip2 = VideoClip(Tensor(clip.frames.data[:, perm]))
        np.testing.assert_array_equal(encode_video(clip2, params, cfg).seq.data, base)

    def test_resolution_mismatch(self):
        cfg = FusionModelConfig()
        params = init_encoder_params(cfg, np.random.default_rng(9))
        with pytest.raises(ConfigError, match="resolution"):
            encode_video(make_clip(res=16), params, cfg)


class TestEncodeAudio:
    def test_default_config_embedding_shape(self):
        # Strides (8, 8, 10) reduce 16000 samples to a 25-step sequence.
        cfg = FusionModelConfig()
        params = init_encoder_params(cfg, np.random.default_rng(0))
        emb = encode_audio(make_audio(), params, cfg)
        assert emb.modality == "audio"
        assert emb.seq.shape == (25, 64)
        assert audio_sequence_length(cfg, 16000) == 25

    def test_silence_with_zero_biases_gives_zero_embedding(self):
        cfg = FusionModelConfig()
        params = init_encoder_params(cfg, np.random.default_rng(1))  # biases init to zero
        clip = AudioClip(Tensor(np.zeros(16000, dtype=np.float32)))
        np.testing.assert_array_equal(encode_audio(clip, params, cfg).seq.data, 0.0)

    def test_waveform_shorter_than_total_stride(self):
        cfg = FusionModelConfig()
        params = init_encoder_params(cfg, np.random.default_rng(2))
        with pytest.raises(ShapeError, match="total stride"):
            encode_audio(AudioClip(Tensor(np.zeros(639, dtype=np.float32))), params, cfg)

    def test_tiny_encoder_gradient_check(self):
        # 64-sample input, two conv layers; checked in the 64-bit shadow mode.
        cfg = FusionModelConfig(common_dim=8, heads=2, audio_channels=[4, 8],
                                audio_strides=[4, 4], video_channels=[4], video_strides=[2],
                                input_resolution=8, penultimate_dims=[8])
        rng = np.random.default_rng(3)
        params = init_encoder_params(cfg, rng, dtype=np.float64)
        clip = AudioClip(Tensor(rng.uniform(-1, 1, size=64), dtype=np.float64))
        c = Tensor(rng.standard_normal((4, 8)), dtype=np.float64)

        def loss_fn():
            return T.sum_all(T.mul(encode_audio(clip, params, cfg).seq, c))

        backward(loss_fn())
        for name, p in params.named_parameters():
            if not name.startswith("audio"):
                continue
            numeric = central_diff(lambda: loss_fn().item(), p, 1e-6)
            assert rel_error(p.grad, numeric) < 1e-6, name


class TestEmbeddingContracts:
    def test_both_modalities_share_common_dim(self):
        cfg = FusionModelConfig()
        params = init_encoder_params(cfg, np.random.default_rng(0))
        v = encode_video(make_clip(), params, cfg)
        a = encode_audio(make_audio(), params, cfg)
        assert v.seq.shape[1] == a.seq.shape[1] == cfg.common_dim

    def test_clip_validation(self):
        with pytest.raises(ShapeError):
            VideoClip(Tensor(np.full((3, 2, 4, 4), 2.0, dtype=np.float32)))
        with pytest.raises(ShapeError):
            AudioClip(Tensor(np.full(10, -1.5, dtype=np.float32)))
        with pytest.raises(ShapeError):
            AudioClip(Tensor(np.array([np.nan], dtype=np.float32)))
