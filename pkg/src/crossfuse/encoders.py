"""Modality encoders: raw clips to common-space sequence embeddings.

Video: sample 8 evenly spread frames, mean-pool them over time (by default
before the backbone; a per-frame variant pools the backbone features
instead), run a small conv stack, flatten the spatial grid into a sequence,
and project to the common dimension. Audio: a strided 1-d conv stack turns
the waveform into a frame sequence, then the same kind of projection.

The conv stacks are small trainable stand-ins for large pretrained
backbones; the fusion mechanism downstream is the part under study.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import FusionModelConfig
from .errors import ConfigError, ShapeError
from .tensor import Tensor

MODALITIES = ("audio", "video")


@dataclass
class VideoClip:
    """Raw video sample: frames (C, T_total, H, W) with values in [0, 1]."""

    frames: Tensor
    frame_rate: float = 8.0

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4 or f.shape[0] < 1 or f.shape[1] < 1:
            raise ShapeError(f"video frames must be (C, T, H, W) with C,T >= 1, got {f.shape}")
        if not np.all(np.isfinite(f.data)):
            raise ShapeError("video frames contain non-finite values")
        if f.data.min() < 0.0 or f.data.max() > 1.0:
            raise ShapeError("video frame values must lie in [0, 1]")


@dataclass
class AudioClip:
    """Raw audio sample: 1-d waveform with values in [-1, 1]."""

    waveform: Tensor
    sample_rate: int = 16000

    def __post_init__(self):
        w = self.waveform
        if w.ndim != 1 or w.shape[0] < 1:
            raise ShapeError(f"waveform must be 1-d and non-empty, got shape {w.shape}")
        if not np.all(np.isfinite(w.data)):
            raise ShapeError("waveform contains non-finite values")
        if w.data.min() < -1.0 or w.data.max() > 1.0:
            raise ShapeError("waveform values must lie in [-1, 1]")


@dataclass
class ModalEmbedding:
    """Sequence embedding (S, N) in the common fusion space, tagged by modality."""

    seq: Tensor
    modality: str

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ShapeError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.seq.ndim != 2 or self.seq.shape[0] < 1:
            raise ShapeError(f"embedding must be (S, N) with S >= 1, got {self.seq.shape}")


@dataclass
class ProjectionParams:
    """Common-space projection: one affine map, or affine-GeLU-affine when
    the optional extra projection module is enabled."""

    w: Tensor
    b: Tensor
    w2: Tensor | None = None
    b2: Tensor | None = None


@dataclass
class EncoderParams:
    """All trainable encoder tensors (conv stacks plus projections)."""

    video_convs: list[tuple[Tensor, Tensor]]
    video_proj: ProjectionParams
    audio_convs: list[tuple[Tensor, Tensor]]
    audio_proj: ProjectionParams

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for i, (w, b) in enumerate(self.video_convs):
            out += [(f"video.conv{i}.w", w), (f"video.conv{i}.b", b)]
        out += _proj_named("video.proj", self.video_proj)
        for i, (w, b) in enumerate(self.audio_convs):
            out += [(f"audio.conv{i}.w", w), (f"audio.conv{i}.b", b)]
        out += _proj_named("audio.proj", self.audio_proj)
        return out


def _proj_named(prefix: str, proj: ProjectionParams) -> list[tuple[str, Tensor]]:
    out = [(f"{prefix}.w", proj.w), (f"{prefix}.b", proj.b)]
    if proj.w2 is not None:
        out += [(f"{prefix}.w2", proj.w2), (f"{prefix}.b2", proj.b2)]
    return out


def _affine_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def _init_projection(rng, in_dim: int, out_dim: int, extra: bool, dtype) -> ProjectionParams:
    w = _affine_init(rng, (in_dim, out_dim), in_dim, dtype)
    b = _zeros((out_dim,), dtype)
    if not extra:
        return ProjectionParams(w, b)
    w2 = _affine_init(rng, (out_dim, out_dim), out_dim, dtype)
    b2 = _zeros((out_dim,), dtype)
    return ProjectionParams(w, b, w2, b2)


def init_encoder_params(cfg: FusionModelConfig, rng: np.random.Generator, dtype=np.float32) -> EncoderParams:
    """Build encoder tensors in a fixed order so the census is reproducible."""
    d = cfg.common_dim
    video_convs = []
    c_in = cfg.video_in_channels
    for c_out in cfg.video_channels:
        w = _affine_init(rng, (c_out, c_in, 3, 3), c_in * 9, dtype)
        video_convs.append((w, _zeros((c_out,), dtype)))
        c_in = c_out
    video_proj = _init_projection(rng, cfg.video_channels[-1], d, cfg.gelu_projection_module, dtype)

    audio_convs = []
    c_in = 1
    for c_out, stride in zip(cfg.audio_channels, cfg.audio_strides):
        w = _affine_init(rng, (c_out, c_in, stride), c_in * stride, dtype)
        audio_convs.append((w, _zeros((c_out,), dtype)))
        c_in = c_out
    audio_proj = _init_projection(rng, cfg.audio_channels[-1], d, cfg.gelu_projection_module, dtype)

    return EncoderParams(video_convs, video_proj, audio_convs, audio_proj)


def sample_frames(clip: VideoClip, count: int = 8) -> Tensor:
    """Pick ``count`` frames at the centers of equal temporal strata.

    Index i maps to floor((i + 0.5) * T_total / count); when T_total < count
    the same source frame is naturally selected more than once.
    """
    if count < 1:
        raise ShapeError(f"frame count must be >= 1, got {count}")
    t_total = clip.frames.shape[1]
    idx = [int((i + 0.5) * t_total / count) for i in range(count)]
    return Tensor(clip.frames.data[:, idx], dtype=clip.frames.dtype)


def frame_indices(t_total: int, count: int) -> list[int]:
    """The sampling rule of ``sample_frames``, exposed for inspection."""
    return [int((i + 0.5) * t_total / count) for i in range(count)]


def temporal_mean_pool(frames: Tensor) -> Tensor:
    """Average a (C, T, H, W) stack over the time axis."""
    if frames.ndim != 4:
        raise ShapeError(f"temporal_mean_pool expects (C, T, H, W), got {frames.shape}")
    return T.mean(frames, axis=1)


def projection_layer(x: Tensor, proj: ProjectionParams, cfg: FusionModelConfig) -> Tensor:
    """Project (S, F) features into the common space (S, d)."""
    if x.ndim != 2 or x.shape[1] != proj.w.shape[0]:
        raise ShapeError(f"projection: input {x.shape} does not match weight {proj.w.shape}")
    out = T.linear(x, proj.w, proj.b)
    if cfg.gelu_projection_module:
        if proj.w2 is None or proj.b2 is None:
            raise ConfigError("gelu_projection_module is set but the extra projection is missing")
        out = T.linear(T.gelu(out), proj.w2, proj.b2)
    return out


def _video_backbone(x: Tensor, params: EncoderParams, cfg: FusionModelConfig) -> Tensor:
    for (w, b), stride in zip(params.video_convs, cfg.video_strides):
        x = T.relu(T.conv2d(x, w, b, stride=stride, padding=1))
    return x


def encode_video(clip: VideoClip, params: EncoderParams, cfg: FusionModelConfig) -> ModalEmbedding:
    if clip.frames.shape[2] != cfg.input_resolution or clip.frames.shape[3] != cfg.input_resolution:
        raise ConfigError(
            f"clip resolution {clip.frames.shape[2]}x{clip.frames.shape[3]} does not match "
            f"configured input_resolution {cfg.input_resolution}"
        )
    if clip.frames.shape[0] != cfg.video_in_channels:
        raise ConfigError(
            f"clip has {clip.frames.shape[0]} channels, config expects {cfg.video_in_channels}"
        )
    frames = sample_frames(clip, cfg.frame_count)
    if cfg.pool_placement == "before_backbone":
        feat = _video_backbone(temporal_mean_pool(frames), params, cfg)
    else:
        per_frame = []
        for t in range(cfg.frame_count):
            frame = Tensor(frames.data[:, t], dtype=frames.dtype)
            f = _video_backbone(frame, params, cfg)
            per_frame.append(T.reshape(f, (1,) + f.shape))
        feat = T.mean(T.concat(per_frame, axis=0), axis=0)
    # (C', H', W') -> sequence of spatial cells, row-major: s = h' * W' + w'.
    seq = T.transpose_last_two(T.flatten_last_two(feat))
    return ModalEmbedding(projection_layer(seq, params.video_proj, cfg), "video")


def encode_audio(clip: AudioClip, params: EncoderParams, cfg: FusionModelConfig) -> ModalEmbedding:
    length = clip.waveform.shape[0]
    total = cfg.audio_total_stride
    if length < total:
        raise ShapeError(
            f"waveform length {length} is shorter than the encoder's total stride {total}"
        )
    x = T.reshape(Tensor(clip.waveform.data, dtype=clip.waveform.dtype), (1, length))
    for (w, b), stride in zip(params.audio_convs, cfg.audio_strides):
        x = T.relu(T.conv1d(x, w, b, stride=stride))
    seq = T.transpose_last_two(x)
    return ModalEmbedding(projection_layer(seq, params.audio_proj, cfg), "audio")


def audio_sequence_length(cfg: FusionModelConfig, waveform_len: int) -> int:
    """Sequence length the audio encoder produces for a given input length."""
    n = waveform_len
    for stride in cfg.audio_strides:
        n = (n - stride) // stride + 1
    return n
