"""Fusion core: multi-head self- and cross-modal attention over the two
modality embeddings, residual connections, a single pre-classifier
LayerNorm, and the 3-class head.

Wiring: one self-attention block over the concatenated embeddings runs in
parallel with two cross-attention blocks (audio queries attending to video
context, and vice versa). Each block output is mean-pooled over its
sequence axis; the three pooled vectors are concatenated (joint stream
first, then audio-query, then video-query), normalized, and classified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import FusionModelConfig
from .encoders import EncoderParams, ModalEmbedding, init_encoder_params
from .errors import EvaluationError, ShapeError
from .tensor import Tensor

_INIT_STREAM = 0x494E4954  # b"INIT" as an int, keeps this rng stream distinct


@dataclass
class AttentionParams:
    """Per-head query/key/value projections plus the shared output map.

    Each of wq/wk/wv holds one (d, d_h) matrix per head; wo maps the
    concatenated head outputs (h * d_h) back to d.
    """

    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor

    @property
    def heads(self) -> int:
        return len(self.wq)

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for j in range(self.heads):
            out += [
                (f"{prefix}.h{j}.wq", self.wq[j]),
                (f"{prefix}.h{j}.wk", self.wk[j]),
                (f"{prefix}.h{j}.wv", self.wv[j]),
            ]
        out.append((f"{prefix}.wo", self.wo))
        return out


@dataclass
class FusionModel:
    """Every trainable tensor of the classifier, grouped for the optimizer.

    The parameter census (names, shapes, order) is a pure function of the
    config, which is what makes checkpoints reloadable.
    """

    cfg: FusionModelConfig
    encoder: EncoderParams
    self_attn: AttentionParams
    cross_audio_query: AttentionParams
    cross_video_query: AttentionParams
    norm_gain: Tensor
    norm_bias: Tensor
    penult: list[tuple[Tensor, Tensor]] = field(default_factory=list)
    head_w: Tensor = None
    head_b: Tensor = None

    def encoder_parameters(self) -> list[tuple[str, Tensor]]:
        return self.encoder.named_parameters()

    def fusion_parameters(self) -> list[tuple[str, Tensor]]:
        out = self.self_attn.named_parameters("self_attn")
        out += self.cross_audio_query.named_parameters("cross_audio_query")
        out += self.cross_video_query.named_parameters("cross_video_query")
        out += [("norm.gain", self.norm_gain), ("norm.bias", self.norm_bias)]
        for i, (w, b) in enumerate(self.penult):
            out += [(f"penult{i}.w", w), (f"penult{i}.b", b)]
        out += [("head.w", self.head_w), ("head.b", self.head_b)]
        return out

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return self.encoder_parameters() + self.fusion_parameters()


def _uniform(rng, shape, fan_in, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


def init_attention_params(d: int, heads: int, rng: np.random.Generator, dtype=np.float32) -> AttentionParams:
    d_h = d // heads
    wq, wk, wv = [], [], []
    for _ in range(heads):
        wq.append(_uniform(rng, (d, d_h), d, dtype))
        wk.append(_uniform(rng, (d, d_h), d, dtype))
        wv.append(_uniform(rng, (d, d_h), d, dtype))
    wo = _uniform(rng, (heads * d_h, d), heads * d_h, dtype)
    return AttentionParams(wq, wk, wv, wo)


def build_model(cfg: FusionModelConfig, seed: int = 0, dtype=np.float32) -> FusionModel:
    """Initialize all parameters deterministically from (config, seed)."""
    rng = np.random.default_rng([seed, _INIT_STREAM])
    d = cfg.common_dim
    encoder = init_encoder_params(cfg, rng, dtype)
    self_attn = init_attention_params(d, cfg.heads, rng, dtype)
    cross_audio_query = init_attention_params(d, cfg.heads, rng, dtype)
    cross_video_query = init_attention_params(d, cfg.heads, rng, dtype)
    norm_gain = Tensor(np.ones(3 * d), requires_grad=True, dtype=dtype)
    norm_bias = Tensor(np.zeros(3 * d), requires_grad=True, dtype=dtype)
    penult = []
    in_dim = 3 * d
    for out_dim in cfg.penultimate_dims:
        penult.append((
            _uniform(rng, (in_dim, out_dim), in_dim, dtype),
            Tensor(np.zeros(out_dim), requires_grad=True, dtype=dtype),
        ))
        in_dim = out_dim
    head_w = _uniform(rng, (in_dim, cfg.num_classes), in_dim, dtype)
    head_b = Tensor(np.zeros(cfg.num_classes), requires_grad=True, dtype=dtype)
    return FusionModel(
        cfg, encoder, self_attn, cross_audio_query, cross_video_query,
        norm_gain, norm_bias, penult, head_w, head_b,
    )


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q kᵀ / sqrt(d_h)) v for q (S_q, d_h), k and v (S_k, d_h)."""
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError(f"attention expects 2-d tensors, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query/key feature dims disagree: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key/value sequence lengths disagree: {k.shape} vs {v.shape}")
    scores = T.scale(T.matmul(q, T.transpose_last_two(k)), 1.0 / math.sqrt(q.shape[1]))
    return T.matmul(T.softmax(scores), v)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, params: AttentionParams) -> Tensor:
    d = params.wq[0].shape[0]
    if q.shape[1] != d or k.shape[1] != d or v.shape[1] != d:
        raise ShapeError(
            f"multi-head attention expects feature dim {d}, got {q.shape}, {k.shape}, {v.shape}"
        )
    heads = [
        scaled_dot_attention(T.matmul(q, wq), T.matmul(k, wk), T.matmul(v, wv))
        for wq, wk, wv in zip(params.wq, params.wk, params.wv)
    ]
    return T.matmul(T.concat(heads, axis=1), params.wo)


def self_attention_block(a_emb: ModalEmbedding, v_emb: ModalEmbedding, params: AttentionParams) -> Tensor:
    """Joint self-attention over the concatenated embeddings (audio rows
    first), with a residual connection around the attention."""
    if a_emb.seq.shape[1] != v_emb.seq.shape[1]:
        raise ShapeError(
            f"embeddings disagree on feature dim: {a_emb.seq.shape} vs {v_emb.seq.shape}"
        )
    x = T.concat([a_emb.seq, v_emb.seq], axis=0)
    return T.add(x, multi_head_attention(x, x, x, params))


def cross_attention_block(query_mod: ModalEmbedding, context_mod: ModalEmbedding, params: AttentionParams) -> Tensor:
    """One modality queries the other (keys and values) and keeps a residual
    path to its own embedding."""
    q, c = query_mod.seq, context_mod.seq
    if q.shape[1] != c.shape[1]:
        raise ShapeError(f"embeddings disagree on feature dim: {q.shape} vs {c.shape}")
    return T.add(q, multi_head_attention(q, c, c, params))


def fusion_forward(a_emb: ModalEmbedding, v_emb: ModalEmbedding, model: FusionModel) -> Tensor:
    """Full fusion pass from two embeddings to a logits vector of length 3."""
    cfg = model.cfg
    d = cfg.common_dim
    if a_emb.seq.shape[1] != d or v_emb.seq.shape[1] != d:
        raise ShapeError(
            f"embeddings must have feature dim {d}, got {a_emb.seq.shape} and {v_emb.seq.shape}"
        )
    joint = self_attention_block(a_emb, v_emb, model.self_attn)
    from_video = cross_attention_block(a_emb, v_emb, model.cross_audio_query)
    from_audio = cross_attention_block(v_emb, a_emb, model.cross_video_query)
    pooled = [
        T.reshape(T.mean(stream, axis=0), (1, d))
        for stream in (joint, from_video, from_audio)
    ]
    x = T.concat(pooled, axis=1)
    x = T.layer_norm(x, model.norm_gain, model.norm_bias, cfg.layer_norm_eps)
    for w, b in model.penult:
        x = T.relu(T.linear(x, w, b))
    logits = T.linear(x, model.head_w, model.head_b)
    return T.reshape(logits, (cfg.num_classes,))


def predict(logits: Tensor) -> int:
    """Class index of the largest logit; ties resolve to the lowest index."""
    values = logits.data.reshape(-1)
    if not np.all(np.isfinite(values)):
        raise EvaluationError(f"cannot predict from non-finite logits {values}")
    return int(np.argmax(values))


def zero_embedding(modality: str, seq_len: int, d: int, dtype=np.float32) -> ModalEmbedding:
    """Constant all-zero embedding used by the single-modality ablations."""
    return ModalEmbedding(Tensor(np.zeros((seq_len, d)), dtype=dtype), modality)
