"""crossfuse: an end-to-end trainable audio-visual fusion classifier built
on a minimal deterministic reverse-mode autodiff core."""

from .config import FusionModelConfig, SynthSpec, TrainConfig
from .encoders import (
    AudioClip,
    EncoderParams,
    ModalEmbedding,
    VideoClip,
    encode_audio,
    encode_video,
    projection_layer,
    sample_frames,
    temporal_mean_pool,
)
from .fusion import (
    AttentionParams,
    FusionModel,
    build_model,
    cross_attention_block,
    fusion_forward,
    multi_head_attention,
    predict,
    scaled_dot_attention,
    self_attention_block,
)
from .synthdata import Example, SynthDataset, generate, load_dataset, save_dataset
from .tensor import Tensor, backward, zero_grads
from .train import (
    EvalReport,
    OptimizerState,
    TrainResult,
    adam_step,
    evaluate,
    init_optimizer,
    label_smooth_ce,
    train,
)
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AttentionParams",
    "AudioClip",
    "EncoderParams",
    "EvalReport",
    "Example",
    "FusionModel",
    "FusionModelConfig",
    "ModalEmbedding",
    "OptimizerState",
    "SynthDataset",
    "SynthSpec",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "VideoClip",
    "adam_step",
    "backward",
    "build_model",
    "cross_attention_block",
    "encode_audio",
    "encode_video",
    "evaluate",
    "fusion_forward",
    "generate",
    "init_optimizer",
    "label_smooth_ce",
    "load_checkpoint",
    "load_dataset",
    "multi_head_attention",
    "predict",
    "projection_layer",
    "sample_frames",
    "save_checkpoint",
    "save_dataset",
    "scaled_dot_attention",
    "self_attention_block",
    "temporal_mean_pool",
    "train",
    "zero_grads",
]
