"""Training recipe: label-smoothed cross-entropy, Adam with a reduced
encoder learning rate, the epoch loop, and evaluation metrics.

Two parameter groups exist: "encoder" (backbones + projections), stepped at
lr * encoder_lr_factor, and "fusion" (attention, norm, classifier head),
stepped at lr. Weight decay is applied as a coupled L2 term added to the
gradient before the moment updates. Everything is deterministic given the
seed: weight init, per-epoch shuffles, and the update arithmetic.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .config import ABLATION_MODES, TrainConfig
from .encoders import audio_sequence_length, encode_audio, encode_video
from .errors import NonFiniteLossError, ShapeError
from .fusion import FusionModel, fusion_forward, predict, zero_embedding
from .tensor import Tensor, backward, zero_grads

CLASS_NAMES = ("Negative", "Neutral", "Positive")

_SHUFFLE_STREAM = 0x53485546  # b"SHUF"


@dataclass
class EvalReport:
    """Accuracy, confusion counts (rows = true class, cols = predicted),
    and per-class recall."""

    accuracy: float
    confusion: np.ndarray
    per_class_recall: list[float]

    @property
    def num_samples(self) -> int:
        return int(self.confusion.sum())


@dataclass
class AdamGroupState:
    lr: float
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class OptimizerState:
    """First/second moment buffers and step counters, split by group."""

    groups: dict[str, AdamGroupState]


def init_optimizer(model: FusionModel, cfg: TrainConfig) -> OptimizerState:
    state = OptimizerState(groups={
        "encoder": AdamGroupState(lr=cfg.lr * cfg.encoder_lr_factor),
        "fusion": AdamGroupState(lr=cfg.lr),
    })
    for group, params in (
        ("encoder", model.encoder_parameters()),
        ("fusion", model.fusion_parameters()),
    ):
        gs = state.groups[group]
        for name, p in params:
            gs.m[name] = np.zeros_like(p.data)
            gs.v[name] = np.zeros_like(p.data)
    return state


def adam_step(
    named_params: Sequence[tuple[str, Tensor]],
    state: OptimizerState,
    cfg: TrainConfig,
    group: str,
) -> None:
    """One bias-corrected Adam update for a parameter group.

    Parameters whose grad is unset (e.g. an ablated branch) are skipped.
    A group learning rate of exactly 0 leaves its parameters bit-identical.
    """
    gs = state.groups[group]
    gs.t += 1
    bc1 = 1.0 - cfg.adam_beta1 ** gs.t
    bc2 = 1.0 - cfg.adam_beta2 ** gs.t
    for name, p in named_params:
        if p.grad is None:
            continue
        m = gs.m[name]
        v = gs.v[name]
        if m.shape != p.data.shape:
            raise ShapeError(
                f"optimizer state for {name!r} has shape {m.shape}, parameter is {p.data.shape}"
            )
        g = p.grad
        if cfg.weight_decay != 0.0:
            g = g + cfg.weight_decay * p.data
        m *= cfg.adam_beta1
        m += (1.0 - cfg.adam_beta1) * g
        v *= cfg.adam_beta2
        v += (1.0 - cfg.adam_beta2) * (g * g)
        if gs.lr != 0.0:
            p.data -= gs.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


def label_smooth_ce(logits: Tensor, labels: Sequence[int], eps: float) -> Tensor:
    """Mean cross-entropy against smoothed targets.

    The target distribution puts (1 - eps) on the true class plus eps / K
    spread uniformly over all K classes (true class included).
    """
    if logits.ndim != 2:
        raise ShapeError(f"label_smooth_ce expects (B, K) logits, got {logits.shape}")
    b, k = logits.shape
    if len(labels) != b:
        raise ShapeError(f"{len(labels)} labels for {b} logit rows")
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"smoothing eps must be in [0, 1), got {eps}")
    q = np.full((b, k), eps / k, dtype=logits.dtype)
    for row, label in enumerate(labels):
        label = int(label)
        if not 0 <= label < k:
            raise ValueError(f"label {label} out of range for {k} classes")
        q[row, label] += 1.0 - eps
    weighted = T.mul(T.log_softmax(logits), Tensor(q, dtype=logits.dtype))
    return T.scale(T.sum_all(weighted), -1.0 / b)


def smoothed_loss_floor(eps: float, k: int = 3) -> float:
    """Entropy of the smoothed target: the smallest reachable loss value."""
    q = np.full(k, eps / k)
    q[0] += 1.0 - eps
    return float(-(q * np.log(q)).sum())


@contextmanager
def _inference_mode(model: FusionModel):
    """Temporarily stop graph recording; forward values are unchanged."""
    params = [p for _, p in model.named_parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


def forward_example(model: FusionModel, example, ablation: str = "full") -> Tensor:
    """Encode one example and run the fusion pass, honoring the ablation.

    video_only / audio_only replace the silenced modality's embedding with
    an all-zero constant of the shape the encoder would have produced.
    """
    if ablation not in ABLATION_MODES:
        raise ValueError(f"unknown ablation {ablation!r}; expected one of {ABLATION_MODES}")
    cfg = model.cfg
    d = cfg.common_dim
    if ablation == "video_only":
        s_a = audio_sequence_length(cfg, example.audio.waveform.shape[0])
        a_emb = zero_embedding("audio", s_a, d)
    else:
        a_emb = encode_audio(example.audio, model.encoder, cfg)
    if ablation == "audio_only":
        _, side = cfg.video_feature_grid()
        v_emb = zero_embedding("video", side * side, d)
    else:
        v_emb = encode_video(example.video, model.encoder, cfg)
    return fusion_forward(a_emb, v_emb, model)


def evaluate(model: FusionModel, examples: Sequence, ablation: str = "full") -> EvalReport:
    """Accuracy, confusion matrix, and per-class recall over a sample list."""
    if not examples:
        raise ValueError("evaluate needs a non-empty sample list")
    k = model.cfg.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    with _inference_mode(model):
        for ex in examples:
            pred = predict(forward_example(model, ex, ablation))
            confusion[ex.label, pred] += 1
    accuracy = float(np.trace(confusion)) / float(confusion.sum())
    recall = [
        float(confusion[c, c]) / row if (row := int(confusion[c].sum())) else 0.0
        for c in range(k)
    ]
    return EvalReport(accuracy=accuracy, confusion=confusion, per_class_recall=recall)


@dataclass
class TrainResult:
    history: list[dict]
    reports: list[EvalReport]
    best_epoch: int
    best_val_accuracy: float
    best_params: dict[str, np.ndarray]


def _snapshot(model: FusionModel) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def load_params(model: FusionModel, snapshot: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        p.data = snapshot[name].copy()


def train(
    model: FusionModel,
    train_set: Sequence,
    val_set: Sequence,
    cfg: TrainConfig,
    ablation: str = "full",
    log_fn=None,
) -> TrainResult:
    """Run the full loop; the model ends at the final epoch, while the
    returned snapshot holds the epoch with the best validation accuracy."""
    if not train_set:
        raise ValueError("training set is empty")
    if ablation == "two_stage":
        # Frozen feature extractors: the encoder group never moves.
        effective = TrainConfig(**{**cfg.__dict__, "encoder_lr_factor": 0.0})
    else:
        effective = cfg
    state = init_optimizer(model, effective)
    encoder_params = model.encoder_parameters()
    fusion_params = model.fusion_parameters()
    all_tensors = [p for _, p in encoder_params + fusion_params]

    history: list[dict] = []
    reports: list[EvalReport] = []
    best_epoch = -1
    best_acc = -1.0
    best_params: dict[str, np.ndarray] | None = None
    step = 0
    n = len(train_set)

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        order = np.random.default_rng([cfg.seed, _SHUFFLE_STREAM, epoch]).permutation(n)
        loss_total = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = [train_set[i] for i in order[lo:lo + cfg.batch_size]]
            rows = [
                T.reshape(forward_example(model, ex, ablation), (1, model.cfg.num_classes))
                for ex in batch
            ]
            loss = label_smooth_ce(T.concat(rows, axis=0), [ex.label for ex in batch],
                                   cfg.label_smoothing_eps)
            step += 1
            value = loss.item()
            if not math.isfinite(value) and cfg.abort_on_nonfinite:
                raise NonFiniteLossError(step, value)
            loss_total += value * len(batch)
            backward(loss)
            adam_step(encoder_params, state, effective, "encoder")
            adam_step(fusion_params, state, effective, "fusion")
            zero_grads(all_tensors)
        report = evaluate(model, val_set, ablation) if val_set else None
        val_acc = report.accuracy if report else float("nan")
        entry = {
            "epoch": epoch,
            "train_loss": loss_total / n,
            "val_accuracy": val_acc,
            "seconds": time.perf_counter() - started,
        }
        history.append(entry)
        if report:
            reports.append(report)
        if log_fn is not None:
            log_fn(entry)
        if report and report.accuracy > best_acc:
            best_acc = report.accuracy
            best_epoch = epoch
            best_params = _snapshot(model)

    if best_params is None:
        best_params = _snapshot(model)
        best_epoch = cfg.epochs - 1
        best_acc = evaluate(model, val_set, ablation).accuracy if val_set else float("nan")
    return TrainResult(history, reports, best_epoch, best_acc, best_params)


def confusion_csv_lines(report: EvalReport) -> list[str]:
    """3x3 confusion matrix as CSV rows under a class-name header."""
    lines = [",".join(CLASS_NAMES)]
    for row in report.confusion:
        lines.append(",".join(str(int(x)) for x in row))
    return lines
