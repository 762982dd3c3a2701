"""Central finite-difference verification of analytic gradients.

Every autodiff primitive has a registered check case: small random inputs,
a scalar contraction of the op output against fixed random weights, and a
comparison of analytic gradients to central differences. Checks run in
32-bit (step 1e-3, tolerance 1e-3) and in a 64-bit shadow mode (step 1e-6,
tolerance 1e-6). A sampled whole-model check perturbs coordinates of every
parameter tensor on a tiny configuration.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .config import FusionModelConfig
from .encoders import AudioClip, VideoClip
from .tensor import Tensor, backward

STEP = {32: 1e-3, 64: 1e-6}
TOLERANCE = {32: 1e-3, 64: 1e-6}
MODEL_STEP = 2e-3
MODEL_TOLERANCE = 1e-2
MODEL_CHECK_NAME = "model"
# Central differences are meaningless across a ReLU kink; when the two
# one-sided slopes at a sampled coordinate disagree by more than this
# relative amount, that coordinate is skipped (a real gradient bug still
# shows up as consistent one-sided slopes that differ from the analytic
# value). The skipped fraction is capped.
KINK_SLOPE_GAP = 0.05
MAX_KINK_FRACTION = 0.1

# Fault-injection hook: op names listed here get their analytic gradients
# deliberately perturbed, so the failure path (exit code 5) stays testable.
corrupt_ops: set[str] = set()


@dataclass
class CheckResult:
    name: str
    bits: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (
            f"op={self.name} bits={self.bits} max_rel_err={self.max_rel_error:.3e} "
            f"tol={self.tolerance:.1e} {status}"
        )


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst elementwise |a - n| / max(1, |a|, |n|)."""
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def central_diff(value_fn: Callable[[], float], x: Tensor, h: float) -> np.ndarray:
    """Dense central differences of a scalar function w.r.t. every entry of x.

    Uses the actually-representable step (relevant in 32-bit) rather than
    the nominal one.
    """
    grad = np.zeros(x.data.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i].copy()
        flat[i] = orig + h
        step_up = float(flat[i]) - float(orig)
        up = value_fn()
        flat[i] = orig - h
        step_down = float(orig) - float(flat[i])
        down = value_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (step_up + step_down)
    return grad


def _away_from_zero(arr: np.ndarray, margin: float) -> np.ndarray:
    """Shift values out of (-margin, margin) so kinked ops see no crossings."""
    return arr + np.where(arr >= 0, margin, -margin)


def _rand(rng, shape, dtype, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=dtype)


def _build_case(rng, dtype, op, shapes, *, margin=0.0, scales=None):
    """Random inputs plus a fixed-weight scalar contraction of op(*inputs).

    Weights are scaled down so the 32-bit loss stays small; that keeps the
    float32 difference noise well under the 1e-3 tolerance.
    """
    inputs = []
    for i, shape in enumerate(shapes):
        scale = scales[i] if scales else 1.0
        t = _rand(rng, shape, dtype, scale)
        if margin:
            t.data = _away_from_zero(t.data, margin).astype(dtype)
        inputs.append((f"x{i}", t))
    tensors = [t for _, t in inputs]
    probe = op(*tensors)
    c = Tensor(rng.standard_normal(probe.shape) * 0.2, dtype=dtype)
    return inputs, lambda: T.sum_all(T.mul(op(*tensors), c))


def _case_sum(rng, dtype):
    x = _rand(rng, (3, 4), dtype)
    return [("x", x)], lambda: T.scale(T.sum_all(x), 1.3)


# op name -> (op callable, input shapes, keyword tweaks)
_SIMPLE_CASES: dict[str, tuple] = {
    "matmul": (T.matmul, [(3, 4), (4, 2)], {}),
    "add": (T.add, [(3, 4), (3, 4)], {}),
    "sub": (T.sub, [(3, 4), (3, 4)], {}),
    "mul": (T.mul, [(3, 4), (3, 4)], {}),
    "scale": (lambda x: T.scale(x, 1.7), [(3, 4)], {}),
    "relu": (T.relu, [(3, 4)], {"margin": 0.25}),
    "gelu": (T.gelu, [(3, 4)], {}),
    "softmax": (T.softmax, [(2, 5)], {}),
    "log_softmax": (T.log_softmax, [(2, 5)], {}),
    "layer_norm": (lambda x, g, b: T.layer_norm(x, g, b, 1e-5), [(4, 6), (6,), (6,)], {}),
    "mean": (lambda x: T.mean(x, axis=1), [(3, 4)], {}),
    "concat": (lambda a, b: T.concat([a, b], axis=0), [(2, 3), (2, 3)], {}),
    "reshape": (lambda x: T.reshape(x, (2, 6)), [(3, 4)], {}),
    "flatten_last_two": (T.flatten_last_two, [(2, 3, 4)], {}),
    "transpose_last_two": (T.transpose_last_two, [(2, 3, 4)], {}),
    "linear": (T.linear, [(3, 4), (4, 5), (5,)], {}),
    "conv2d": (
        lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1),
        [(2, 6, 6), (3, 2, 3, 3), (3,)],
        {"scales": [1.0, 0.5, 1.0]},
    ),
    "conv1d": (
        lambda x, w, b: T.conv1d(x, w, b, stride=2),
        [(2, 13), (3, 2, 4), (3,)],
        {"scales": [1.0, 0.5, 1.0]},
    ),
}

ALL_OPS = tuple(_SIMPLE_CASES) + ("sum",)


def _build(name: str, rng, dtype):
    if name == "sum":
        return _case_sum(rng, dtype)
    op, shapes, kwargs = _SIMPLE_CASES[name]
    return _build_case(rng, dtype, op, shapes, **kwargs)


def check_op(name: str, bits: int = 32, seed: int = 0) -> CheckResult:
    """Compare one op's analytic gradients to central differences."""
    if name not in ALL_OPS:
        raise KeyError(f"unknown op {name!r}; known ops: {sorted(ALL_OPS)}")
    dtype = np.float32 if bits == 32 else np.float64
    rng = np.random.default_rng([seed, zlib.crc32(name.encode()), bits])
    inputs, loss_fn = _build(name, rng, dtype)
    loss = loss_fn()
    backward(loss)
    analytic = {label: t.grad.astype(np.float64).copy() for label, t in inputs}
    if name in corrupt_ops:
        for label in analytic:
            analytic[label] = analytic[label] * 1.1 + 0.05
    worst = 0.0
    for label, t in inputs:
        numeric = central_diff(lambda: loss_fn().item(), t, STEP[bits])
        worst = max(worst, rel_error(analytic[label], numeric))
    return CheckResult(name, bits, worst, TOLERANCE[bits])


def run_op_checks(ops=None, bits_list=(32, 64), seed: int = 0) -> list[CheckResult]:
    names = list(ops) if ops is not None else list(ALL_OPS)
    unknown = [n for n in names if n not in ALL_OPS and n != MODEL_CHECK_NAME]
    if unknown:
        raise KeyError(f"unknown ops {unknown}; known: {sorted(ALL_OPS)} + [{MODEL_CHECK_NAME!r}]")
    return [
        check_op(name, bits, seed)
        for name in names
        if name != MODEL_CHECK_NAME
        for bits in bits_list
    ]


def tiny_model_config() -> FusionModelConfig:
    """A configuration small enough for sampled finite differencing."""
    return FusionModelConfig(
        common_dim=8,
        heads=2,
        input_resolution=16,
        video_channels=[4, 8],
        video_strides=[2, 2],
        audio_channels=[4, 8],
        audio_strides=[4, 4],
        penultimate_dims=[8],
        frame_count=4,
    )


def whole_model_check(
    cfg: FusionModelConfig | None = None,
    coords_per_tensor: int = 50,
    seed: int = 0,
) -> CheckResult:
    """Sampled finite-difference check of d(loss)/d(theta) through the whole
    model: encoders, attention blocks, norm, and classifier."""
    from .fusion import build_model
    from .synthdata import Example
    from .train import forward_example, label_smooth_ce

    cfg = cfg or tiny_model_config()
    rng = np.random.default_rng([seed, zlib.crc32(b"model")])
    model = build_model(cfg, seed=seed)
    frames = rng.uniform(
        0.0, 1.0, size=(cfg.video_in_channels, 6, cfg.input_resolution, cfg.input_resolution)
    )
    wave = rng.uniform(-0.8, 0.8, size=(4 * cfg.audio_total_stride,))
    example = Example(
        video=VideoClip(Tensor(frames.astype(np.float32))),
        audio=AudioClip(Tensor(wave.astype(np.float32))),
        label=1,
    )

    def loss_fn() -> Tensor:
        logits = forward_example(model, example)
        return label_smooth_ce(T.reshape(logits, (1, cfg.num_classes)), [example.label], 0.2)

    loss = loss_fn()
    backward(loss)
    center = loss.item()
    worst = 0.0
    checked = 0
    skipped = 0
    for name, p in model.named_parameters():
        if p.grad is None:
            raise AssertionError(f"parameter {name} received no gradient")
        analytic = p.grad.astype(np.float64)
        if MODEL_CHECK_NAME in corrupt_ops:
            analytic = analytic * 1.1 + 0.05
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        count = min(coords_per_tensor, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for i in coords:
            orig = flat[i].copy()
            flat[i] = orig + MODEL_STEP
            step_up = float(flat[i]) - float(orig)
            up = loss_fn().item()
            flat[i] = orig - MODEL_STEP
            step_down = float(orig) - float(flat[i])
            down = loss_fn().item()
            flat[i] = orig
            slope_up = (up - center) / step_up
            slope_down = (center - down) / step_down
            gap = abs(slope_up - slope_down) / max(1.0, abs(slope_up), abs(slope_down))
            if gap > KINK_SLOPE_GAP:
                skipped += 1
                continue
            checked += 1
            numeric = (up - down) / (step_up + step_down)
            denom = max(1.0, abs(aflat[i]), abs(numeric))
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    if checked == 0 or skipped > MAX_KINK_FRACTION * (checked + skipped):
        raise AssertionError(
            f"too many kink-adjacent samples ({skipped} of {checked + skipped}); "
            "the check needs a different seed or step"
        )
    return CheckResult(MODEL_CHECK_NAME, 32, worst, MODEL_TOLERANCE)
