"""Training recipe: smoothed loss, Adam groups, the loop, and evaluation."""

import math

import numpy as np
import pytest

from crossfuse import tensor as T
from crossfuse.config import FusionModelConfig, SynthSpec, TrainConfig
from crossfuse.errors import NonFiniteLossError
from crossfuse.fusion import build_model
from crossfuse.synthdata import generate
from crossfuse.train import (
    adam_step,
    confusion_csv_lines,
    evaluate,
    init_optimizer,
    label_smooth_ce,
    smoothed_loss_floor,
    train,
)
from crossfuse.tensor import Tensor

# Entropy of the smoothed target (13/15, 1/15, 1/15): the analytic loss floor.
FLOOR_EPS_02 = 0.48509409130221154
LN3 = 1.0986122886681098


def tiny_cfg(**overrides):
    base = dict(common_dim=8, heads=2, input_resolution=16, video_channels=[4, 8],
                video_strides=[2, 2], audio_channels=[4, 8], audio_strides=[4, 4],
                penultimate_dims=[8], frame_count=4)
    base.update(overrides)
    return FusionModelConfig(**base)


def tiny_spec(**overrides):
    base = dict(num_train=12, num_val=6, resolution=16, t_total=6, audio_len=256,
                sample_rate=256, tone_freqs=[20.0, 40.0, 70.0], seed=5)
    base.update(overrides)
    return SynthSpec(**base)


def ce_reference(logits, labels, eps):
    """Independent 64-bit evaluation of the smoothed cross-entropy."""
    logits = np.asarray(logits, dtype=np.float64)
    b, k = logits.shape
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    total = 0.0
    for row, label in enumerate(labels):
        q = np.full(k, eps / k)
        q[label] += 1.0 - eps
        total += -(q * logp[row]).sum()
    return total / b


class TestLabelSmoothCE:
    def test_eps_zero_is_plain_cross_entropy(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((4, 3)).astype(np.float32)
        labels = [0, 2, 1, 1]
        got = label_smooth_ce(Tensor(logits), labels, 0.0).item()
        assert got == pytest.approx(ce_reference(logits, labels, 0.0), rel=1e-5)

    @pytest.mark.parametrize("eps", [0.0, 0.2, 0.5])
    @pytest.mark.parametrize("label", [0, 1, 2])
    def test_uniform_logits_cost_ln3(self, eps, label):
        loss = label_smooth_ce(Tensor(np.zeros((1, 3), dtype=np.float32)), [label], eps)
        assert loss.item() == pytest.approx(LN3, abs=1e-6)

    def test_eps_02_matches_float64_reference(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((6, 3)).astype(np.float32) * 2.0
        labels = [int(x) for x in rng.integers(0, 3, size=6)]
        got = label_smooth_ce(Tensor(logits), labels, 0.2).item()
        assert got == pytest.approx(ce_reference(logits, labels, 0.2), rel=1e-5)

    def test_invalid_label_rejected(self):
        with pytest.raises(ValueError, match="label"):
            label_smooth_ce(Tensor(np.zeros((1, 3), dtype=np.float32)), [3], 0.2)

    def test_floor_is_entropy_of_target(self):
        assert smoothed_loss_floor(0.2) == pytest.approx(FLOOR_EPS_02, abs=1e-12)

    def test_gibbs_inequality(self):
        # Loss is bounded below by the target entropy, with equality exactly
        # when the softmax reproduces the smoothed target.
        rng = np.random.default_rng(2)
        for _ in range(50):
            logits = rng.standard_normal((1, 3)).astype(np.float64) * 3.0
            loss = label_smooth_ce(Tensor(logits, dtype=np.float64), [1], 0.2).item()
            assert loss >= FLOOR_EPS_02 - 1e-9
        q = np.array([1.0 / 15.0, 13.0 / 15.0, 1.0 / 15.0])
        at_optimum = label_smooth_ce(Tensor(np.log(q)[None, :], dtype=np.float64), [1], 0.2)
        assert at_optimum.item() == pytest.approx(FLOOR_EPS_02, abs=1e-6)


class TestAdamStep:
    def setup_state(self, dtype=np.float64, **tc_overrides):
        cfg = tiny_cfg()
        tc = TrainConfig(**tc_overrides)
        model = build_model(cfg, seed=0, dtype=dtype)
        return model, tc, init_optimizer(model, tc)

    def set_grads(self, params, value):
        for _, p in params:
            p.grad = np.full_like(p.data, value)

    def test_zero_gradient_no_decay_leaves_parameters(self):
        model, tc, state = self.setup_state(weight_decay=0.0)
        params = model.fusion_parameters()
        before = {n: p.data.copy() for n, p in params}
        self.set_grads(params, 0.0)
        adam_step(params, state, tc, "fusion")
        for n, p in params:
            np.testing.assert_array_equal(p.data, before[n])

    def test_first_step_magnitude_is_lr(self):
        # Bias-corrected first step on a constant gradient: |delta| is lr up
        # to the eps term in the denominator.
        model, tc, state = self.setup_state(weight_decay=0.0)
        params = model.fusion_parameters()
        for _, p in params:
            p.data = np.zeros_like(p.data)
        self.set_grads(params, 0.5)
        adam_step(params, state, tc, "fusion")
        expected = tc.lr * 0.5 / (math.sqrt(0.25) + tc.adam_eps)
        for _, p in params:
            delta = np.abs(p.data)
            np.testing.assert_allclose(delta, expected, rtol=1e-12)
            assert np.all(np.abs(delta - tc.lr) <= 1e-9)

    def test_encoder_update_is_factor_times_fusion_update(self):
        model, tc, state = self.setup_state(weight_decay=0.0)
        enc = model.encoder_parameters()
        fus = model.fusion_parameters()
        for _, p in enc + fus:
            p.data = np.zeros_like(p.data)
        self.set_grads(enc, 1.0)
        self.set_grads(fus, 1.0)
        adam_step(enc, state, tc, "encoder")
        adam_step(fus, state, tc, "fusion")
        enc_mag = abs(float(enc[0][1].data.reshape(-1)[0]))
        fus_mag = abs(float(fus[0][1].data.reshape(-1)[0]))
        assert enc_mag / fus_mag == pytest.approx(tc.encoder_lr_factor, rel=1e-9)

    def test_group_freeze_is_exact_and_independent(self):
        model, tc, state = self.setup_state()
        enc, fus = model.encoder_parameters(), model.fusion_parameters()
        before_enc = {n: p.data.copy() for n, p in enc}
        before_fus = {n: p.data.copy() for n, p in fus}
        self.set_grads(enc, 0.3)
        self.set_grads(fus, 0.3)
        state.groups["fusion"].lr = 0.0
        adam_step(enc, state, tc, "encoder")
        adam_step(fus, state, tc, "fusion")
        for n, p in fus:
            np.testing.assert_array_equal(p.data, before_fus[n])
        assert any(not np.array_equal(p.data, before_enc[n]) for n, p in enc)

    def test_finite_updates_from_finite_inputs(self):
        model, tc, state = self.setup_state(dtype=np.float32)
        params = model.fusion_parameters()
        self.set_grads(params, 1e4)
        for _ in range(5):
            adam_step(params, state, tc, "fusion")
        assert all(np.all(np.isfinite(p.data)) for _, p in params)


class TestTrainLoop:
    def test_zero_lr_leaves_parameters_bit_identical(self):
        ds = generate(tiny_spec())
        model = build_model(tiny_cfg(), seed=1)
        before = {n: p.data.copy() for n, p in model.named_parameters()}
        tc = TrainConfig(lr=0.0, epochs=1, batch_size=4, seed=1)
        train(model, ds.train, ds.val, tc)
        for n, p in model.named_parameters():
            np.testing.assert_array_equal(p.data, before[n], err_msg=n)

    def test_single_sample_overfits_to_smoothing_floor(self):
        ds = generate(tiny_spec(num_train=1, num_val=1))
        model = build_model(tiny_cfg(), seed=2)
        tc = TrainConfig(lr=0.02, encoder_lr_factor=1.0, weight_decay=0.0,
                         epochs=200, batch_size=1, seed=2)
        result = train(model, ds.train, ds.val, tc)
        final_loss = result.history[-1]["train_loss"]
        assert final_loss < smoothed_loss_floor(0.2) + 0.05

    def test_identical_seeds_give_identical_parameters(self):
        ds = generate(tiny_spec())
        tc = TrainConfig(lr=1e-3, epochs=2, batch_size=4, seed=7)
        runs = []
        for _ in range(2):
            model = build_model(tiny_cfg(), seed=tc.seed)
            result = train(model, ds.train, ds.val, tc)
            runs.append(result)
        for name in runs[0].best_params:
            assert runs[0].best_params[name].tobytes() == runs[1].best_params[name].tobytes(), name
        assert runs[0].history == runs[1].history

    def test_nonfinite_loss_aborts_with_step_index(self):
        ds = generate(tiny_spec())
        model = build_model(tiny_cfg(), seed=3)
        model.head_b.data[:] = np.nan
        tc = TrainConfig(epochs=1, batch_size=4, seed=3)
        with pytest.raises(NonFiniteLossError) as err:
            train(model, ds.train, ds.val, tc)
        assert err.value.step == 1

    def test_nonfinite_tolerated_when_disabled(self):
        ds = generate(tiny_spec())
        model = build_model(tiny_cfg(), seed=3)
        model.head_b.data[:] = np.nan
        tc = TrainConfig(epochs=1, batch_size=4, seed=3, abort_on_nonfinite=False)
        # The loop itself keeps going; the NaN surfaces as an evaluation
        # error instead of a training abort.
        with pytest.raises(EvaluationError):
            train(model, ds.train, ds.val, tc)

    def test_loss_decreases_early_on_most_seeds(self):
        # Statistical smoke: a leaky spec gives the loop a learnable signal
        # inside five epochs; at least 9 of 10 seeds must improve.
        spec = tiny_spec(num_train=48, num_val=6, unimodal_leak=0.6, seed=11)
        ds = generate(spec)
        improved = 0
        for seed in range(10):
            model = build_model(tiny_cfg(), seed=seed)
            tc = TrainConfig(lr=2e-3, encoder_lr_factor=1.0, epochs=5, batch_size=8, seed=seed)
            hist = train(model, ds.train, ds.val, tc).history
            improved += hist[-1]["train_loss"] < hist[0]["train_loss"]
        assert improved >= 9


class TestEvaluate:
    def test_constant_predictor_on_balanced_data(self):
        ds = generate(tiny_spec())
        model = build_model(tiny_cfg(), seed=4)
        for _, p in model.named_parameters():
            p.data = np.zeros_like(p.data)
        model.head_b.data = np.array([0.0, 1.0, 0.0], dtype=np.float32)
        report = evaluate(model, ds.val)
        assert report.accuracy == pytest.approx(1.0 / 3.0)
        assert np.all(report.confusion[:, [0, 2]] == 0)
        assert report.confusion[:, 1].sum() == len(ds.val)

    def test_perfect_predictions_give_identity_confusion(self, monkeypatch):
        ds = generate(tiny_spec())
        model = build_model(tiny_cfg(), seed=5)

        def oracle_forward(model_, example, ablation="full"):
            logits = np.zeros(3, dtype=np.float32)
            logits[example.label] = 1.0
            return Tensor(logits)

        monkeypatch.setattr("crossfuse.train.forward_example", oracle_forward)
        report = evaluate(model, ds.val)
        assert report.accuracy == 1.0
        assert np.all(report.confusion == np.diag(np.diag(report.confusion)))
        assert report.per_class_recall == [1.0, 1.0, 1.0]

    def test_accuracy_equals_trace_over_total(self, monkeypatch):
        ds = generate(tiny_spec())
        model = build_model(tiny_cfg(), seed=6)
        rng = np.random.default_rng(0)

        def random_forward(model_, example, ablation="full"):
            logits = np.zeros(3, dtype=np.float32)
            logits[int(rng.integers(3))] = 1.0
            return Tensor(logits)

        monkeypatch.setattr("crossfuse.train.forward_example", random_forward)
        report = evaluate(model, ds.val)
        assert report.accuracy == np.trace(report.confusion) / report.confusion.sum()
        assert report.num_samples == len(ds.val)

    def test_confusion_csv_shape(self):
        ds = generate(tiny_spec())
        model = build_model(tiny_cfg(), seed=7)
        report = evaluate(model, ds.val)
        lines = confusion_csv_lines(report)
        assert lines[0] == "Negative,Neutral,Positive"
        assert len(lines) == 4
        row_sums = [sum(int(x) for x in line.split(",")) for line in lines[1:]]
        true_counts = report.confusion.sum(axis=1).tolist()
        assert row_sums == true_counts


class TestAblationForward:
    def test_two_stage_freezes_encoder_exactly(self):
        ds = generate(tiny_spec())
        model = build_model(tiny_cfg(), seed=8)
        before = {n: p.data.copy() for n, p in model.encoder_parameters()}
        fusion_before = {n: p.data.copy() for n, p in model.fusion_parameters()}
        tc = TrainConfig(lr=1e-3, epochs=1, batch_size=4, seed=8)
        train(model, ds.train, ds.val, tc, ablation="two_stage")
        for n, p in model.encoder_parameters():
            np.testing.assert_array_equal(p.data, before[n], err_msg=n)
        assert any(not np.array_equal(p.data, fusion_before[n])
                   for n, p in model.fusion_parameters())

    @pytest.mark.parametrize("mode,frozen_prefix", [("video_only", "audio"),
                                                    ("audio_only", "video")])
    def test_unimodal_ablation_starves_silenced_branch(self, mode, frozen_prefix):
        ds = generate(tiny_spec())
        model = build_model(tiny_cfg(), seed=9)
        before = {n: p.data.copy() for n, p in model.encoder_parameters()}
        tc = TrainConfig(lr=1e-3, encoder_lr_factor=1.0, epochs=1, batch_size=4, seed=9)
        train(model, ds.train, ds.val, tc, ablation=mode)
        for n, p in model.encoder_parameters():
            if n.startswith(frozen_prefix):
                np.testing.assert_array_equal(p.data, before[n], err_msg=n)
        live = [n for n, _ in model.encoder_parameters() if not n.startswith(frozen_prefix)]
        assert any(not np.array_equal(dict(model.encoder_parameters())[n].data, before[n])
                   for n in live)
