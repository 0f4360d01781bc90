"""Network blocks: shape contracts, gating identities, connectivity of the
harmonic plan, residual behavior, and model-level gradient checks.
"""

import numpy as np
import pytest

from conftest import tiny_model_config
from rangeseg.engine import Tensor, finite_diff_check, no_grad
from rangeseg.engine.tensor import ShapeError
from rangeseg.model import (
    ContextGate,
    ContextModule,
    DecoderStage,
    HarmonicStage,
    ModelConfig,
    SegModel,
)


class TestModelConfig:
    def test_paper_defaults(self):
        cfg = ModelConfig()
        assert cfg.channels == (5, 24, 32, 48, 96, 192, 320, 720, 1280, 1744, 842, 448, 192, 64)
        assert sum(w for _, _, w in cfg.icm_branches) == 48

    def test_input_width_fixed(self):
        with pytest.raises(ValueError, match="C0"):
            ModelConfig(channels=(4,) + ModelConfig().channels[1:])

    def test_branch_widths_must_sum_to_c3(self):
        with pytest.raises(ValueError, match="sum to C3"):
            tiny_model_config(icm_branches=((3, 1, 2), (5, 2, 2)))

    def test_dict_roundtrip(self):
        cfg = tiny_model_config()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestContextModule:
    def test_output_has_48_channels_at_paper_scale(self, rng):
        cfg = ModelConfig(class_count=20)
        icm = ContextModule(cfg, rng)
        out = icm(Tensor(rng.normal(size=(1, 5, 8, 32))))
        assert out.shape == (1, 48, 8, 32)

    def test_zero_input_zero_output(self, rng):
        cfg = tiny_model_config()
        icm = ContextModule(cfg, rng)
        out = icm(Tensor(np.zeros((1, 5, 16, 16))))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_gradient_of_mean_output_for_every_parameter(self, rng):
        from rangeseg.engine import parameter_gradient_check

        cfg = tiny_model_config()
        icm = ContextModule(cfg, rng)
        icm.eval()  # frozen normalization statistics keep loss_fn deterministic
        x = Tensor(rng.normal(size=(1, 5, 8, 8)))
        worst, _ = parameter_gradient_check(
            lambda: icm(x).mean(),
            list(icm.named_parameters()),
            eps=1e-5,
            samples=60,
        )
        assert worst < 1e-4


class TestContextGate:
    def test_saturated_gate_is_identity(self, rng):
        gate = ContextGate(8, 4, rng, slope=0.01)
        gate.expand.bias.data[...] = 500.0  # sigmoid -> exactly 1.0 in float64
        x = Tensor(rng.normal(size=(2, 8, 6, 6)))
        np.testing.assert_array_equal(gate(x).data, x.data)

    def test_blocked_gate_zeroes_output(self, rng):
        # exp(-800) underflows, making the sigmoid gate exactly 0.0
        gate = ContextGate(8, 4, rng, slope=0.01)
        gate.expand.bias.data[...] = -800.0
        gate.expand.weight.data[...] = 0.0
        x = Tensor(rng.normal(size=(2, 8, 6, 6)))
        np.testing.assert_array_equal(gate(x).data, 0.0)

    def test_matches_manual_op_composition(self, rng):
        from rangeseg.engine import avg_pool2d, conv2d, leaky_relu, sigmoid

        gate = ContextGate(16, 4, rng, slope=0.01)
        x = Tensor(rng.normal(size=(1, 16, 8, 32)))
        got = gate(x)
        pooled = avg_pool2d(x, 7, stride=1, padding="same")
        hidden = leaky_relu(conv2d(pooled, gate.squeeze.weight, gate.squeeze.bias, gate.squeeze.spec), 0.01)
        manual = x * sigmoid(conv2d(hidden, gate.expand.weight, gate.expand.bias, gate.expand.spec))
        np.testing.assert_array_equal(got.data, manual.data)


class TestHarmonicStage:
    def test_depth_one_is_single_layer_on_input(self, rng):
        cfg = tiny_model_config()
        stage = HarmonicStage(6, 8, depth=1, growth=4, multiplier=1.6, cfg=cfg, rng=rng)
        assert len(stage.layers) == 1
        assert stage.plan.predecessors == ((0,),)
        out = stage(Tensor(rng.normal(size=(1, 6, 8, 8))))
        assert out.shape == (1, 8, 8, 8)

    def test_ablating_non_predecessor_leaves_layer5_input_unchanged(self, rng):
        """Connectivity probe: layer 5 reads {1, 3}; zeroing layer 2 or 4
        must not change layer 5's output."""
        cfg = tiny_model_config()
        stage = HarmonicStage(6, 8, depth=5, growth=4, multiplier=1.6, cfg=cfg, rng=rng)
        stage.eval()
        assert stage.plan.predecessors[4] == (1, 3)
        x = Tensor(rng.normal(size=(1, 6, 8, 8)))
        with no_grad():
            base: dict = {}
            stage(x, collect=base)
            ablated: dict = {}
            stage(x, ablate_layers=(2, 4), collect=ablated)
        np.testing.assert_array_equal(base[5].data, ablated[5].data)
        # ablating a genuine predecessor must change it
        with no_grad():
            hit: dict = {}
            stage(x, ablate_layers=(3,), collect=hit)
        assert not np.array_equal(base[5].data, hit[5].data)

    def test_stage_with_pooling_halves_spatial(self, rng):
        from rangeseg.engine import avg_pool2d

        cfg = tiny_model_config()
        stage = HarmonicStage(6, 8, depth=2, growth=4, multiplier=1.6, cfg=cfg, rng=rng)
        out = avg_pool2d(stage(Tensor(rng.normal(size=(1, 6, 16, 64)))), 2)
        assert out.shape == (1, 8, 8, 32)


class TestDecoderStage:
    def test_zero_ladder_reduces_to_fused_input(self, rng):
        cfg = tiny_model_config()
        stage = DecoderStage(12, 8, 10, cfg, rng)
        for rung in stage.ladder:
            rung.conv.weight.data[...] = 0.0
        x = Tensor(rng.normal(size=(1, 12, 4, 8)))
        skip = Tensor(rng.normal(size=(1, 8, 8, 16)))
        out = stage(x, skip)
        from rangeseg.engine import concat, nearest_upsample2d

        fused = stage.fuse(concat([nearest_upsample2d(x, 2), skip], axis=1))
        np.testing.assert_allclose(out.data, fused.data, rtol=1e-12)

    def test_spatial_mismatch_rejected(self, rng):
        cfg = tiny_model_config()
        stage = DecoderStage(12, 8, 10, cfg, rng)
        with pytest.raises(ShapeError, match="skip"):
            stage(Tensor(rng.normal(size=(1, 12, 4, 8))), Tensor(rng.normal(size=(1, 8, 6, 16))))


class TestSegModel:
    def test_shape_walk(self, rng):
        model = SegModel(tiny_model_config(), seed=0)
        trace = []
        out = model(Tensor(rng.normal(size=(1, 5, 16, 64))), trace=trace)
        assert out.shape == (1, 5, 16, 64)
        stages = dict(trace)
        assert stages["stem"] == (1, 6, 16, 64)
        assert stages["enc1"] == (1, 8, 16, 64)
        assert stages["pool1"] == (1, 8, 8, 32)
        assert stages["enc5"] == (1, 24, 1, 4)
        assert stages["bridge"] == (1, 28, 1, 4)
        assert stages["dec1"] == (1, 8, 16, 64)
        assert stages["refine"] == (1, 8, 16, 64)
        assert stages["logits"] == (1, 5, 16, 64)

    def test_indivisible_size_error_names_multiple(self, rng):
        model = SegModel(tiny_model_config(), seed=0)
        with pytest.raises(ShapeError, match="multiple of 16"):
            model(Tensor(rng.normal(size=(1, 5, 20, 64))))

    def test_eval_mode_deterministic(self, rng):
        model = SegModel(tiny_model_config(dropout_p=0.3), seed=0).eval()
        x = Tensor(rng.normal(size=(1, 5, 16, 32)))
        with no_grad():
            a = model(x).data
            b = model(x).data
        np.testing.assert_array_equal(a, b)

    def test_dropout_active_only_in_training(self, rng):
        model = SegModel(tiny_model_config(dropout_p=0.5), seed=0)
        x = Tensor(rng.normal(size=(1, 5, 16, 32)))
        model.train()
        a = model(x).data
        b = model(x).data
        assert not np.array_equal(a, b)  # fresh dropout masks differ

    def test_ablation_toggles_change_structure(self):
        full = SegModel(tiny_model_config(), seed=0)
        bare = SegModel(
            tiny_model_config(use_icm=False, use_cam=False, use_mcspn=False), seed=0
        )
        assert full.refiner is not None and bare.refiner is None
        assert full.gates and not bare.gates
        full_names = {name for name, _ in full.named_parameters()}
        bare_names = {name for name, _ in bare.named_parameters()}
        assert any("branches" in n for n in full_names)
        assert not any("branches" in n for n in bare_names)

    def test_refiner_starts_as_identity(self, rng):
        model = SegModel(tiny_model_config(), seed=0).eval()
        x = Tensor(rng.normal(size=(1, 8, 16, 32)))
        with no_grad():
            out = model.refiner(x)
        np.testing.assert_array_equal(out.data, x.data)

    def test_zeroed_gate_zeroes_stage_contribution(self, rng):
        """Blocking a stage's multiplicative gate silences that path."""
        model = SegModel(tiny_model_config(), seed=0).eval()
        model.gates[4].expand.bias.data[...] = -800.0
        model.gates[4].expand.weight.data[...] = 0.0
        with no_grad():
            enc_out = model.encoder[4](Tensor(rng.normal(size=(1, 20, 16, 16))))
            gated = model.gates[4](enc_out)
        np.testing.assert_array_equal(gated.data, 0.0)

    def test_full_model_gradients_on_sampled_parameters(self, rng):
        """Model-level finite differences at float64 over the total loss."""
        from rangeseg import losses as L
        from rangeseg.engine import parameter_gradient_check

        model = SegModel(tiny_model_config(), seed=0)
        model.eval()  # deterministic loss_fn; training-mode stats are covered at op level
        # move the zero-initialized affinity head to a generic point: at
        # exactly zero all four direction maps tie and the max fusion's
        # subgradient legitimately disagrees with finite differences
        model.refiner.head.weight.data[...] = 0.01 * rng.normal(
            size=model.refiner.head.weight.shape
        )
        x = Tensor(rng.normal(size=(1, 5, 16, 16)))
        labels = rng.integers(0, 5, (1, 16, 16))

        def loss_fn():
            total, _ = L.total_loss(
                model(x), labels, L.LossWeights(),
                conv_weights=model.conv_weight_tensors(), ignore_id=0,
            )
            return total

        worst, records = parameter_gradient_check(
            loss_fn, list(model.named_parameters()), eps=1e-5, samples=40,
            rng=np.random.default_rng(1),
        )
        assert worst < 1e-4, max(records, key=lambda r: r[2])

    def test_checkpoint_state_roundtrip(self, rng, tmp_path):
        from rangeseg.engine import load_arrays, save_arrays

        model = SegModel(tiny_model_config(), seed=0).eval()
        x = Tensor(rng.normal(size=(1, 5, 16, 32)))
        with no_grad():
            want = model(x).data.copy()
        path = tmp_path / "model.bin"
        save_arrays(path, model.state_dict())
        clone = SegModel(tiny_model_config(), seed=99).eval()
        clone.load_state_dict(load_arrays(path))
        with no_grad():
            got = clone(x).data
        np.testing.assert_array_equal(got, want)
