import math

import numpy as np
import pytest
import torch
from torch import nn

from portraitcheck.losses import cls_loss, seg_loss
from portraitcheck.model import (
    ComplianceNet,
    ExternalEncoderAdapter,
    ModelConfig,
    SqueezeExcite,
    StubEncoder,
    TinyEncoder,
    build_model,
    channel_attention,
    mssam,
    predict_compliance,
)
from portraitcheck.types import ConfigError, DataError, Decision, Requirement

SMALL = ModelConfig(encoder="tiny", encoder_channels=8, aspp_rates=(2, 4))


class TestForwardContract:
    @pytest.mark.parametrize("size", [256, 320])
    def test_shapes_at_resolution(self, size):
        model = build_model(SMALL, seed=0)
        model.eval()
        out = model(torch.rand(3, size, size))
        assert tuple(out.seg_logits.shape) == (8, size, size)
        assert tuple(out.cls_logits.shape) == (26,)
        assert tuple(out.region_features.shape) == (8, 8)

    def test_batched_shapes(self):
        model = build_model(SMALL, seed=0)
        out = model(torch.rand(4, 3, 64, 64))
        assert tuple(out.seg_logits.shape) == (4, 8, 64, 64)
        assert tuple(out.cls_logits.shape) == (4, 26)

    def test_inference_deterministic(self):
        model = build_model(SMALL, seed=1)
        model.eval()
        x = torch.rand(3, 64, 64)
        with torch.no_grad():
            a = model(x)
            b = model(x)
        assert torch.equal(a.cls_logits, b.cls_logits)
        assert torch.equal(a.seg_logits, b.seg_logits)

    def test_scores_healthy_over_100_seeds(self):
        for seed in range(100):
            model = build_model(
                ModelConfig(encoder="tiny", encoder_channels=4, aspp_rates=(2,)),
                seed=seed,
            )
            model.eval()
            with torch.no_grad():
                out = model(torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(seed)))
            scores = torch.sigmoid(out.cls_logits)
            assert torch.all(torch.isfinite(scores))
            assert torch.all((scores > 0) & (scores < 1))

    def test_malformed_input_rejected(self):
        model = build_model(SMALL, seed=0)
        with pytest.raises(DataError, match="input must be"):
            model(torch.rand(64, 64))
        with pytest.raises(DataError, match="3 channels"):
            model(torch.rand(1, 64, 64))
        with pytest.raises(DataError, match="below minimum"):
            model(torch.rand(3, 8, 8))

    def test_encoder_stride_contract(self):
        enc = TinyEncoder(channels=8)
        for size in (64, 50, 33):
            out = enc(torch.rand(1, 3, size, size))
            assert out.shape[-1] == math.ceil(size / enc.stride)
        stub = StubEncoder(channels=4)
        assert stub(torch.rand(1, 3, 20, 20)).shape[-1] == 20

    def test_external_adapter_checks_contract(self):
        good = ExternalEncoderAdapter(nn.Conv2d(3, 6, 3, stride=2, padding=1), stride=2, out_channels=6)
        assert good(torch.rand(1, 3, 32, 32)).shape == (1, 6, 16, 16)
        bad = ExternalEncoderAdapter(nn.Conv2d(3, 6, 3, stride=2, padding=1), stride=4, out_channels=6)
        with pytest.raises(DataError, match="external encoder"):
            bad(torch.rand(1, 3, 32, 32))

    def test_unknown_encoder_name(self):
        with pytest.raises(ConfigError, match="unknown encoder"):
            build_model(ModelConfig(encoder="resnet152"))


class TestMsSAM:
    def test_zero_mask_gives_zero_vector(self):
        f = torch.rand(5, 4, 4)
        assert torch.all(mssam(f, torch.zeros(4, 4)) == 0.0)

    def test_full_mask_is_global_average(self):
        f = torch.rand(5, 4, 4)
        out = mssam(f, torch.ones(4, 4))
        assert torch.allclose(out, f.mean(dim=(1, 2)))

    def test_hand_value(self):
        f = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]])
        mask = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        assert mssam(f, mask).item() == pytest.approx(1.25)

    def test_normalized_variant(self):
        f = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]])
        mask = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        assert mssam(f, mask, normalized=True).item() == pytest.approx(2.5)
        assert mssam(f, torch.zeros(2, 2), normalized=True).item() == 0.0

    def test_resolution_mismatch(self):
        with pytest.raises(DataError, match="resolution mismatch"):
            mssam(torch.rand(5, 4, 4), torch.rand(3, 3))


class TestSqueezeExcite:
    def test_zero_input_zero_output(self):
        se = SqueezeExcite(16, reduction=4)
        assert torch.all(se(torch.zeros(16)) == 0.0)

    def test_frozen_open_is_identity(self):
        se = SqueezeExcite(16, reduction=4, frozen_open=True)
        x = torch.randn(16)
        assert torch.equal(se(x), x)

    def test_gates_strictly_shrink_magnitudes(self):
        torch.manual_seed(0)
        se = SqueezeExcite(32, reduction=16)
        for _ in range(1000):
            x = torch.randn(32)
            out = channel_attention(se, x)
            assert torch.all(out.abs() <= x.abs() + 1e-12)
            gates = se.gate_values(x)
            assert torch.all((gates > 0) & (gates < 1))

    def test_near_saturated_gates_pass_input_through(self):
        se = SqueezeExcite(8, reduction=2)
        with torch.no_grad():
            se.fc2.weight.zero_()
            se.fc2.bias.fill_(20.0)  # sigmoid(20) ~ 1
        x = torch.randn(8)
        assert torch.allclose(se(x), x, atol=1e-3)


class TestMaskZeroCausality:
    def test_zeroed_region_slot_is_exactly_zero_and_logit_delta_matches(self):
        model = build_model(SMALL, seed=3).double()
        model.se.frozen_open = True
        model.eval()
        x = torch.rand(3, 32, 32, dtype=torch.float64)
        h = w = 8  # 32 / stride 4
        base_maps = torch.rand(8, h, w, dtype=torch.float64)
        c = model.feature_channels
        with torch.no_grad():
            ref = model(x, mask_override=base_maps)
            for m in range(8):
                z = base_maps.clone()
                z[m] = 0.0
                out = model(x, mask_override=z)
                assert torch.all(out.region_features[m] == 0.0)
                # other slots untouched
                for other in range(8):
                    if other != m:
                        assert torch.equal(
                            out.region_features[other], ref.region_features[other]
                        )
                predicted_delta = model.fc.weight[:, m * c : (m + 1) * c] @ ref.region_features[m]
                actual_delta = ref.cls_logits - out.cls_logits
                assert torch.allclose(actual_delta, predicted_delta, atol=1e-9)


class TestGradientCheck:
    def test_stub_model_matches_central_differences(self):
        # mask gradient flow must be on: finite differences measure the true
        # total derivative, including the path through the mask probabilities
        torch.manual_seed(7)
        config = ModelConfig(
            encoder="stub", encoder_channels=4, aspp_rates=(2,), mask_grad_to_cls=True
        )
        model = build_model(config, seed=7).double()
        x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
        y = (torch.rand(2, 8, 16, 16, dtype=torch.float64) > 0.5).double()
        t = (torch.rand(2, 26, dtype=torch.float64) > 0.5).double()
        gates = (torch.rand(26, dtype=torch.float64) > 0.2).double()
        lam_m = torch.rand(8, dtype=torch.float64) + 0.5
        lam_r = torch.rand(26, dtype=torch.float64) + 0.5
        beta_r = torch.rand(26, dtype=torch.float64) + 0.5

        def total_loss():
            out = model(x)
            seg = seg_loss(torch.sigmoid(out.seg_logits), y, lam_m)
            cls = cls_loss(torch.sigmoid(out.cls_logits), t, gates, lam_r, beta_r)
            return 0.5 * seg + 0.5 * cls

        model.zero_grad()
        total_loss().backward()

        params = [(name, p) for name, p in model.named_parameters()]
        rng = np.random.default_rng(11)
        checked = 0
        h = 1e-6
        while checked < 10:
            name, p = params[rng.integers(0, len(params))]
            flat_idx = int(rng.integers(0, p.numel()))
            analytic = p.grad.flatten()[flat_idx].item()
            with torch.no_grad():
                orig = p.flatten()[flat_idx].item()
                p.flatten()[flat_idx] = orig + h
                plus = total_loss().item()
                p.flatten()[flat_idx] = orig - h
                minus = total_loss().item()
                p.flatten()[flat_idx] = orig
            fd = (plus - minus) / (2 * h)
            denom = max(abs(analytic), abs(fd), 1e-8)
            assert abs(analytic - fd) / denom < 1e-4, (name, flat_idx, analytic, fd)
            checked += 1


class TestPredictCompliance:
    def _model_with_thresholds(self, thresholds=None):
        model = build_model(SMALL, seed=5)
        model.default_thresholds = thresholds
        return model

    def test_score_above_threshold_is_non_compliant(self):
        model = self._model_with_thresholds()
        x = torch.rand(3, 32, 32)
        with torch.no_grad():
            scores = torch.sigmoid(model.eval()(x).cls_logits).numpy()
        low = np.clip(scores - 0.05, 0.01, 0.99)
        decisions, vec = predict_compliance(model, x, thresholds=low)
        for req in Requirement:
            i = req.value - 1
            expected = (
                Decision.NON_COMPLIANT if vec.scores[i] >= low[i] else Decision.COMPLIANT
            )
            assert decisions[req] is expected

    def test_tie_breaks_to_non_compliant(self):
        model = self._model_with_thresholds()
        x = torch.rand(3, 32, 32)
        _, vec = predict_compliance(model, x, thresholds=np.full(26, 0.5))
        exact = vec.scores.copy()
        exact = np.clip(exact, 1e-6, 1 - 1e-6)
        decisions, vec2 = predict_compliance(model, x, thresholds=exact)
        # scores equal their own thresholds -> every decision rejects
        assert all(d is Decision.NON_COMPLIANT for d in decisions.values())

    def test_missing_thresholds_error(self):
        model = self._model_with_thresholds(None)
        with pytest.raises(ConfigError, match="no thresholds available"):
            predict_compliance(model, torch.rand(3, 32, 32))

    def test_stored_thresholds_used(self):
        thr = np.full(26, 0.999)
        model = self._model_with_thresholds(thr)
        decisions, _ = predict_compliance(model, torch.rand(3, 32, 32))
        assert all(d is Decision.COMPLIANT for d in decisions.values())

    def test_threshold_validation(self):
        model = self._model_with_thresholds()
        with pytest.raises(ConfigError, match="shape"):
            predict_compliance(model, torch.rand(3, 32, 32), thresholds=np.full(5, 0.5))
        with pytest.raises(ConfigError, match="inside"):
            predict_compliance(model, torch.rand(3, 32, 32), thresholds=np.full(26, 1.0))


class TestModelConfig:
    def test_round_trip(self):
        config = ModelConfig(encoder_channels=12, aspp_rates=(3, 5), se_reduction=8)
        again = ModelConfig.from_dict(config.to_dict())
        assert again == config

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown model config"):
            ModelConfig.from_dict({"n_layers": 5})

    def test_mask_gradient_flag_default_detached(self):
        model = build_model(SMALL, seed=2)
        x = torch.rand(1, 3, 32, 32)
        out = model(x)
        loss = torch.sigmoid(out.cls_logits).sum()
        loss.backward()
        assert model.seg_head.weight.grad is None or torch.all(
            model.seg_head.weight.grad == 0.0
        )

    def test_mask_gradient_flag_enabled_flows(self):
        config = ModelConfig(
            encoder="tiny", encoder_channels=8, aspp_rates=(2, 4), mask_grad_to_cls=True
        )
        model = build_model(config, seed=2)
        out = model(torch.rand(1, 3, 32, 32))
        torch.sigmoid(out.cls_logits).sum().backward()
        assert model.seg_head.weight.grad is not None
        assert torch.any(model.seg_head.weight.grad != 0.0)
