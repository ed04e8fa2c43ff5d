import numpy as np
import pytest
import torch

from conftest import fd_gradient_check, make_item

from melformer.config import toy_config
from melformer.losses import (
    DEFAULT_WEIGHTS,
    iterative_mel_loss,
    masked_l1,
    ssim,
    total_loss,
)
from melformer.model import AcousticModel, collate


class TestMaskedL1:
    def test_perfect_prediction_is_zero(self):
        x = torch.randn(2, 5, 3)
        assert float(masked_l1(x, x.clone())) == 0.0

    def test_unit_offset_is_one(self):
        x = torch.randn(4, 7)
        assert float(masked_l1(x + 1, x)) == pytest.approx(1.0, abs=1e-6)

    def test_masked_half_equals_subset_mean(self):
        # Manual-subset oracle.
        g = torch.Generator().manual_seed(0)
        pred = torch.randn(1, 8, 4, generator=g)
        target = torch.randn(1, 8, 4, generator=g)
        mask = torch.zeros(1, 8, dtype=torch.bool)
        mask[0, :4] = True
        expected = (pred[0, :4] - target[0, :4]).abs().mean()
        assert torch.allclose(masked_l1(pred, target, mask), expected, atol=1e-7)

    def test_zero_valid_elements_rejected(self):
        x = torch.randn(1, 3)
        with pytest.raises(ValueError):
            masked_l1(x, x, torch.zeros(1, 3, dtype=torch.bool))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            masked_l1(torch.zeros(2, 3), torch.zeros(3, 2))


class TestIterativeMelLoss:
    def test_all_blocks_perfect(self):
        target = torch.randn(1, 6, 80)
        assert float(iterative_mel_loss([target.clone()] * 6, target)) == 0.0

    def test_identical_blocks_scale_linearly(self):
        target = torch.randn(1, 6, 80)
        pred = target + 0.5
        one = float(iterative_mel_loss([pred], target))
        six = float(iterative_mel_loss([pred] * 6, target))
        assert six == pytest.approx(6 * one, rel=1e-6)

    def test_single_block_equals_plain_l1(self):
        target = torch.randn(2, 5, 80)
        pred = torch.randn(2, 5, 80)
        assert float(iterative_mel_loss([pred], target)) == pytest.approx(
            float(masked_l1(pred, target)), rel=1e-7)


class TestSsim:
    def test_identity_is_one(self):
        x = torch.rand(30, 80, dtype=torch.float64) * 8 - 11
        assert float(ssim(x, x)) == pytest.approx(1.0, abs=1e-6)

    def test_structural_inversion_scores_low(self):
        # Direct-evaluation oracle: a high-contrast pattern against its
        # negative must land far from 1.
        g = torch.Generator().manual_seed(1)
        x = (torch.rand(40, 80, generator=g, dtype=torch.float64) > 0.5).double()
        value = float(ssim(1.0 - x, x))
        assert value < 0.2

    def test_symmetry_under_shared_normalization(self):
        g = torch.Generator().manual_seed(2)
        a = torch.rand(25, 80, generator=g, dtype=torch.float64)
        b = torch.rand(25, 80, generator=g, dtype=torch.float64)
        # Pin both to the same [0, 1] normalization map.
        for x in (a, b):
            x[0, 0] = 0.0
            x[-1, -1] = 1.0
        assert float(ssim(a, b)) == pytest.approx(float(ssim(b, a)), abs=1e-6)

    def test_constant_target_equality_rule(self):
        flat = torch.full((12, 80), -3.0, dtype=torch.float64)
        assert float(ssim(flat.clone(), flat)) == pytest.approx(1.0, abs=1e-6)
        assert float(ssim(flat + 1.0, flat)) < 1.0

    def test_short_inputs_are_defined(self):
        x = torch.rand(2, 80, dtype=torch.float64)
        assert 0.0 <= float(ssim(x, x)) <= 1.0

    def test_masked_batch_matches_cropped(self):
        g = torch.Generator().manual_seed(3)
        target = torch.rand(1, 20, 80, generator=g, dtype=torch.float64)
        pred = target + 0.05 * torch.rand(1, 20, 80, generator=g, dtype=torch.float64)
        mask = torch.zeros(1, 20, dtype=torch.bool)
        mask[0, :14] = True
        masked = float(ssim(pred, target, mask))
        cropped = float(ssim(pred[0, :14], target[0, :14]))
        assert masked == pytest.approx(cropped, abs=1e-9)

    def test_range_and_loss_bounds(self):
        g = torch.Generator().manual_seed(4)
        for _ in range(5):
            pred = torch.randn(15, 80, generator=g, dtype=torch.float64)
            target = torch.randn(15, 80, generator=g, dtype=torch.float64)
            v = float(ssim(pred, target))
            assert 0.0 <= v <= 1.0


def trained_style_outputs(seed=0):
    torch.manual_seed(seed)
    cfg = toy_config(vocab_size=16, n_speakers=2, n_languages=2)
    model = AcousticModel(cfg).double()
    model.eval()
    rng = np.random.default_rng(seed)
    batch = collate([make_item(rng, "a", 4), make_item(rng, "b", 6)],
                    dtype=torch.float64)
    return model, batch


def frozen_target_loss(model, batch):
    """Total loss with the prosody targets frozen at their base values.

    The objective detaches the reference vectors on the target side, so
    a finite-difference probe must hold them constant while the rest of
    the network (including the live fusion of the reference vectors)
    responds to the perturbation; otherwise the probe measures a
    different function than the one autograd differentiates.
    """
    with torch.no_grad():
        base = model.forward_train(batch)
        frozen_u = base.ref_utt_prosody.clone()
        frozen_p = base.ref_phoneme_prosody.clone()

    def loss_fn():
        out = model.forward_train(batch)
        out.ref_utt_prosody = frozen_u
        out.ref_phoneme_prosody = frozen_p
        return total_loss(out).total

    return loss_fn


class TestTotalLoss:
    def test_breakdown_sums_exactly(self):
        model, batch = trained_style_outputs()
        breakdown = total_loss(model.forward_train(batch))
        parts = (breakdown.l_utt + breakdown.l_phone + breakdown.l_pitch
                 + breakdown.l_dur + breakdown.l_iter + breakdown.l_ssim)
        assert float(parts.detach()) == float(breakdown.total.detach())

    def test_all_components_nonnegative(self):
        model, batch = trained_style_outputs(1)
        b = total_loss(model.forward_train(batch))
        for key, value in b.to_dict().items():
            assert value >= 0, key
        assert b.to_dict()["l_ssim"] < 1.0 or b.to_dict()["l_ssim"] == 1.0

    def test_perfect_predictions_give_zero(self):
        model, batch = trained_style_outputs(2)
        out = model.forward_train(batch)
        # Overwrite predictions with their targets.
        out.pred_utt_prosody = out.ref_utt_prosody.clone()
        out.pred_phoneme_prosody = out.ref_phoneme_prosody.clone()
        out.pred_pitch = out.pitch_target.clone()
        from melformer.adaptor import log_duration_targets
        out.pred_logdur = log_duration_targets(out.duration_target)
        out.mel_per_block = [out.mel_target.clone() for _ in out.mel_per_block]
        breakdown = total_loss(out)
        assert float(breakdown.total) == pytest.approx(0.0, abs=1e-9)

    def test_unknown_weight_rejected(self):
        model, batch = trained_style_outputs(3)
        with pytest.raises(ValueError):
            total_loss(model.forward_train(batch), weights={"l_oops": 2.0})

    def test_weights_hook(self):
        model, batch = trained_style_outputs(4)
        out = model.forward_train(batch)
        base = total_loss(out)
        doubled = total_loss(model.forward_train(batch), weights={"l_pitch": 2.0})
        expected = float(base.total) + float(base.l_pitch)
        assert float(doubled.total) == pytest.approx(expected, rel=1e-6)

    def test_default_weights_are_all_one(self):
        assert set(DEFAULT_WEIGHTS) == {
            "l_utt", "l_phone", "l_pitch", "l_dur", "l_iter", "l_ssim"}
        assert all(v == 1.0 for v in DEFAULT_WEIGHTS.values())


class TestGradients:
    def test_ssim_gradient_matches_finite_differences(self):
        g = torch.Generator().manual_seed(5)
        target = torch.rand(14, 80, generator=g, dtype=torch.float64)
        base = (target + 0.1 * torch.rand(14, 80, generator=g, dtype=torch.float64))
        pred = base.clone().requires_grad_(True)

        value = ssim(pred, target)
        (grad,) = torch.autograd.grad(value, pred)
        rng = np.random.default_rng(0)
        h = 1e-6
        checked = 0
        while checked < 20:
            i = int(rng.integers(14))
            j = int(rng.integers(80))
            if abs(float(grad[i, j])) < 1e-7:
                continue
            with torch.no_grad():
                orig = float(pred[i, j])
                pred[i, j] = orig + h
                up = float(ssim(pred, target))
                pred[i, j] = orig - h
                down = float(ssim(pred, target))
                pred[i, j] = orig
            fd = (up - down) / (2 * h)
            analytic = float(grad[i, j])
            rel = abs(fd - analytic) / max(abs(fd), abs(analytic))
            assert rel < 1e-3, (i, j, fd, analytic)
            checked += 1

    def test_total_loss_gradient_through_model(self):
        model, batch = trained_style_outputs(6)
        loss_fn = frozen_target_loss(model, batch)
        assert fd_gradient_check(loss_fn, model.named_parameters(),
                                 n_checks=20) == 20

    def test_prosody_losses_send_no_gradient_into_target_encoders(self):
        # Targets are detached: each predictor loss must not reach the
        # encoder that produced its target. (The prediction side may
        # still consume reference vectors as teacher-forced inputs.)
        model, batch = trained_style_outputs(8)
        out = model.forward_train(batch)

        l_utt = masked_l1(out.pred_utt_prosody, out.ref_utt_prosody.detach())
        grads = torch.autograd.grad(
            l_utt, list(model.adaptor.utterance_reference.parameters()),
            allow_unused=True, retain_graph=True)
        assert all(g is None or g.abs().max() == 0 for g in grads)

        l_phone = masked_l1(out.pred_phoneme_prosody,
                            out.ref_phoneme_prosody.detach(), out.phoneme_mask)
        grads = torch.autograd.grad(
            l_phone, list(model.adaptor.phoneme_reference.parameters()),
            allow_unused=True)
        assert all(g is None or g.abs().max() == 0 for g in grads)

    def test_masked_frames_contribute_zero_gradient(self):
        model, batch = trained_style_outputs(7)
        out = model.forward_train(batch)
        mel = out.mel_target.clone().requires_grad_(True)
        out.mel_per_block = [m for m in out.mel_per_block]
        loss = iterative_mel_loss(out.mel_per_block, mel, out.frame_mask)
        (grad,) = torch.autograd.grad(loss, mel)
        padding = ~out.frame_mask
        assert torch.all(grad[padding] == 0)
