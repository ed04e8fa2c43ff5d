import numpy as np
import pytest
import torch

from melformer.conformer import (
    ConformerBlock,
    ConformerStack,
    ConvFeedForward,
    DepthwiseConvModule,
    RelativeSelfAttention,
    apply_mask,
    lengths_to_mask,
)

DIM, HEADS, FF, KERNEL, DW = 16, 4, 32, 3, 7


def zero_parameters(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def rand_input(b, t, dim=DIM, lengths=None, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(b, t, dim, generator=g, dtype=dtype)
    if lengths is None:
        mask = torch.ones(b, t, dtype=torch.bool)
    else:
        mask = lengths_to_mask(torch.tensor(lengths), t)
    return apply_mask(x, mask), mask


class TestConvFeedForward:
    def test_zero_parameters_pass_input_through(self):
        ff = ConvFeedForward(DIM, FF, KERNEL, dropout=0.0).double()
        zero_parameters(ff)
        x, mask = rand_input(2, 9)
        assert torch.equal(ff(x, mask), x)

    def test_shape_preserved(self):
        ff = ConvFeedForward(DIM, FF, KERNEL, dropout=0.0).double()
        for t in (1, 2, 17):
            x, mask = rand_input(3, t)
            assert ff(x, mask).shape == x.shape

    def test_padding_does_not_change_valid_frames(self):
        ff = ConvFeedForward(DIM, FF, KERNEL, dropout=0.0).double()
        x, mask = rand_input(1, 8)
        base = ff(x, mask)
        xp = torch.cat([x, torch.zeros(1, 5, DIM, dtype=x.dtype)], dim=1)
        mp = torch.cat([mask, torch.zeros(1, 5, dtype=torch.bool)], dim=1)
        padded = ff(xp, mp)
        assert torch.allclose(padded[:, :8], base, atol=1e-12)
        assert torch.all(padded[:, 8:] == 0)


class TestDepthwiseConvModule:
    def test_zero_parameters_pass_input_through(self):
        m = DepthwiseConvModule(DIM, DW, dropout=0.0).double()
        zero_parameters(m)
        x, mask = rand_input(2, 9)
        assert torch.equal(m(x, mask), x)

    def test_constant_input_gives_constant_output(self):
        m = DepthwiseConvModule(DIM, DW, dropout=0.0).double()
        x = torch.randn(1, 1, DIM, dtype=torch.float64).repeat(1, 12, 1)
        mask = torch.ones(1, 12, dtype=torch.bool)
        y = m(x, mask)
        # Interior positions see identical neighborhoods.
        inner = y[0, DW // 2 : 12 - DW // 2]
        assert torch.allclose(inner, inner[0].expand_as(inner), atol=1e-10)

    def test_single_frame(self):
        m = DepthwiseConvModule(DIM, DW, dropout=0.0).double()
        x, mask = rand_input(1, 1)
        y = m(x, mask)
        assert y.shape == (1, 1, DIM)
        assert torch.isfinite(y).all()


class TestRelativeSelfAttention:
    def test_toeplitz_logits_on_constant_input(self):
        attn = RelativeSelfAttention(DIM, HEADS, dropout=0.0).double()
        t = 12
        x = torch.randn(1, 1, DIM, dtype=torch.float64).repeat(1, t, 1)
        mask = torch.ones(1, t, dtype=torch.bool)
        logits = attn.logits(x, mask)
        for h in range(HEADS):
            mat = logits[0, h]
            for off in range(-t + 1, t):
                diag = torch.diagonal(mat, offset=off)
                assert (diag.max() - diag.min()).abs() < 1e-10

    def test_single_position_weight_is_one(self):
        attn = RelativeSelfAttention(DIM, HEADS, dropout=0.0).double()
        x, mask = rand_input(1, 1)
        y = attn(x, mask)
        # Softmax over one key: output = x + out_proj(value(x)).
        normed = apply_mask(attn.norm(x), mask)
        v = attn.v_proj(normed)
        expected = x + attn.out_proj(v)
        assert torch.allclose(y, expected, atol=1e-12)

    def test_masked_key_content_is_ignored(self):
        attn = RelativeSelfAttention(DIM, HEADS, dropout=0.0).double()
        x, _ = rand_input(1, 7)
        mask = torch.ones(1, 7, dtype=torch.bool)
        mask[0, 4] = False
        x = apply_mask(x, mask)
        base = attn(x, mask)
        perturbed = x.clone()
        perturbed[0, 4] = torch.randn(DIM, dtype=torch.float64)
        # Inputs at masked positions are zeroed on entry in the stack;
        # emulate a perturbation that survives to the module.
        out = attn(perturbed, mask)
        assert torch.allclose(out, base, atol=1e-12)

    def test_fully_masked_row_yields_zero(self):
        attn = RelativeSelfAttention(DIM, HEADS, dropout=0.0).double()
        x, _ = rand_input(1, 5)
        mask = torch.zeros(1, 5, dtype=torch.bool)
        y = attn(x, mask)
        assert torch.all(y == 0)


class TestConformerBlock:
    def make(self, dropout=0.0):
        return ConformerBlock(DIM, FF, KERNEL, DW, HEADS, dropout).double()

    def test_shape_preserved(self):
        block = self.make()
        for b, t in ((1, 1), (2, 5), (3, 20)):
            x, mask = rand_input(b, t, seed=t)
            assert block(x, mask).shape == (b, t, DIM)

    def test_zeroed_branches_reduce_to_layer_norm(self):
        block = self.make()
        zero_parameters(block.ff1)
        zero_parameters(block.conv_module)
        zero_parameters(block.attention)
        zero_parameters(block.ff2)
        with torch.no_grad():
            block.final_norm.weight.fill_(1.0)
            block.final_norm.bias.zero_()
        x, mask = rand_input(2, 6)
        assert torch.allclose(block(x, mask), block.final_norm(x), atol=1e-12)

    def test_deterministic_without_dropout(self):
        block = self.make()
        block.eval()
        x, mask = rand_input(2, 10)
        assert torch.equal(block(x, mask), block(x, mask))

    def test_masked_positions_zero_after_block(self):
        block = self.make()
        x, mask = rand_input(3, 11, lengths=[11, 7, 2], seed=5)
        y = block(x, mask)
        assert torch.all(y[~mask] == 0)


class TestConformerStack:
    def make(self, n):
        return ConformerStack(n, DIM, FF, KERNEL, DW, HEADS, 0.0).double()

    def test_empty_stack_is_identity(self):
        stack = self.make(0)
        x, mask = rand_input(2, 6)
        out, per_block = stack(x, mask)
        assert torch.equal(out, x)
        assert per_block == []

    def test_six_blocks_give_six_outputs(self):
        stack = self.make(6)
        x, mask = rand_input(1, 4)
        out, per_block = stack(x, mask)
        assert len(per_block) == 6
        assert all(p.shape == (1, 4, DIM) for p in per_block)
        assert torch.equal(per_block[-1], out)

    def test_padding_invariance_through_stack(self):
        stack = self.make(2)
        x, mask = rand_input(1, 9, seed=3)
        base, _ = stack(x, mask)
        pad = 6
        xp = torch.cat([x, torch.zeros(1, pad, DIM, dtype=x.dtype)], dim=1)
        mp = torch.cat([mask, torch.zeros(1, pad, dtype=torch.bool)], dim=1)
        padded, _ = stack(xp, mp)
        assert (padded[:, :9] - base).abs().max() < 1e-5
        assert torch.all(padded[:, 9:] == 0)


class TestGradients:
    def test_two_block_stack_matches_finite_differences(self):
        from conftest import fd_gradient_check

        torch.manual_seed(0)
        stack = ConformerStack(2, 8, 16, 3, 7, 2, 0.0).double()
        x, mask = rand_input(2, 6, dim=8, lengths=[6, 4], seed=9)

        def loss_fn():
            out, _ = stack(x, mask)
            return (out**2).mean()

        assert fd_gradient_check(loss_fn, stack.named_parameters()) == 20
