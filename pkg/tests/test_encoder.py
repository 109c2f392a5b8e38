"""Window ops, swin block identities, masking, and the global encoder."""

import numpy as np
import pytest

from vindet import tensor as T
from vindet.encoder import (
    GlobalEncoder,
    PatchMerging,
    StagePlan,
    SwinBlock,
    ViewBranch,
    WindowAttention,
    window_merge,
    window_partition,
)
from vindet.tensor import Tensor, backward, finite_diff_check


def _zero_residuals(block: SwinBlock):
    """Neutralize a block: zero attention output proj and MLP second layer."""
    block.attn.wo.w.tensor.data[:] = 0.0
    block.attn.wo.b.tensor.data[:] = 0.0
    block.mlp.fc2.w.tensor.data[:] = 0.0
    block.mlp.fc2.b.tensor.data[:] = 0.0


class TestWindows:
    def test_window_count(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 8, 8, 4)))
        windows, meta = window_partition(x, 4)
        assert windows.shape == (4, 16, 4)

    def test_roundtrip_bitwise(self):
        x = np.random.default_rng(1).normal(size=(2, 8, 8, 3))
        windows, meta = window_partition(Tensor(x), 4)
        back = window_merge(windows, meta)
        assert np.array_equal(back.data, x)

    def test_ragged_side_padded_and_stripped(self):
        x = np.random.default_rng(2).normal(size=(1, 6, 6, 2))
        windows, meta = window_partition(Tensor(x), 4)
        assert windows.shape[0] == 4  # padded to 8 -> 2x2 windows
        back = window_merge(windows, meta)
        assert back.shape == (1, 6, 6, 2)
        assert np.array_equal(back.data, x)


class TestSwinBlock:
    def test_zeroed_projections_make_identity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 8, 8, 8))
        for shifted in (False, True):
            block = SwinBlock(8, 2, 4, shifted, np.random.default_rng(4))
            _zero_residuals(block)
            out = block(Tensor(x))
            assert np.max(np.abs(out.data - x)) <= 1e-12

    def test_single_token_window_attention_returns_value(self):
        # softmax over one key is 1, so attention output is v at that token
        rng = np.random.default_rng(5)
        attn = WindowAttention(4, 1, 1, rng)
        x = rng.normal(size=(3, 1, 4))
        out = attn(Tensor(x))
        v = x @ attn.wv.w.tensor.data + attn.wv.b.tensor.data
        expect = v @ attn.wo.w.tensor.data + attn.wo.b.tensor.data
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_cyclic_shift_roundtrip(self):
        x = np.random.default_rng(6).normal(size=(1, 8, 8, 2))
        y = T.roll(T.roll(Tensor(x), -2, 1), -2, 2)
        z = T.roll(T.roll(y, 2, 1), 2, 2)
        assert np.array_equal(z.data, x)

    def test_shifted_mask_confines_attention_to_regions(self):
        # two-region construction: rows sum to one over the own pre-shift region
        rng = np.random.default_rng(7)
        block = SwinBlock(8, 2, 4, True, np.random.default_rng(8))
        x = Tensor(rng.normal(size=(1, 8, 8, 8)))
        block(x, keep_attn=True)
        attn = block.attn.last_attn  # (windows, heads, 16, 16)
        from vindet.encoder import _shift_mask
        mask = _shift_mask(8, 4, 2, 8)
        allowed = mask == 0.0
        for k in range(attn.shape[0]):
            for h in range(attn.shape[1]):
                own = np.where(allowed[k], attn[k, h], 0.0).sum(axis=1)
                np.testing.assert_allclose(own, 1.0, atol=1e-6)
                leaked = np.where(~allowed[k], attn[k, h], 0.0).sum()
                assert leaked <= 1e-6


class TestViewBranch:
    def test_two_stage_shapes(self):
        rng = np.random.default_rng(9)
        plans = [StagePlan(1, 4, 2), StagePlan(1, 4, 2)]
        branch = ViewBranch(8, plans, rng)
        x = Tensor(np.random.default_rng(10).normal(size=(3, 8, 8, 8)))
        s0 = branch.run_stage(x, 0)
        s1 = branch.run_stage(s0, 1)
        assert s0.shape == (3, 8, 8, 8)
        assert s1.shape == (3, 4, 4, 16)

    def test_neutralized_stage_is_merged_input(self):
        rng = np.random.default_rng(11)
        plans = [StagePlan(2, 4, 2)]
        branch = ViewBranch(8, plans, rng)
        for block in branch.stages[0]:
            _zero_residuals(block)
        x = np.random.default_rng(12).normal(size=(1, 8, 8, 8))
        out = branch.run_stage(Tensor(x), 0)
        assert np.max(np.abs(out.data - x)) <= 1e-12

    def test_gradient_through_two_stages(self):
        rng = np.random.default_rng(13)
        plans = [StagePlan(1, 2, 2), StagePlan(1, 2, 2)]
        branch = ViewBranch(4, plans, rng)

        def f(x):
            s0 = branch.run_stage(x, 0)
            return T.reduce_sum(branch.run_stage(s0, 1) ** 2)

        x0 = Tensor(np.random.default_rng(14).normal(size=(1, 4, 4, 4)) * 0.5)
        rep = finite_diff_check(f, x0, eps=1e-6, tol=1e-4)
        assert rep.passed, rep

    def test_too_small_side_rejected(self):
        branch = ViewBranch(4, [StagePlan(1, 4, 2)], np.random.default_rng(15))
        with pytest.raises(T.ShapeError):
            branch.run_stage(Tensor(np.zeros((1, 2, 2, 4))), 0)


class TestPatchMerging:
    def test_halves_side_doubles_channels(self):
        pm = PatchMerging(6, np.random.default_rng(16))
        out = pm(Tensor(np.random.default_rng(17).normal(size=(2, 8, 8, 6))))
        assert out.shape == (2, 4, 4, 12)

    def test_odd_side_rejected(self):
        pm = PatchMerging(4, np.random.default_rng(18))
        with pytest.raises(T.ShapeError):
            pm(Tensor(np.zeros((1, 5, 5, 4))))


class TestGlobalEncoder:
    def test_depth_zero_is_patch_embedding(self):
        rng = np.random.default_rng(19)
        enc = GlobalEncoder(3, 8, 32, 0, 2, rng)
        frame = Tensor(np.random.default_rng(20).uniform(0, 1, size=(32, 32, 3)))
        out = enc(frame)
        embed = enc.embed(frame)
        assert out.shape == (4, 4, 32)
        np.testing.assert_array_equal(out.data, embed.data)

    def test_desk_shape(self):
        enc = GlobalEncoder(3, 8, 32, 2, 2, np.random.default_rng(21))
        out = enc(Tensor(np.random.default_rng(22).uniform(0, 1, size=(32, 32, 3))))
        assert out.shape == (4, 4, 32)

    def test_permutation_equivariance(self):
        # no positional term: swapping two patch contents swaps their outputs
        rng = np.random.default_rng(23)
        enc = GlobalEncoder(3, 8, 16, 2, 2, rng)
        frame = np.random.default_rng(24).uniform(0, 1, size=(16, 16, 3))
        swapped = frame.copy()
        swapped[:8, :8], swapped[:8, 8:] = frame[:8, 8:].copy(), frame[:8, :8].copy()
        a = enc(Tensor(frame)).data
        b = enc(Tensor(swapped)).data
        np.testing.assert_allclose(b[0, 0], a[0, 1], atol=1e-10)
        np.testing.assert_allclose(b[0, 1], a[0, 0], atol=1e-10)
        np.testing.assert_allclose(b[1, :], a[1, :], atol=1e-10)

    def test_gradient_reaches_all_blocks(self):
        enc = GlobalEncoder(3, 4, 8, 1, 2, np.random.default_rng(25))
        frame = Tensor(np.random.default_rng(26).uniform(0, 1, size=(8, 8, 3)))
        backward(T.reduce_sum(enc(frame) ** 2))
        for name, p in enc.named_parameters():
            assert p.grad is not None, name
