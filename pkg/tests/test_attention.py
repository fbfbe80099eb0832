import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reettt.attention import (MotionAttention, SkipBranch, TemporalAttention, motion_attention, motion_gate,
                              neutral_temporal, skip_branch, temporal_attention)
from reettt.gradcheck import gradcheck
from reettt.tensor import Tensor


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_neutral_temporal_halves_input():
    h = np.random.default_rng(0).standard_normal((2, 3, 4, 5, 5))
    out = temporal_attention(Tensor(h), neutral_temporal(3, 4))
    np.testing.assert_array_equal(out.data, h * 0.5)


def test_reduction_must_divide():
    with pytest.raises(ValueError):
        TemporalAttention(3, 3, reduction=4)


def test_temporal_gate_never_amplifies():
    rng = np.random.default_rng(1)
    p = TemporalAttention(2, 4, 2, rng)
    h = rng.standard_normal((3, 2, 4, 4, 4))
    out = temporal_attention(Tensor(h), p).data
    assert np.all(np.abs(out) <= np.abs(h))


def test_single_frame_motion_gate_is_bias_only():
    rng = np.random.default_rng(2)
    p = MotionAttention(3, rng)
    p.bias.data = np.array([0.3, -1.0, 2.0])
    h = rng.standard_normal((2, 1, 3, 5, 5))
    out = motion_attention(Tensor(h), p).data
    np.testing.assert_allclose(out, h * (1 + sig(p.bias.data))[None, None, :, None, None], rtol=1e-14)


def test_static_frames_match_single_frame_case():
    rng = np.random.default_rng(3)
    p = MotionAttention(2, rng)
    frame = rng.standard_normal((1, 1, 2, 4, 4))
    h = np.repeat(frame, 4, axis=1)
    gate = motion_gate(Tensor(h), p).data
    np.testing.assert_allclose(gate, np.broadcast_to(sig(p.bias.data)[None, None, :, None, None], gate.shape))


def test_skip_branch_at_neutral_point():
    rng = np.random.default_rng(4)
    pm = MotionAttention(4, rng)
    pm.bias.data = np.full(4, 0.7)
    pt = neutral_temporal(1, 4)
    h = rng.standard_normal((2, 1, 4, 3, 3))
    out = skip_branch(Tensor(h), pm, pt).data
    np.testing.assert_allclose(out, 0.5 * (h * (1 + sig(0.7)) + 0.5 * h), rtol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.sampled_from([1, 2, 4]), st.integers(2, 6), st.integers(2, 6),
       st.integers(0, 2**32 - 1))
def test_shapes_bounds_and_batch_isolation(b, t, c, h, w, seed):
    rng = np.random.default_rng(seed)
    r = 2 if (t * c) % 2 == 0 else 1
    blk = SkipBranch(t, c, r, rng)
    x = rng.standard_normal((b, t, c, h, w))
    me = motion_attention(Tensor(x), blk.motion).data
    ta = temporal_attention(Tensor(x), blk.temporal).data
    out = blk(Tensor(x)).data
    assert me.shape == ta.shape == out.shape == x.shape
    assert np.all(np.abs(me) <= 2 * np.abs(x))
    gate = motion_gate(Tensor(x), blk.motion).data
    assert np.all((gate > 0) & (gate < 1))
    perm = rng.permutation(b)
    np.testing.assert_allclose(blk(Tensor(x[perm])).data, out[perm], rtol=1e-13, atol=1e-15)


def test_attention_gradients():
    rng = np.random.default_rng(5)
    blk = SkipBranch(2, 2, 2, rng)
    blk.temporal.reduce_b.data = np.array([1.0, -1.0])
    h = Tensor(rng.standard_normal((1, 2, 2, 4, 4)), requires_grad=True)
    r = rng.standard_normal(h.shape)
    params = [blk.motion.kernel, blk.motion.bias, blk.temporal.reduce_w, blk.temporal.expand_w]
    assert gradcheck(lambda x, *_: (blk(x) * r).sum(), [h] + params) < 1e-5
