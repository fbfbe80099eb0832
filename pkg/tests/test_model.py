import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reettt import functional as F
from reettt.gradcheck import directional_gradcheck
from reettt.losses import LossConfig, composite_loss, focal_weight
from reettt.model import REETTT, ModelConfig, ablated, freeze_backbone, is_adaptation_param, select_params, translate
from reettt.optim import AdamW, CosineSchedule
from reettt.tensor import Tensor, no_grad
from reettt.ttt import TTTConfig

TINY = ModelConfig(t=2, h=8, w=8, enc_channels=(4, 8, 8), n_blocks=1, rrdb_count=1, rrdb_layers=2, rrdb_growth=4)


def inputs(cfg, b=1, seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, (b, cfg.t, 1, cfg.h, cfg.w))


def test_forward_shape_and_range():
    m = REETTT(TINY, 0)
    out = m(Tensor(inputs(TINY, 2))).data
    assert out.shape == (2, 2, 1, 8, 8)
    assert out.min() >= 0.0 and out.max() <= 1.0


@settings(max_examples=6, deadline=None)
@given(st.integers(1, 3), st.sampled_from([(4, 4), (8, 4), (8, 12)]), st.sampled_from([1, 2]),
       st.integers(0, 1000))
def test_shape_contract_over_configs(t, hw, n_down, seed):
    chans = (4,) + (4,) * n_down
    scale = 2 ** n_down
    h, w = (max(scale, d - d % scale) for d in hw)
    cfg = ModelConfig(t=t, h=h, w=w, enc_channels=chans, n_blocks=1, rrdb_count=1, rrdb_layers=1, rrdb_growth=2,
                      ttt=TTTConfig(reduction=1))
    m = REETTT(cfg, seed)
    with no_grad():
        assert m(Tensor(inputs(cfg, 2, seed))).shape == (2, t, 1, h, w)


def test_indivisible_dims_rejected():
    with pytest.raises(ValueError):
        ModelConfig(h=30)


def test_encoder_is_per_frame():
    m = REETTT(TINY, 1)
    x = inputs(TINY, 1, 1)
    low, lat = m.encode(Tensor(x))
    low_p, lat_p = m.encode(Tensor(x[:, ::-1].copy()))
    np.testing.assert_array_equal(low_p.data, low.data[:, ::-1])
    np.testing.assert_array_equal(lat_p.data, lat.data[:, ::-1])
    assert lat.shape == (1, 2, 8, 2, 2)


def test_zero_input_encodes_bias_path():
    m = REETTT(TINY, 2)
    for b in m.encoder.biases:
        b.data = np.linspace(-0.5, 0.5, b.size)
    low, lat = m.encode(Tensor(np.zeros((1, 2, 1, 8, 8))))
    stem = F.gelu(Tensor(m.encoder.biases[0].data)).data
    np.testing.assert_allclose(low.data, np.broadcast_to(stem[None, None, :, None, None], low.shape), rtol=1e-15)
    np.testing.assert_array_equal(lat.data[:, 0], lat.data[:, 1])


def test_translate_identity_with_no_blocks():
    m = REETTT(ModelConfig(t=2, h=8, w=8, enc_channels=(4, 8, 8), n_blocks=0), 0)
    h = Tensor(np.random.default_rng(0).standard_normal((1, 2, 8, 2, 2)))
    assert translate(h, m.translator) is h


def test_modes_identical_without_inner_steps():
    cfg = ModelConfig(**{**TINY.__dict__, "ttt": TTTConfig(steps_per_token=0)})
    m = REETTT(cfg, 3)
    x = Tensor(inputs(cfg, 1, 3))
    with no_grad():
        np.testing.assert_array_equal(m(x, "ttt_on").data, m(x, "ttt_off").data)
        np.testing.assert_array_equal(m(x, "ttt_off").data, m(x, "ttt_off").data)


def test_ttt_on_does_not_touch_parameters():
    m = REETTT(TINY, 4)
    before = {k: v.data.copy() for k, v in m.parameters().items()}
    with no_grad():
        m(Tensor(inputs(TINY, 1, 4)), "ttt_on")
    for k, v in m.parameters().items():
        np.testing.assert_array_equal(v.data, before[k])


def test_zero_sr_output_contributes_nothing():
    m = REETTT(TINY, 5)
    m.sr.out_w.data[:] = 0.0
    m.sr.out_b.data[:] = 0.0
    x = Tensor(inputs(TINY, 1, 5))
    with no_grad():
        low, lat = m.encode(x)
        z = m.translator(lat)
        dec = m.decoder(z.reshape(2, *z.shape[2:])).data
        skip = m.skip(low).data.reshape(2, 4, 8, 8)
        wts = F.softmax(m.fusion, axis=0).data
        fused = dec * wts[0][None, :, None, None] + skip * wts[1][None, :, None, None]
        expect = np.clip(F.conv2d(Tensor(fused), m.head_w, m.head_b).data, 0, 1)
        np.testing.assert_allclose(m(x).data.reshape(expect.shape), expect, rtol=1e-13, atol=1e-15)


def test_decoder_only_fusion():
    m = REETTT(TINY, 6)
    m.fusion.data[:] = np.array([[40.0], [-40.0], [-40.0]])
    x = Tensor(inputs(TINY, 1, 6))
    with no_grad():
        _, lat = m.encode(x)
        dec = m.decoder(m.translator(lat).reshape(2, 8, 2, 2))
        plain = F.conv2d(dec, m.head_w, m.head_b).clip(0.0, 1.0).data
        np.testing.assert_allclose(m(x).data.reshape(plain.shape), plain, atol=1e-10)


def test_partition_and_freeze():
    m = REETTT(TINY, 7)
    backbone, adapt = m.partition()
    names = set(m.parameters())
    assert set(backbone) | set(adapt) == names and not set(backbone) & set(adapt)
    assert "fusion" in adapt and any(n.endswith(".W0") for n in adapt)
    assert all(n.startswith(("encoder.", "decoder.", "translator.", "sr.", "head_")) for n in backbone)
    trainable = freeze_backbone(m)
    assert set(trainable) == set(adapt)
    snapshot = {k: v.data.copy() for k, v in backbone.items()}
    opt = AdamW(trainable, CosineSchedule(1e-2, 1e-3, 3))
    assert set(opt.state.m) == set(adapt)
    y = inputs(TINY, 1, 8)
    for _ in range(2):
        opt.zero_grad()
        composite_loss(m(Tensor(inputs(TINY, 1, 7))), y).backward()
        opt.step()
    for k, v in backbone.items():
        assert v.grad is None
        np.testing.assert_array_equal(v.data, snapshot[k])
    with pytest.raises(KeyError):
        select_params(m, ["nope"])
    assert is_adaptation_param("skip.motion.kernel") and not is_adaptation_param("translator.blocks.0.ff_w1")


def test_ablations_change_structure():
    full = REETTT(TINY, 0)
    lin = REETTT(ablated(TINY, linear_proj=True), 0)
    assert any("theta_v" in n for n in lin.parameters()) and not any("theta_v" in n for n in full.parameters())
    assert REETTT(ablated(TINY, no_skip=True), 0).active_streams() == ("decoder", "sr")
    assert REETTT(ablated(TINY, no_rrdb=True), 0).active_streams() == ("decoder", "skip")


def test_full_model_gradient_tiny():
    rng = np.random.default_rng(11)
    m = REETTT(TINY, 11)
    x = Tensor(inputs(TINY, 1, 11))
    y = np.random.default_rng(12).uniform(0, 1, (1, 2, 1, 8, 8))
    cfg = LossConfig()
    with no_grad():
        coef = focal_weight(m(x).data, y, cfg)
    params = list(m.parameters().values())
    assert directional_gradcheck(lambda *p: composite_loss(m(x), y, cfg, focal=coef), params, rng) < 1e-4
