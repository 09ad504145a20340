"""Modulated convolutions: oracles, demodulation statistics, block identities."""

import numpy as np
import pytest

import modpaint.tensor as T
from modpaint.layers import FcLayer
from modpaint.modulation import (
    AffineParamNet,
    CascadeStage,
    GlobalBlock,
    ModulatedConvLayer,
    SpatialBlock,
    mod_conv2d,
    modulate_conv_demod,
    spatial_modulation,
)
from modpaint.prng import Prng


def _t(a, rg=False):
    return T.Tensor(np.asarray(a, dtype=np.float64), requires_grad=rg)


def _impulse_kernel(c):
    k = np.zeros((c, c, 3, 3))
    for i in range(c):
        k[i, i, 1, 1] = 1.0
    return k


# --- mod_conv2d -------------------------------------------------------

def test_mod_conv2d_matches_per_sample_oracle():
    rng = Prng(900)
    x = rng.normal((3, 2, 6, 6))
    k = rng.normal((4, 2, 3, 3))
    s = rng.normal((3, 2)) + 2.0
    got = mod_conv2d(_t(x), _t(k), _t(s), demodulate=True, eps=1e-8).data
    for b in range(3):
        # independent oracle: explicit numpy demodulation + plain conv
        kb = k * s[b][None, :, None, None]
        d = 1.0 / np.sqrt(np.sum(kb**2, axis=(1, 2, 3)) + 1e-8)
        kb = kb * d[:, None, None, None]
        want = T.conv2d(_t(x[b : b + 1]), _t(kb), 1, 1).data
        assert np.abs(got[b : b + 1] - want).max() < 1e-10


def test_mod_conv2d_no_demod_is_linear_in_style():
    rng = Prng(901)
    x = _t(rng.normal((2, 3, 5, 5)))
    k = _t(rng.normal((4, 3, 3, 3)))
    s = rng.normal((2, 3))
    a = mod_conv2d(x, k, _t(3.0 * s), demodulate=False).data
    b = mod_conv2d(x, k, _t(s), demodulate=False).data
    assert np.abs(a - 3.0 * b).max() < 1e-9


def test_mod_conv2d_scale_cancellation_eps_zero():
    rng = Prng(902)
    x = _t(rng.normal((2, 3, 5, 5)))
    k = _t(rng.normal((4, 3, 3, 3)))
    s = rng.normal((2, 3)) + 1.5
    a = mod_conv2d(x, k, _t(1000.0 * s), demodulate=True, eps=0.0).data
    b = mod_conv2d(x, k, _t(s), demodulate=True, eps=0.0).data
    assert np.abs(a - b).max() / np.abs(b).max() < 1e-6


def test_mod_conv2d_unit_output_variance():
    # demodulation pins per-channel output std near 1 for unit-variance input
    rng = Prng(903)
    k = _t(rng.normal((4, 6, 3, 3)))
    acc = []
    for _ in range(64):
        x = _t(rng.normal((8, 6, 16, 16)))
        s = _t(rng.normal((8, 6)))
        out = mod_conv2d(x, k, s, demodulate=True, padding=0)
        acc.append(out.data)
    out = np.concatenate(acc)  # [512, 4, 14, 14]
    stds = out.transpose(1, 0, 2, 3).reshape(4, -1).std(axis=1)
    assert out.shape[0] * out.shape[2] * out.shape[3] >= 1e5
    assert (stds > 0.9).all() and (stds < 1.1).all(), stds


def test_mod_conv2d_shape_errors():
    x = _t(np.zeros((2, 3, 4, 4)))
    k = _t(np.zeros((4, 3, 3, 3)))
    with pytest.raises(ValueError):
        mod_conv2d(x, k, _t(np.zeros((2, 5))))
    with pytest.raises(ValueError):
        mod_conv2d(x, k, _t(np.zeros((3, 3))))


# --- spatial modulation core ------------------------------------------

def test_modulate_conv_demod_identity():
    rng = Prng(910)
    y = rng.normal((2, 3, 8, 8))
    a = np.ones((2, 3, 8, 8))
    out = modulate_conv_demod(_t(y), _t(a), _t(_impulse_kernel(3)), eps=1e-8).data
    want = y / np.sqrt(1.0 + 1e-8)
    assert np.abs(out - want).max() < 1e-12


def test_modulate_conv_demod_scale_cancellation():
    rng = Prng(911)
    y = _t(rng.normal((2, 3, 8, 8)))
    a = rng.normal((2, 3, 8, 8)) + 2.0
    k = _t(rng.normal((3, 3, 3, 3)))
    out1 = modulate_conv_demod(y, _t(a), k, eps=0.0).data
    out2 = modulate_conv_demod(y, _t(777.0 * a), k, eps=0.0).data
    assert np.abs(out1 - out2).max() / np.abs(out1).max() < 1e-6


def test_modulate_conv_demod_uniform_a_equals_mod_conv2d():
    # constant A collapses the spatial path onto plain style modulation
    rng = Prng(912)
    y = _t(rng.normal((2, 3, 8, 8)))
    k = _t(rng.normal((3, 3, 3, 3)))
    a = _t(np.ones((2, 3, 8, 8)))
    got = modulate_conv_demod(y, a, k).data
    want = mod_conv2d(y, k, _t(np.ones((2, 3)))).data
    assert np.abs(got - want).max() < 1e-10


def test_modulate_conv_demod_output_variance():
    rng = Prng(913)
    k = _t(rng.normal((4, 6, 3, 3)))
    acc = []
    for _ in range(64):
        y = _t(rng.normal((8, 6, 16, 16)))
        a = _t(rng.normal((8, 6, 16, 16)) * 1.0 + 0.5)
        acc.append(modulate_conv_demod(y, a, k).data)
    out = np.concatenate(acc)
    stds = out.transpose(1, 0, 2, 3).reshape(4, -1).std(axis=1)
    assert out.shape[0] * out.shape[2] * out.shape[3] >= 1e5
    assert (stds > 0.8).all() and (stds < 1.25).all(), stds


# --- affine parameter network -----------------------------------------

def test_apn_zero_heads_at_init():
    apn = AffineParamNet(4, 6, Prng(920))
    x = _t(Prng(30).normal((2, 4, 8, 8)))
    a0, b = apn(x)
    assert a0.shape == (2, 6, 8, 8) and b.shape == (2, 6, 8, 8)
    assert np.abs(a0.data).max() == 0.0 and np.abs(b.data).max() == 0.0


def test_apn_matches_manual_composition():
    apn = AffineParamNet(4, 6, Prng(921))
    rng = Prng(31)
    apn.head_scale.w = _t(rng.normal((6, 6, 1, 1)) * 0.1, rg=True)
    apn.head_shift.w = _t(rng.normal((6, 6, 1, 1)) * 0.1, rg=True)
    x = _t(rng.normal((2, 4, 8, 8)))
    a0, b = apn(x)
    t1 = apn.reduce(x)
    t2 = T.add(apn.trunk3(t1), apn.trunk1(t1))
    assert np.abs(a0.data - apn.head_scale(t2).data).max() < 1e-12
    assert np.abs(b.data - apn.head_shift(t2).data).max() < 1e-12


# --- spatial modulation op --------------------------------------------

def _fresh_sb_parts(c, g_dim, seed):
    apn = AffineParamNet(c, c, Prng(seed))
    alpha = FcLayer(g_dim, c, Prng(seed + 1), zero_weight=True, bias_init=1.0)
    return apn, alpha


def test_spatial_modulation_identity_configuration():
    c, g_dim = 3, 4
    apn, alpha = _fresh_sb_parts(c, g_dim, 930)
    rng = Prng(32)
    y = rng.normal((2, c, 8, 8))
    x = _t(rng.normal((2, c, 8, 8)))
    g = _t(rng.normal((2, g_dim)))
    out = spatial_modulation(_t(y), x, g, _t(_impulse_kernel(c)), None, apn, alpha).data
    assert np.abs(out - y / np.sqrt(1.0 + 1e-8)).max() < 1e-12


def test_spatial_modulation_ablated_equals_global_modulation():
    # zero APN heads + unit alpha: spatial path equals style modulation with style 1
    c, g_dim = 3, 4
    apn, alpha = _fresh_sb_parts(c, g_dim, 931)
    rng = Prng(33)
    y = _t(rng.normal((2, c, 8, 8)))
    x = _t(rng.normal((2, c, 8, 8)))
    g = _t(rng.normal((2, g_dim)))
    k = _t(rng.normal((c, c, 3, 3)))
    got = spatial_modulation(y, x, g, k, None, apn, alpha).data
    want = mod_conv2d(y, k, _t(np.ones((2, c)))).data
    assert np.abs(got - want).max() < 1e-10


def test_spatial_modulation_noise_is_additive_scaled():
    c, g_dim = 3, 4
    apn, alpha = _fresh_sb_parts(c, g_dim, 932)
    rng = Prng(34)
    y = _t(rng.normal((2, c, 8, 8)))
    x = _t(rng.normal((2, c, 8, 8)))
    g = _t(rng.normal((2, g_dim)))
    k = _t(rng.normal((c, c, 3, 3)))
    noise = rng.normal((2, 1, 8, 8))
    amp = np.array([0.5, -1.0, 2.0])
    base = spatial_modulation(y, x, g, k, None, apn, alpha).data
    with_noise = spatial_modulation(y, x, g, k, _t(noise), apn, alpha, noise_amp=_t(amp)).data
    want = base + noise * amp[None, :, None, None]
    assert np.abs(with_noise - want).max() < 1e-12


# --- decoder blocks ---------------------------------------------------

def test_global_block_matches_manual_composition():
    gb = GlobalBlock(3, 4, 6, Prng(940))
    rng = Prng(35)
    f = _t(rng.normal((2, 3, 4, 4)))
    g = _t(rng.normal((2, 6)))
    x, out = gb(f, g)
    man_x = T.leaky_relu(
        T.add_channel_bias(
            mod_conv2d(
                T.upsample_nearest2x(f),
                T.mul_scalar(gb.conv_up.kernel, gb.conv_up.kscale),
                gb.conv_up.affine(g),
            ),
            gb.conv_up.bias,
        ),
        0.2,
    )
    man_out = T.leaky_relu(
        T.add_channel_bias(
            mod_conv2d(man_x, T.mul_scalar(gb.conv.kernel, gb.conv.kscale), gb.conv.affine(g)),
            gb.conv.bias,
        ),
        0.2,
    )
    assert np.abs(x.data - man_x.data).max() < 1e-12
    assert np.abs(out.data - man_out.data).max() < 1e-12


def test_global_block_identity_configuration():
    gb = GlobalBlock(3, 3, 6, Prng(941))
    gb.conv_up = ModulatedConvLayer(3, 3, 3, 6, Prng(942), demodulate=False)
    gb.conv = ModulatedConvLayer(3, 3, 3, 6, Prng(943), demodulate=False)
    # compensate the run-time kernel scale so the effective kernel is the impulse
    gb.conv_up.kernel = _t(_impulse_kernel(3) / gb.conv_up.kscale, rg=True)
    gb.conv.kernel = _t(_impulse_kernel(3) / gb.conv.kscale, rg=True)
    rng = Prng(36)
    f = _t(np.abs(rng.normal((2, 3, 4, 4))))  # nonneg: leaky acts as identity
    g = _t(rng.normal((2, 6)))
    x, out = gb(f, g)
    up = T.upsample_nearest2x(f).data
    assert np.abs(x.data - up).max() < 1e-12
    assert np.abs(out.data - up).max() < 1e-12


def test_spatial_block_matches_manual_composition():
    sb = SpatialBlock(3, 4, 6, Prng(950))
    rng = Prng(37)
    f_s = _t(rng.normal((2, 3, 4, 4)))
    x = _t(rng.normal((2, 4, 8, 8)))
    g = _t(rng.normal((2, 6)))
    noise = _t(rng.normal((2, 1, 8, 8)))
    out = sb(f_s, x, g, noise)
    y = sb.conv_up(T.upsample_nearest2x(f_s), g)
    man = spatial_modulation(y, x, g, T.mul_scalar(sb.kernel, sb.kscale), noise,
                             sb.apn, sb.alpha_fc, sb.noise_amp)
    assert np.abs(out.data - man.data).max() < 1e-12


def test_cascade_stage_threads_x_and_ablates_to_global():
    stage = CascadeStage(3, 4, 6, Prng(960))
    rng = Prng(38)
    f_g = _t(rng.normal((2, 3, 4, 4)))
    f_s = _t(rng.normal((2, 3, 4, 4)))
    g = _t(rng.normal((2, 6)))
    x, f_g_out, f_s_out = stage(f_g, f_s, g, None)
    assert x.shape == (2, 4, 8, 8)
    assert f_g_out.shape == (2, 4, 8, 8)
    assert f_s_out.shape == (2, 4, 8, 8)
    # APN heads and noise amp are zero at init, so the spatial output must
    # collapse onto a plain global modulation of its Y path
    y = stage.sb.conv_up(T.upsample_nearest2x(f_s), g)
    want = mod_conv2d(y, T.mul_scalar(stage.sb.kernel, stage.sb.kscale),
                      _t(np.ones((2, 4)))).data
    assert np.abs(f_s_out.data - want).max() < 1e-10


def test_cascade_x_identical_to_gb_x():
    stage = CascadeStage(2, 3, 4, Prng(961))
    rng = Prng(39)
    f_g = _t(rng.normal((1, 2, 4, 4)))
    f_s = _t(rng.normal((1, 2, 4, 4)))
    g = _t(rng.normal((1, 4)))
    x, _, _ = stage(f_g, f_s, g, None)
    x_direct, _ = stage.gb(f_g, g)
    assert np.array_equal(x.data, x_direct.data)


# --- gradient checks --------------------------------------------------

def test_grad_mod_conv2d():
    rng = Prng(970)
    x = rng.normal((2, 2, 4, 4))
    k = rng.normal((3, 2, 3, 3))
    s = rng.normal((2, 2)) + 1.5
    err = T.check_gradients(
        lambda xx, kk, ss: T.mean_all(T.square(mod_conv2d(xx, kk, ss))), [x, k, s]
    )
    assert err < 1e-4, err


def test_grad_modulate_conv_demod():
    rng = Prng(971)
    y = rng.normal((1, 2, 4, 4))
    a = rng.normal((1, 2, 4, 4)) + 1.0
    k = rng.normal((2, 2, 3, 3))
    err = T.check_gradients(
        lambda yy, aa, kk: T.mean_all(T.square(modulate_conv_demod(yy, aa, kk))), [y, a, k]
    )
    assert err < 1e-4, err


def test_grad_apn():
    apn = AffineParamNet(2, 3, Prng(972))
    rng = Prng(973)
    apn.head_scale.w = _t(rng.normal((3, 3, 1, 1)) * 0.3, rg=True)
    apn.head_shift.w = _t(rng.normal((3, 3, 1, 1)) * 0.3, rg=True)
    x0 = rng.normal((1, 2, 4, 4))
    w0 = apn.trunk3.w.data.copy()

    def f(xx, ww):
        apn.trunk3.w = ww
        a0, b = apn(xx)
        return T.mean_all(T.square(T.add(a0, b)))

    err = T.check_gradients(f, [x0, w0])
    assert err < 1e-3, err


def test_grad_cascade_stage():
    stage = CascadeStage(2, 2, 3, Prng(974))
    rng = Prng(975)
    stage.sb.apn.head_scale.w = _t(rng.normal((2, 2, 1, 1)) * 0.3, rg=True)
    stage.sb.apn.head_shift.w = _t(rng.normal((2, 2, 1, 1)) * 0.3, rg=True)
    stage.sb.noise_amp = _t(rng.normal(2) * 0.1, rg=True)
    f_g0 = rng.normal((1, 2, 4, 4))
    f_s0 = rng.normal((1, 2, 4, 4))
    g0 = rng.normal((1, 3))
    n0 = rng.normal((1, 1, 8, 8))
    k0 = stage.sb.kernel.data.copy()

    def f(fg, fs, gg, nn, kk):
        stage.sb.kernel = kk
        x, f_g_out, f_s_out = stage(fg, fs, gg, nn)
        return T.mean_all(T.square(T.concat([x, f_g_out, f_s_out], 1)))

    err = T.check_gradients(f, [f_g0, f_s0, g0, n0, k0])
    assert err < 1e-3, err
