"""Spectral transform and FFC encoder: identities, convolution theorem, shapes."""

import numpy as np
import pytest

import modpaint.tensor as T
from modpaint.ffc import EncoderStage, FfcBlock, FfcEncoder, SpectralTransform, identity_1x1
from modpaint.prng import Prng


def _rand(seed, shape, scale=1.0):
    return Prng(seed).normal(shape) * scale


def test_spectral_identity_config():
    st = SpectralTransform(3, 3, Prng(1), activation=False)
    identity_1x1(st.pre)
    identity_1x1(st.freq)
    identity_1x1(st.post)
    x = _rand(10, (2, 3, 8, 8))
    out = st(T.Tensor(x)).data
    assert np.abs(out - x).max() < 1e-6


def _circular_conv(x, k):
    # independent oracle: per-channel circular (true) convolution
    out = np.zeros_like(x)
    for dy in range(k.shape[1]):
        for dx in range(k.shape[2]):
            out += k[:, dy, dx][None, :, None, None] * np.roll(x, (dy, dx), axis=(2, 3))
    return out


def test_spectral_convolution_theorem():
    h = w = 8
    c = 2
    x = _rand(20, (2, c, h, w))
    k = _rand(21, (c, 3, 3))
    kpad = np.zeros((c, h, w))
    kpad[:, :3, :3] = k
    khat = np.fft.rfft2(kpad)

    st = SpectralTransform(c, c, Prng(2), activation=False)
    identity_1x1(st.pre)
    identity_1x1(st.post)
    kr = T.Tensor(khat.real[None])
    ki = T.Tensor(khat.imag[None])

    def freq_fn(spec):
        n = spec.shape[1] // 2
        xr = T.narrow(spec, 1, 0, n)
        xi = T.narrow(spec, 1, n, n)
        krb = T.broadcast_to(kr, xr.shape)
        kib = T.broadcast_to(ki, xr.shape)
        yr = T.sub(T.mul(xr, krb), T.mul(xi, kib))
        yi = T.add(T.mul(xr, kib), T.mul(xi, krb))
        return T.concat([yr, yi], 1)

    got = st(T.Tensor(x), freq_fn=freq_fn).data
    want = _circular_conv(x, k)
    assert np.abs(got - want).max() / np.abs(want).max() < 1e-6


def test_spectral_linear_when_activation_bypassed():
    st = SpectralTransform(2, 3, Prng(3), activation=False)
    x = _rand(30, (1, 2, 8, 8))
    y = _rand(31, (1, 2, 8, 8))
    lhs = st(T.Tensor(2.0 * x - 3.0 * y)).data
    rhs = 2.0 * st(T.Tensor(x)).data - 3.0 * st(T.Tensor(y)).data
    assert np.abs(lhs - rhs).max() < 1e-8


def test_spectral_impulse_has_global_support():
    # one impulse influences every output pixel in a single layer; biases are
    # randomized because at the zero-bias point the activation preserves a
    # parity symmetry of the impulse spectrum that leaves lattice zeros
    st = SpectralTransform(2, 2, Prng(4))
    r = Prng(1004)
    st.pre.b = T.Tensor(r.normal(2) * 0.5, requires_grad=True)
    st.freq.b = T.Tensor(r.normal(4) * 0.5, requires_grad=True)
    st.post.b = T.Tensor(r.normal(2) * 0.5, requires_grad=True)
    x = np.zeros((1, 2, 8, 8))
    x[0, 0, 3, 5] = 1.3
    x[0, 1, 1, 2] = 0.7
    response = st(T.Tensor(x)).data - st(T.Tensor(np.zeros_like(x))).data
    assert np.abs(response).min() > 0.0


def test_ffc_block_zero_input_zero_output():
    blk = FfcBlock(2, 2, 3, 3, Prng(5))
    zl = T.Tensor(np.zeros((2, 2, 8, 8)))
    zg = T.Tensor(np.zeros((2, 2, 8, 8)))
    y_l, y_g = blk(zl, zg)
    assert np.abs(y_l.data).max() == 0.0
    assert np.abs(y_g.data).max() == 0.0


def test_ffc_block_stem_without_global_input():
    blk = FfcBlock(4, 0, 3, 3, Prng(6))
    y_l, y_g = blk(T.Tensor(_rand(40, (2, 4, 8, 8))), None)
    assert y_l.shape == (2, 3, 8, 8)
    assert y_g.shape == (2, 3, 8, 8)


def test_encoder_stage_halves_resolution():
    stage = EncoderStage(3, 3, 4, 4, Prng(7))
    y_l, y_g = stage(T.Tensor(_rand(41, (2, 3, 16, 16))), T.Tensor(_rand(42, (2, 3, 16, 16))))
    assert y_l.shape == (2, 4, 8, 8)
    assert y_g.shape == (2, 4, 8, 8)


def test_encoder_feature_pyramid_shapes():
    enc = FfcEncoder(resolution=32, widths=(8, 12, 16), style_dim=20, rng=Prng(8))
    x = T.Tensor(_rand(43, (2, 4, 32, 32)))
    out = enc(x)
    shapes = [f.shape for f in out.features]
    assert shapes == [(2, 8, 16, 16), (2, 12, 8, 8), (2, 16, 4, 4)]
    assert out.style.shape == (2, 20)
    norms = np.linalg.norm(out.style.data, axis=1)
    assert np.abs(norms - 1.0).max() < 1e-6


def test_encoder_rejects_bad_resolution():
    with pytest.raises(ValueError):
        FfcEncoder(resolution=24, widths=(8, 8, 8), style_dim=8, rng=Prng(9))
    with pytest.raises(ValueError):
        FfcEncoder(resolution=8, widths=(8, 8, 8), style_dim=8, rng=Prng(9))


def test_encoder_deterministic_init_and_forward():
    a = FfcEncoder(resolution=16, widths=(6, 8), style_dim=8, rng=Prng(11))
    b = FfcEncoder(resolution=16, widths=(6, 8), style_dim=8, rng=Prng(11))
    pa, pb = a.named_params(), b.named_params()
    assert pa.keys() == pb.keys()
    for k in pa:
        assert np.array_equal(pa[k].data, pb[k].data)
    x = T.Tensor(_rand(44, (1, 4, 16, 16)))
    assert np.array_equal(a(x).style.data, b(x).style.data)


def test_encoder_state_roundtrip():
    a = FfcEncoder(resolution=16, widths=(6, 8), style_dim=8, rng=Prng(12))
    b = FfcEncoder(resolution=16, widths=(6, 8), style_dim=8, rng=Prng(13))
    x = T.Tensor(_rand(45, (1, 4, 16, 16)))
    assert not np.array_equal(a(x).style.data, b(x).style.data)
    b.load_state(a.named_params())
    assert np.array_equal(a(x).style.data, b(x).style.data)


def test_load_state_reports_missing_key():
    a = FfcEncoder(resolution=16, widths=(6, 8), style_dim=8, rng=Prng(14))
    state = a.named_params()
    state.pop(next(iter(state)))
    b = FfcEncoder(resolution=16, widths=(6, 8), style_dim=8, rng=Prng(15))
    with pytest.raises(KeyError):
        b.load_state(state)


def test_grad_ffc_block():
    blk = FfcBlock(2, 2, 2, 2, Prng(16))
    rng = Prng(46)
    x_l = rng.normal((1, 2, 4, 4))
    x_g = rng.normal((1, 2, 4, 4))
    w_l2l = blk.l2l.w.data.copy()
    w_freq = blk.spectral.freq.w.data.copy()

    def f(xl, xg, wl, wf):
        blk.l2l.w = wl
        blk.spectral.freq.w = wf
        y_l, y_g = blk(xl, xg)
        return T.mean_all(T.square(T.concat([y_l, y_g], 1)))

    err = T.check_gradients(f, [x_l, x_g, w_l2l, w_freq])
    assert err < 1e-3, err
