"""Built-in verification: fast independent checks of the numerical core.

Every check recomputes its expectation from scratch (loop-nest
convolution, pure-python generator reference, closed forms), so a check
only passes when two unrelated computations agree.  The suite is meant
to run in seconds; the full test suite is the thorough version.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .maskgen import MaskConfig, make_blob_silhouettes, sample_object_aware_mask
from .pngio import read_png, write_png
from .prng import Prng
from .tensor import (
    Tensor,
    add,
    broadcast_to,
    conv2d,
    fc,
    grad,
    irfft2,
    leaky_relu,
    mul,
    mul_scalar,
    reshape,
    rfft2,
    softplus,
    square,
    sum_all,
    sum_axes,
    tape,
)
from .training import masked_r1_penalty


class Check:
    def __init__(self, name, fn):
        self.name = name
        self.fn = fn


def _check_prng_reference():
    """Counter outputs against a straight-line pure-python mix."""
    mask = (1 << 64) - 1

    def ref(seed, n):
        z = (seed + n * 0x9E3779B97F4A7C15) & mask
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        return z ^ (z >> 31)

    rng = Prng(12345)
    got = rng.raw(8)
    expected = [ref(12345, n) for n in range(8)]
    for g, e in zip(got, expected):
        if int(g) != e:
            return f"counter output mismatch: {int(g):#x} vs {e:#x}"
    a = Prng(7).substream("x").uniform((64,))
    b = Prng(7).substream("x").uniform((64,))
    if not np.array_equal(a, b):
        return "substream draw is not reproducible"
    return None


def _check_conv_oracle():
    """conv2d against a quadruple-loop direct computation."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 6, 7))
    k = rng.standard_normal((4, 3, 3, 3))
    stride, pad = 2, 1
    out = conv2d(Tensor(x), Tensor(k), stride, pad).data
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (x.shape[2] + 2 * pad - 3) // stride + 1
    wo = (x.shape[3] + 2 * pad - 3) // stride + 1
    ref = np.zeros((2, 4, ho, wo))
    for b in range(2):
        for o in range(4):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride : i * stride + 3, j * stride : j * stride + 3]
                    ref[b, o, i, j] = np.sum(patch * k[o])
    err = np.max(np.abs(out - ref)) / max(np.max(np.abs(ref)), 1e-12)
    if err > 1e-10:
        return f"direct convolution disagrees, rel err {err:.2e}"
    return None


def _check_fft_identities():
    """Roundtrip and Parseval for the stacked real FFT pair."""
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 8, 8))
    t = Tensor(x)
    back = irfft2(rfft2(t), 8).data
    if np.max(np.abs(back - x)) > 1e-10:
        return f"roundtrip error {np.max(np.abs(back - x)):.2e}"
    spec = rfft2(t).data
    c = spec.shape[1] // 2
    comp = spec[:, :c] + 1j * spec[:, c:]
    w = np.ones(8 // 2 + 1) * 2.0
    w[0] = w[-1] = 1.0
    lhs = np.sum(x * x)
    rhs = np.sum((np.abs(comp) ** 2) * w) / (8 * 8)
    if abs(lhs - rhs) / abs(lhs) > 1e-10:
        return f"Parseval violated: {lhs:.6f} vs {rhs:.6f}"
    return None


def _check_gradient_composite():
    """Taped gradient of a conv+fft+fc chain against central differences."""
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((1, 2, 8, 8))
    k0 = rng.standard_normal((2, 2, 3, 3)) * 0.4
    w0 = rng.standard_normal((2 * 8 * 8, 1)) * 0.1

    def forward(xv):
        x = Tensor(xv)
        h = leaky_relu(conv2d(x, Tensor(k0), 1, 1), 0.2)
        s = rfft2(h)
        s = irfft2(s, 8)
        flat = reshape(s, (1, -1))
        return sum_all(softplus(fc(flat, Tensor(w0), None)))

    with tape():
        x = Tensor(x0, requires_grad=True)
        h = leaky_relu(conv2d(x, Tensor(k0), 1, 1), 0.2)
        s = irfft2(rfft2(h), 8)
        loss = sum_all(softplus(fc(reshape(s, (1, -1)), Tensor(w0), None)))
        (gx,) = grad(loss, [x])
    idx = np.unravel_index(int(np.argmax(np.abs(gx.data))), x0.shape)
    eps = 1e-5
    up, down = x0.copy(), x0.copy()
    up[idx] += eps
    down[idx] -= eps
    fd = (float(forward(up).data) - float(forward(down).data)) / (2 * eps)
    got = float(gx.data[idx])
    if abs(fd - got) / max(abs(fd), 1e-8) > 1e-4:
        return f"gradient mismatch at {idx}: fd {fd:.8f} vs tape {got:.8f}"
    return None


def _check_double_backward():
    """Second derivative of sum(4 x^2) must be exactly 8 per entry."""
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal(5)
    with tape():
        x = Tensor(x0, requires_grad=True)
        y = mul_scalar(sum_all(square(x)), 4.0)
        (g1,) = grad(y, [x], create_graph=True)
        (g2,) = grad(sum_all(g1), [x])
    if np.max(np.abs(g1.data - 8.0 * x0)) > 1e-12:
        return "first derivative wrong"
    if np.max(np.abs(g2.data - 8.0)) > 1e-12:
        return f"second derivative {g2.data} != 8"
    return None


def _check_masked_r1_closed_form():
    """Penalty and its weight-gradient for a linear critic, exactly."""

    class LinearDisc:
        def __init__(self, a):
            self.a = a

        def __call__(self, x, m):
            ab = broadcast_to(reshape(self.a, (1,) + self.a.shape), x.shape)
            return reshape(sum_axes(mul(x, ab), (1, 2, 3)), (x.shape[0], 1))

    rng = np.random.default_rng(4)
    b, c, h, w = 2, 3, 4, 4
    a = Tensor(rng.standard_normal((c, h, w)), requires_grad=True)
    x = Tensor(rng.standard_normal((b, c, h, w)))
    m = Tensor((rng.random((b, 1, h, w)) < 0.5).astype(np.float64))
    with tape():
        penalty = masked_r1_penalty(LinearDisc(a), x, m)
        (ga,) = grad(penalty, [a])
    m3 = np.broadcast_to(m.data, x.shape)
    want = np.sum((m3 * a.data[None]) ** 2) / b
    if abs(float(penalty.data) - want) > 1e-10:
        return f"penalty {float(penalty.data):.8f} != {want:.8f}"
    want_ga = 2.0 * a.data * np.sum(m3**2, axis=0) / b
    if np.max(np.abs(ga.data - want_ga)) > 1e-10:
        return "penalty weight-gradient disagrees with closed form"
    return None


def _check_demodulation_variance():
    """Demodulated conv of unit-variance input stays near unit variance."""
    from .modulation import mod_conv2d

    rng = Prng(11).substream("demod")
    b, cin, cout, size = 4, 48, 24, 12
    x = Tensor(rng.normal((b, cin, size, size)))
    k = Tensor(rng.normal((cout, cin, 3, 3)) / np.sqrt(cin * 9))
    style = Tensor(np.exp(rng.normal((b, cin)) * 0.3))
    out = mod_conv2d(x, k, style, demodulate=True, padding=0).data
    var = float(out.var())
    if not 0.8 <= var <= 1.2:
        return f"output variance {var:.3f} outside [0.8, 1.2]"
    return None


def _check_mask_mixture():
    """Generator-type frequencies near the configured mixture."""
    cfg = MaskConfig(min_area_frac=0.0)
    sils = make_blob_silhouettes(seed=21)
    inst = np.zeros((32, 32), dtype=np.uint16)
    rng = Prng(22).substream("verify-mix")
    counts = {"freeform": 0, "object": 0, "rectangle": 0}
    n = 600
    for _ in range(n):
        _, info = sample_object_aware_mask(rng, inst, cfg, sils)
        counts[info["type"]] += 1
    for name, target in zip(("freeform", "object", "rectangle"), cfg.mixture):
        frac = counts[name] / n
        if abs(frac - target) > 0.07:
            return f"{name} frequency {frac:.3f} vs target {target:.2f}"
    return None


def _check_png_and_checkpoint():
    """Byte-level roundtrips for both file formats."""
    rng = np.random.default_rng(5)
    with tempfile.TemporaryDirectory() as tmp:
        img = rng.integers(0, 256, size=(9, 11, 3), dtype=np.uint8)
        p = os.path.join(tmp, "t.png")
        write_png(p, img)
        if not np.array_equal(read_png(p), img):
            return "PNG roundtrip altered pixel data"
        params = {"a.w": rng.standard_normal((3, 2)).astype(np.float32),
                  "b.k": rng.standard_normal((2, 2, 3, 3)).astype(np.float32)}
        c = os.path.join(tmp, "t.ckpt")
        save_checkpoint(c, params)
        back = load_checkpoint(c)
        for name in params:
            if not np.array_equal(back[name], params[name]):
                return f"checkpoint altered {name}"
    return None


def _check_loss_values():
    """GAN losses at zero logits equal their ln 2 closed forms."""
    from .training import d_logistic_loss, g_nonsaturating_loss

    z = Tensor(np.zeros((3, 1)))
    d = float(d_logistic_loss(z, z).data)
    g = float(g_nonsaturating_loss(z).data)
    if abs(d - 2 * np.log(2)) > 1e-12:
        return f"d loss at zero logits {d:.8f} != 2 ln 2"
    if abs(g - np.log(2)) > 1e-12:
        return f"g loss at zero logits {g:.8f} != ln 2"
    return None


CHECKS = [
    Check("prng-reference", _check_prng_reference),
    Check("conv-direct-oracle", _check_conv_oracle),
    Check("fft-identities", _check_fft_identities),
    Check("gradient-composite", _check_gradient_composite),
    Check("double-backward", _check_double_backward),
    Check("masked-r1-closed-form", _check_masked_r1_closed_form),
    Check("demodulation-variance", _check_demodulation_variance),
    Check("mask-mixture", _check_mask_mixture),
    Check("png-checkpoint-roundtrip", _check_png_and_checkpoint),
    Check("loss-closed-forms", _check_loss_values),
]


def run_verification(report=print) -> bool:
    """Run every check; report one line each; True when all pass.

    Checks assert double-precision identities, so the precision mode is
    pinned to float64 for the duration and restored afterwards.
    """
    from .tensor import current_dtype, set_precision

    before = "float32" if current_dtype() == np.float32 else "float64"
    set_precision("float64")
    ok = True
    try:
        for check in CHECKS:
            try:
                detail = check.fn()
            except Exception as e:  # a crashed check is a failed check
                detail = f"{type(e).__name__}: {e}"
            if detail is None:
                report(f"ok   {check.name}")
            else:
                ok = False
                report(f"FAIL {check.name}: {detail}")
    finally:
        set_precision(before)
    return ok
