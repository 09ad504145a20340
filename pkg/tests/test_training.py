"""Loss closed forms, Adam arithmetic, masked gradient penalty, train loop."""

import csv
import os

import numpy as np
import pytest

import modpaint.training as training
from modpaint.generator import Discriminator, Generator, GeneratorConfig
from modpaint.maskgen import MaskConfig
from modpaint.prng import Prng
from modpaint.tensor import (
    Tensor,
    broadcast_to,
    grad,
    mul,
    reshape,
    sum_axes,
    tape,
)
from modpaint.training import (
    Adam,
    FeatureExtractor,
    TrainingConfig,
    TrainingDiverged,
    d_logistic_loss,
    g_nonsaturating_loss,
    load_generator,
    load_run_checkpoint,
    masked_r1_penalty,
    perceptual_loss,
    save_run_checkpoint,
    train,
)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _small_gen_cfg():
    return GeneratorConfig(resolution=16, widths=(6, 8), style_dim=8, z_dim=8,
                           mapping_dim=8, mapping_depth=1)


# ---------------------------------------------------------------------------
# losses


def test_d_loss_matches_closed_form():
    rng = np.random.default_rng(0)
    real = rng.standard_normal((5, 1))
    fake = rng.standard_normal((5, 1))
    loss = d_logistic_loss(Tensor(real), Tensor(fake))
    expected = np.mean(_softplus(fake) + _softplus(-real))
    assert abs(float(loss.data) - expected) < 1e-12


def test_g_loss_matches_closed_form():
    rng = np.random.default_rng(1)
    fake = rng.standard_normal((5, 1))
    loss = g_nonsaturating_loss(Tensor(fake))
    assert abs(float(loss.data) - np.mean(_softplus(-fake))) < 1e-12


def test_d_loss_at_zero_logits():
    # both terms are softplus(0) = ln 2
    z = Tensor(np.zeros((4, 1)))
    assert abs(float(d_logistic_loss(z, z).data) - 2 * np.log(2)) < 1e-12
    assert abs(float(g_nonsaturating_loss(z).data) - np.log(2)) < 1e-12


def test_d_loss_gradient_direction():
    # the loss must push real logits up and fake logits down
    real = Tensor(np.zeros((3, 1)))
    fake = Tensor(np.zeros((3, 1)))
    with tape():
        loss = d_logistic_loss(real, fake)
        gr, gf = grad(loss, [real, fake])
    assert (gr.data < 0).all()
    assert (gf.data > 0).all()


# ---------------------------------------------------------------------------
# masked R1 penalty


class _LinearDisc:
    """D(x) = <a, x> per sample; grad w.r.t. x is a, independent of x."""

    def __init__(self, a: Tensor):
        self.a = a

    def __call__(self, x, m):
        b = x.shape[0]
        ab = broadcast_to(reshape(self.a, (1,) + self.a.shape), x.shape)
        return reshape(sum_axes(mul(x, ab), (1, 2, 3)), (b, 1))


def test_masked_r1_linear_disc_closed_form():
    # grad of D is the weight map itself, so the penalty and its gradient
    # in the weights have exact closed forms
    rng = np.random.default_rng(2)
    b, c, h, w = 3, 3, 5, 5
    a = Tensor(rng.standard_normal((c, h, w)), requires_grad=True)
    x = Tensor(rng.standard_normal((b, c, h, w)))
    m = Tensor((rng.random((b, 1, h, w)) < 0.4).astype(np.float64))
    disc = _LinearDisc(a)
    with tape():
        penalty = masked_r1_penalty(disc, x, m)
        (ga,) = grad(penalty, [a])
    m3 = np.broadcast_to(m.data, x.shape)
    expected_penalty = np.sum((m3 * a.data[None]) ** 2) / b
    assert abs(float(penalty.data) - expected_penalty) < 1e-10
    expected_ga = 2.0 * a.data * np.sum(m3**2, axis=0) / b
    assert np.max(np.abs(ga.data - expected_ga)) < 1e-10


class _QuadraticDisc:
    """D(x) = sum(x^2) per sample; grad w.r.t. x is 2x."""

    def __call__(self, x, m):
        return reshape(sum_axes(mul(x, x), (1, 2, 3)), (x.shape[0], 1))


def test_masked_r1_quadratic_disc_closed_form():
    rng = np.random.default_rng(3)
    b, c, h, w = 2, 3, 4, 4
    x = Tensor(rng.standard_normal((b, c, h, w)), requires_grad=True)
    m = Tensor((rng.random((b, 1, h, w)) < 0.5).astype(np.float64))
    disc = _QuadraticDisc()
    with tape():
        penalty = masked_r1_penalty(disc, x, m)
        (gx,) = grad(penalty, [x])
    m3 = np.broadcast_to(m.data, x.shape)
    assert abs(float(penalty.data) - np.sum((m3 * 2 * x.data) ** 2) / b) < 1e-10
    # d/dx of (1/b) sum (m 2x)^2 = (8/b) m^2 x
    assert np.max(np.abs(gx.data - 8.0 * m3**2 * x.data / b)) < 1e-10


def test_masked_r1_zero_mask_is_zero():
    rng = np.random.default_rng(4)
    cfg = _small_gen_cfg()
    disc = Discriminator(cfg, Prng(0).substream("d"))
    x = Tensor(rng.standard_normal((2, 3, 16, 16)))
    m = Tensor(np.zeros((2, 1, 16, 16)))
    with tape():
        penalty = masked_r1_penalty(disc, x, m)
        params = disc.named_params()
        grads = grad(penalty, list(params.values()), allow_unused=True)
    assert float(penalty.data) == 0.0
    for g in grads:
        assert np.all(g.data == 0.0)


def test_masked_r1_real_disc_param_grad_vs_fd():
    # double-backward gradient of the penalty against central differences
    cfg = _small_gen_cfg()
    rng_np = np.random.default_rng(5)
    x = Tensor(rng_np.standard_normal((2, 3, 16, 16)) * 0.5)
    m_np = np.zeros((2, 1, 16, 16))
    m_np[:, :, 4:12, 4:12] = 1.0
    m = Tensor(m_np)

    def penalty_value(disc):
        with tape():
            return float(masked_r1_penalty(disc, x, m).data)

    disc = Discriminator(cfg, Prng(1).substream("d"))
    params = disc.named_params()
    with tape():
        penalty = masked_r1_penalty(disc, x, m)
        names = list(params)
        grads = dict(zip(names, grad(penalty, [params[n] for n in names],
                                     allow_unused=True)))
    checked = 0
    for name in ("convs.0.w", "final_conv.w", "fc_out.w"):
        target = params[name]
        flat_idx = int(np.argmax(np.abs(grads[name].data)))
        idx = np.unravel_index(flat_idx, target.shape)
        eps = 1e-4
        for sign in (+1, -1):
            bumped = target.data.copy()
            bumped[idx] += sign * eps
            disc.load_state({**params, name: Tensor(bumped, requires_grad=True)})
            if sign > 0:
                up = penalty_value(disc)
            else:
                down = penalty_value(disc)
        disc.load_state(params)
        fd = (up - down) / (2 * eps)
        got = float(grads[name].data[idx])
        denom = max(abs(fd), abs(got), 1e-6)
        assert abs(fd - got) / denom < 1e-3, f"{name}: fd {fd} vs grad {got}"
        checked += 1
    assert checked == 3


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_closed_form():
    g = np.array([1.0, -2.0, 0.5])
    p = {"w": Tensor(np.zeros(3), requires_grad=True)}
    opt = Adam(p, lr=0.001, beta1=0.0, beta2=0.99, eps=1e-8)
    new = opt.step(p, {"w": Tensor(g)})
    # t=1: m_hat = g, v_hat = g^2, update = -lr g / (|g| + eps)
    expected = -0.001 * g / (np.abs(g) + 1e-8)
    assert np.max(np.abs(new["w"].data - expected)) < 1e-15


def test_adam_matches_reference_over_steps():
    rng = np.random.default_rng(6)
    p0 = rng.standard_normal(5)
    lr, b1, b2, eps = 0.01, 0.3, 0.9, 1e-8
    p = {"w": Tensor(p0.copy(), requires_grad=True)}
    opt = Adam(p, lr=lr, beta1=b1, beta2=b2, eps=eps)
    ref_p, ref_m, ref_v = p0.copy(), np.zeros(5), np.zeros(5)
    for t in range(1, 6):
        g = rng.standard_normal(5)
        p = opt.step(p, {"w": Tensor(g)})
        ref_m = b1 * ref_m + (1 - b1) * g
        ref_v = b2 * ref_v + (1 - b2) * g * g
        ref_p = ref_p - lr * (ref_m / (1 - b1**t)) / (np.sqrt(ref_v / (1 - b2**t)) + eps)
        assert np.max(np.abs(p["w"].data - ref_p)) < 1e-14


def test_adam_state_is_per_parameter():
    p = {"a": Tensor(np.zeros(2), requires_grad=True),
         "b": Tensor(np.zeros(3), requires_grad=True)}
    opt = Adam(p, lr=0.1)
    new = opt.step(p, {"a": Tensor(np.ones(2)), "b": Tensor(np.zeros(3))})
    assert not np.allclose(new["a"].data, 0.0)
    assert np.allclose(new["b"].data, 0.0)


# ---------------------------------------------------------------------------
# perceptual stand-in


def test_perceptual_loss_zero_on_identical_inputs():
    rng = np.random.default_rng(7)
    fx = FeatureExtractor(Prng(3).substream("fx"))
    x = Tensor(rng.standard_normal((2, 3, 16, 16)))
    assert float(perceptual_loss(fx, x, x).data) == 0.0


def test_perceptual_loss_positive_and_frozen():
    rng = np.random.default_rng(8)
    fx = FeatureExtractor(Prng(3).substream("fx"))
    a = Tensor(rng.standard_normal((2, 3, 16, 16)))
    b = Tensor(rng.standard_normal((2, 3, 16, 16)))
    assert float(perceptual_loss(fx, a, b).data) > 0.0
    assert fx.named_params() == {}


# ---------------------------------------------------------------------------
# checkpoint bundling


def test_run_checkpoint_roundtrip(tmp_path):
    cfg = _small_gen_cfg()
    gen = Generator(cfg, Prng(0).substream("g"))
    disc = Discriminator(cfg, Prng(0).substream("d"))
    path = str(tmp_path / "run.ckpt")
    save_run_checkpoint(path, gen, disc)

    gen2 = Generator(cfg, Prng(9).substream("g"))
    disc2 = Discriminator(cfg, Prng(9).substream("d"))
    load_run_checkpoint(path, gen2, disc2)
    for name, p in gen.named_params().items():
        assert np.allclose(gen2.named_params()[name].data,
                           p.data.astype(np.float32), atol=1e-7)
    for name, p in disc.named_params().items():
        assert np.allclose(disc2.named_params()[name].data,
                           p.data.astype(np.float32), atol=1e-7)

    gen3 = Generator(cfg, Prng(11).substream("g"))
    load_generator(path, gen3)
    assert np.allclose(gen3.named_params()["head.w"].data,
                       gen.named_params()["head.w"].data.astype(np.float32),
                       atol=1e-7)


def test_load_generator_rejects_wrong_shape_model(tmp_path):
    cfg = _small_gen_cfg()
    gen = Generator(cfg, Prng(0).substream("g"))
    disc = Discriminator(cfg, Prng(0).substream("d"))
    path = str(tmp_path / "run.ckpt")
    save_run_checkpoint(path, gen, disc)
    other = Generator(GeneratorConfig(resolution=16, widths=(4, 8), style_dim=8,
                                      z_dim=8, mapping_dim=8, mapping_depth=1),
                      Prng(1).substream("g"))
    with pytest.raises(ValueError):
        load_generator(path, other)


# ---------------------------------------------------------------------------
# the loop


def _tiny_train_cfg(steps=3):
    return TrainingConfig(steps=steps, batch_size=2, r1_interval=2,
                          dataset_size=16, checkpoint_interval=2,
                          sample_interval=2)


def test_train_smoke_and_outputs(tmp_path):
    out = str(tmp_path / "run")
    result = train(out, _small_gen_cfg(), MaskConfig(), _tiny_train_cfg(), seed=7)
    assert result["steps"] == 3
    assert os.path.exists(result["checkpoint"])
    assert os.path.exists(os.path.join(out, "ckpt_000002.ckpt"))
    assert os.path.exists(os.path.join(out, "samples", "step_000002.png"))
    with open(result["log"]) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "d_loss", "g_loss", "r1_penalty", "perc_loss"]
    assert len(rows) == 4
    # r1 is computed on steps 0 and 2 (interval 2), skipped on step 1
    assert float(rows[1][3]) > 0.0
    assert float(rows[2][3]) == 0.0
    for row in rows[1:]:
        assert np.isfinite(float(row[1])) and np.isfinite(float(row[2]))


def test_train_is_bit_reproducible(tmp_path):
    cfg = _tiny_train_cfg(steps=2)
    r1 = train(str(tmp_path / "a"), _small_gen_cfg(), MaskConfig(), cfg, seed=3)
    r2 = train(str(tmp_path / "b"), _small_gen_cfg(), MaskConfig(), cfg, seed=3)
    with open(r1["checkpoint"], "rb") as f:
        b1 = f.read()
    with open(r2["checkpoint"], "rb") as f:
        b2 = f.read()
    assert b1 == b2
    with open(r1["log"]) as f:
        l1 = f.read()
    with open(r2["log"]) as f:
        l2 = f.read()
    assert l1 == l2


def test_train_seed_changes_result(tmp_path):
    cfg = _tiny_train_cfg(steps=1)
    r1 = train(str(tmp_path / "a"), _small_gen_cfg(), MaskConfig(), cfg, seed=1)
    r2 = train(str(tmp_path / "b"), _small_gen_cfg(), MaskConfig(), cfg, seed=2)
    with open(r1["checkpoint"], "rb") as f:
        b1 = f.read()
    with open(r2["checkpoint"], "rb") as f:
        b2 = f.read()
    assert b1 != b2


def test_train_zero_steps_writes_initial_state(tmp_path):
    out = str(tmp_path / "run")
    result = train(out, _small_gen_cfg(), MaskConfig(), _tiny_train_cfg(steps=0),
                   seed=5)
    assert os.path.exists(result["checkpoint"])
    with open(result["log"]) as f:
        rows = list(csv.reader(f))
    assert rows == [["step", "d_loss", "g_loss", "r1_penalty", "perc_loss"]]


def test_train_perceptual_term_logged(tmp_path):
    cfg = _tiny_train_cfg(steps=1)
    cfg.perceptual_weight = 0.1
    result = train(str(tmp_path / "run"), _small_gen_cfg(), MaskConfig(), cfg, seed=2)
    with open(result["log"]) as f:
        rows = list(csv.reader(f))
    assert float(rows[1][4]) > 0.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_raises_and_checkpoints(tmp_path, monkeypatch):
    # poison the loss but keep its graph intact so backprop still runs
    from modpaint.tensor import mul_scalar

    original = training.d_logistic_loss

    def poisoned(real, fake):
        return mul_scalar(original(real, fake), float("nan"))

    monkeypatch.setattr(training, "d_logistic_loss", poisoned)
    out = str(tmp_path / "run")
    with pytest.raises(TrainingDiverged, match="step 0"):
        train(out, _small_gen_cfg(), MaskConfig(), _tiny_train_cfg(steps=2), seed=1)
    assert os.path.exists(os.path.join(out, "ckpt_diverged.ckpt"))
