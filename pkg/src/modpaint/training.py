"""Adversarial training: losses, masked gradient penalty, Adam, the loop.

The discriminator trains on the non-saturating logistic loss plus a
masked R1 penalty: only the gradient inside the hole is penalized, so
the discriminator stays sharp on the visible region it can trust.  The
penalty needs the gradient of a gradient; grad(..., create_graph=True)
records the backward pass onto the active tape, and a second grad()
call differentiates it exactly.

Regularization is lazy: the penalty is computed every `r1_interval`
steps and scaled by the interval, which leaves its time-averaged
strength unchanged while skipping the double-backward cost elsewhere.

Everything the loop consumes, data batches, masks, latents, and noise,
comes from counter-based substreams of one root seed, so a run is
bit-reproducible from its config.

Checkpoints carry two generator weight sets: the live weights and a
running mean over the tail of training.  Late snapshots keep drifting
in the fine-texture layers even after the losses settle; the tail
average irons that out, and inference loads it when present.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, params_to_tensors, save_checkpoint
from .dataset import ProceduralDataset
from .generator import Discriminator, Generator, GeneratorConfig
from .layers import Conv2dLayer, Module
from .maskgen import MaskConfig, make_blob_silhouettes, sample_object_aware_mask
from .pngio import from_unit, write_png
from .prng import Prng
from .tensor import (
    Tensor,
    add,
    concat,
    grad,
    leaky_relu,
    mean_all,
    mul,
    mul_scalar,
    neg,
    softplus,
    square,
    sub,
    sum_all,
    tape,
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 0.001
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    r1_gamma: float = 10.0
    r1_interval: int = 16
    perceptual_weight: float = 0.0
    dataset_size: int = 10000
    checkpoint_interval: int = 500
    sample_interval: int = 500
    log_every: int = 1
    # update number where the tail average of generator weights starts;
    # an absolute step, not a fraction, so a truncated rerun matches
    avg_start_step: int = 500


# ---------------------------------------------------------------------------
# losses


def d_logistic_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """mean(softplus(fake) + softplus(-real)) over the batch."""
    return mean_all(add(softplus(fake_logits), softplus(neg(real_logits))))


def g_nonsaturating_loss(fake_logits: Tensor) -> Tensor:
    """mean(softplus(-fake)) over the batch."""
    return mean_all(softplus(neg(fake_logits)))


def masked_r1_penalty(disc, x: Tensor, m: Tensor) -> Tensor:
    """E_batch[ sum((m * dD/dx)^2) ], differentiable in the disc params.

    Logits are summed before the inner grad; samples do not interact in
    the discriminator, so the per-sample input gradients are exact.
    """
    logits = disc(x, m)
    batch = x.shape[0]
    (gx,) = grad(sum_all(logits), [x], create_graph=True)
    m3 = concat([m, m, m], axis=1)
    return mul_scalar(sum_all(square(mul(gx, m3))), 1.0 / batch)


# ---------------------------------------------------------------------------
# perceptual distance against a frozen random projection

class FeatureExtractor(Module):
    """Frozen random strided convs; a stand-in feature space.

    Random projections preserve enough structure for a useful distance
    while keeping the kit dependency-free.  Weights never train.
    """

    def __init__(self, rng: Prng, in_channels: int = 3, widths=(8, 16, 32)):
        self.convs = []
        cin = in_channels
        for cout in widths:
            self.convs.append(Conv2dLayer(cin, cout, 3, rng, stride=2, bias=False))
            cin = cout
        for conv in self.convs:
            conv.w.requires_grad = False

    def __call__(self, x: Tensor) -> list:
        feats = []
        for conv in self.convs:
            x = leaky_relu(conv(x))
            feats.append(x)
        return feats


def perceptual_loss(extractor: FeatureExtractor, a: Tensor, b: Tensor) -> Tensor:
    fa, fb = extractor(a), extractor(b)
    total = None
    for xa, xb in zip(fa, fb):
        term = mean_all(square(sub(xa, xb)))
        total = term if total is None else add(total, term)
    return mul_scalar(total, 1.0 / len(fa))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction; epsilon sits outside the sqrt."""

    def __init__(self, params: dict, lr: float = 0.001, beta1: float = 0.0,
                 beta2: float = 0.99, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, params: dict, grads: dict) -> dict:
        """Returns the updated parameter dict; state advances in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        out = {}
        for name, p in params.items():
            g = grads[name]
            g = g.data if isinstance(g, Tensor) else g
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            new = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            out[name] = Tensor(new, requires_grad=True)
        return out


# ---------------------------------------------------------------------------
# checkpoint bundling (generator + discriminator in one file)


def save_run_checkpoint(path: str, gen: Generator, disc: Discriminator,
                        avg: dict | None = None) -> None:
    merged = {f"generator.{n}": p for n, p in gen.named_params().items()}
    merged.update({f"discriminator.{n}": p for n, p in disc.named_params().items()})
    if avg is not None:
        merged.update({f"generator_avg.{n}": a for n, a in avg.items()})
    save_checkpoint(path, merged)


def load_generator(path: str, gen: Generator) -> None:
    """Load generator weights, preferring the tail-averaged set if present.

    Single training snapshots wobble: the fine-texture layers drift step
    to step even once the losses settle.  The running average over the
    tail of training irons that out, so inference uses it when available.
    """
    raw = load_checkpoint(path)
    prefix = "generator_avg."
    if not any(n.startswith(prefix) for n in raw):
        prefix = "generator."
    sub_params = {n[len(prefix):]: a for n, a in raw.items() if n.startswith(prefix)}
    if not sub_params:
        raise ValueError(f"{path}: no generator parameters found")
    expected = gen.named_params()
    missing = sorted(set(expected) - set(sub_params))
    extra = sorted(set(sub_params) - set(expected))
    if missing or extra:
        raise ValueError(
            f"{path}: generator parameter names do not match"
            + (f"; missing {missing[:5]}" if missing else "")
            + (f"; unexpected {extra[:5]}" if extra else "")
        )
    gen.load_state(params_to_tensors(sub_params))


def load_run_checkpoint(path: str, gen: Generator, disc: Discriminator) -> None:
    raw = load_checkpoint(path)
    gen_params = {}
    disc_params = {}
    for name, arr in raw.items():
        if name.startswith("generator_avg."):
            continue  # output artifact, not live training state
        if name.startswith("generator."):
            gen_params[name[len("generator."):]] = arr
        elif name.startswith("discriminator."):
            disc_params[name[len("discriminator."):]] = arr
        else:
            raise ValueError(f"{path}: unrecognized parameter {name!r}")
    gen.load_state(params_to_tensors(gen_params))
    disc.load_state(params_to_tensors(disc_params))


# ---------------------------------------------------------------------------
# batch assembly


def make_batch(step_rng: Prng, dataset: ProceduralDataset, mask_cfg: MaskConfig,
               silhouettes: list, batch_size: int):
    """Images, masks, latents, and noise for one step, all from step_rng."""
    imgs, insts, _ = dataset.batch(step_rng.substream("indices"), batch_size)
    masks = np.zeros((batch_size, 1) + insts.shape[1:], dtype=np.float64)
    for i in range(batch_size):
        mask, _ = sample_object_aware_mask(
            step_rng.substream(f"mask{i}"), insts[i], mask_cfg, silhouettes
        )
        masks[i, 0] = mask
    return imgs, masks


def _write_sample_grid(path: str, x_hat: np.ndarray, count: int = 4) -> None:
    n = min(count, x_hat.shape[0])
    tiles = [from_unit(np.transpose(x_hat[i], (1, 2, 0))) for i in range(n)]
    write_png(path, np.concatenate(tiles, axis=1))


# ---------------------------------------------------------------------------
# the loop


def train(
    out_dir: str,
    gen_cfg: GeneratorConfig,
    mask_cfg: MaskConfig,
    cfg: TrainingConfig,
    seed: int,
    log_fn=None,
) -> dict:
    """Run the full loop; returns {"steps", "checkpoint", "log"} paths/stats.

    Layout under out_dir: train_log.csv, ckpt_<step>.ckpt, ckpt_final.ckpt,
    samples/step_<step>.png.  Raises TrainingDiverged on non-finite loss
    after writing a diagnostic checkpoint.
    """
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)

    root = Prng(seed)
    gen = Generator(gen_cfg, root.substream("generator"))
    disc = Discriminator(gen_cfg, root.substream("discriminator"))
    dataset = ProceduralDataset(
        seed=int(root.substream("data").seed), size=cfg.dataset_size,
        resolution=gen_cfg.resolution,
    )
    silhouettes = make_blob_silhouettes(seed=int(root.substream("sils").seed))
    extractor = None
    if cfg.perceptual_weight > 0.0:
        extractor = FeatureExtractor(root.substream("perceptual"))

    opt_g = Adam(gen.named_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    opt_d = Adam(disc.named_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)

    log_path = os.path.join(out_dir, "train_log.csv")
    log_file = open(log_path, "w", newline="")
    writer = csv.writer(log_file)
    writer.writerow(["step", "d_loss", "g_loss", "r1_penalty", "perc_loss"])

    last_d = last_g = float("nan")
    avg_params: dict | None = None
    avg_count = 0
    try:
        for step in range(cfg.steps):
            step_rng = root.substream(f"step{step}")
            imgs, masks = make_batch(step_rng, dataset, mask_cfg, silhouettes,
                                     cfg.batch_size)
            x_real = Tensor(imgs)
            m = Tensor(masks)
            z = Tensor(step_rng.substream("z").normal((cfg.batch_size, gen_cfg.z_dim)))
            noise = gen.sample_noise(cfg.batch_size, step_rng.substream("noise"))

            # discriminator update; generator runs un-taped as a constant.
            # the critic sees the raw full prediction, so the generator is
            # pushed to reconstruct the visible region as well as the hole
            x_fake = Tensor(gen.predict(x_real, m, z, noise_maps=noise).data)
            lazy = step % cfg.r1_interval == 0
            r1_value = 0.0
            with tape():
                d_loss = d_logistic_loss(disc(x_real, m), disc(x_fake, m))
                total = d_loss
                if lazy:
                    penalty = masked_r1_penalty(disc, x_real, m)
                    r1_value = float(penalty.data)
                    total = add(total, mul_scalar(
                        penalty, 0.5 * cfg.r1_gamma * cfg.r1_interval))
                d_params = disc.named_params()
                names = list(d_params)
                d_grads = grad(total, [d_params[n] for n in names])
                disc.apply_updates(opt_d.step(d_params, dict(zip(names, d_grads))))

            # generator update, on the same raw prediction
            perc_value = 0.0
            with tape():
                y_pred = gen.predict(x_real, m, z, noise_maps=noise)
                g_loss = g_nonsaturating_loss(disc(y_pred, m))
                total = g_loss
                if extractor is not None:
                    perc = perceptual_loss(extractor, y_pred, x_real)
                    perc_value = float(perc.data)
                    total = add(total, mul_scalar(perc, cfg.perceptual_weight))
                g_params = gen.named_params()
                names = list(g_params)
                g_grads = grad(total, [g_params[n] for n in names])
                gen.apply_updates(opt_g.step(g_params, dict(zip(names, g_grads))))

            # running mean of generator weights over the tail of training
            if step + 1 >= cfg.avg_start_step:
                current = gen.named_params()
                if avg_params is None:
                    avg_params = {n: p.data.copy() for n, p in current.items()}
                    avg_count = 1
                else:
                    avg_count += 1
                    for n, p in current.items():
                        avg_params[n] += (p.data - avg_params[n]) / avg_count

            last_d, last_g = float(d_loss.data), float(g_loss.data)
            if not (math.isfinite(last_d) and math.isfinite(last_g)):
                diag = os.path.join(out_dir, "ckpt_diverged.ckpt")
                save_run_checkpoint(diag, gen, disc)
                raise TrainingDiverged(
                    f"non-finite loss at step {step}: d={last_d} g={last_g}; "
                    f"state saved to {diag}"
                )

            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                writer.writerow([step, f"{last_d:.6f}", f"{last_g:.6f}",
                                 f"{r1_value:.6f}", f"{perc_value:.6f}"])
                log_file.flush()
            if log_fn is not None:
                log_fn(step, last_d, last_g)

            done = step == cfg.steps - 1
            if cfg.checkpoint_interval and ((step + 1) % cfg.checkpoint_interval == 0
                                            and not done):
                save_run_checkpoint(
                    os.path.join(out_dir, f"ckpt_{step + 1:06d}.ckpt"), gen, disc,
                    avg=avg_params)
            if cfg.sample_interval and ((step + 1) % cfg.sample_interval == 0 or done):
                m3 = np.repeat(masks, 3, axis=1)
                composite = y_pred.data * m3 + imgs * (1.0 - m3)
                _write_sample_grid(
                    os.path.join(out_dir, "samples", f"step_{step + 1:06d}.png"),
                    composite)
    finally:
        log_file.close()

    final = os.path.join(out_dir, "ckpt_final.ckpt")
    save_run_checkpoint(final, gen, disc, avg=avg_params)
    return {"steps": cfg.steps, "checkpoint": final, "log": log_path,
            "d_loss": last_d, "g_loss": last_g}
