"""Alternating discriminator / generator training loop.

Each step updates the discriminator once on a real/fake pair, then the
generator once on the weighted objective
alpha * adversarial + data + tv + gradient-difference, with the
discriminator frozen.  Runs are deterministic in the config seed;
checkpoints carry optimizer state so a resumed run continues the exact
trajectory.
"""

from __future__ import annotations

import json
import os
import sys
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .dataio import PatchPool, load_manifest_samples
from .losses import (LossBreakdown, adversarial_losses, data_loss, gd_loss,
                     generator_adversarial_loss, total_generator_objective,
                     tv_loss)
from .network import (build_discriminator, build_generator,
                      discriminator_backward, discriminator_forward,
                      flatten_grads, generator_backward, generator_forward,
                      load_checkpoint, parameters, save_checkpoint)
from .optimizer import adam_init, adam_step

LOG_HEADER = "step,epoch,data,tv,gd,adv_g,adv_d,total_g,d_real,d_fake,seconds"


class ConfigError(ValueError):
    """Invalid training configuration."""


class TrainingError(RuntimeError):
    """A run aborted mid-flight (non-finite loss or gradient)."""


@dataclass
class TrainConfig:
    scale: int = 2
    alpha: float = 0.002
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 30
    batch_size: int = 32
    patch_size: int = 32
    patches_per_epoch: int = 100_000
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    log_path: str = "train_log.csv"
    adversarial_enabled: bool = True

    def validate(self):
        if self.scale not in (2, 4):
            raise ConfigError(f"scale must be 2 or 4, got {self.scale}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patch_size < 9:
            raise ConfigError(f"patch_size must be >= 9, got {self.patch_size}")
        if self.patches_per_epoch < self.batch_size:
            raise ConfigError("patches_per_epoch must be >= batch_size")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ConfigError("betas must lie in (0, 1)")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        return self


def config_from_json(path):
    """Read a config file; returns (TrainConfig, manifest_path, resume_path).

    The JSON holds the TrainConfig fields plus a required "manifest" key
    and an optional "resume" checkpoint path.  Unknown keys are
    rejected.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")
    if "manifest" not in raw:
        raise ConfigError(f"{path}: missing required key 'manifest'")
    manifest = raw.pop("manifest")
    resume = raw.pop("resume", None)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    cfg = TrainConfig(**raw).validate()
    base = os.path.dirname(os.path.abspath(path))
    resolve = lambda p: p if os.path.isabs(p) else os.path.join(base, p)
    return cfg, resolve(manifest), resolve(resume) if resume else None


def config_to_json(cfg, manifest, path, resume=None):
    doc = asdict(cfg)
    doc["manifest"] = manifest
    if resume:
        doc["resume"] = resume
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


@dataclass
class TrainLogRecord:
    step: int
    epoch: int
    losses: LossBreakdown
    d_real_mean: float
    d_fake_mean: float
    seconds: float

    def csv_row(self):
        l = self.losses
        vals = [l.data, l.tv, l.gd, l.adv_g, l.adv_d, l.total_g,
                self.d_real_mean, self.d_fake_mean]
        return (f"{self.step},{self.epoch},"
                + ",".join(f"{v:.17g}" for v in vals)
                + f",{self.seconds:.3f}")


def _map_mean(prob_map):
    """Reduce (B, h, w, 1) probability maps to per-image scalars."""
    b = prob_map.shape[0]
    return prob_map.reshape(b, -1).mean(axis=1)


def _spread(per_image, prob_map):
    """Gradient of the per-image map mean, broadcast back over the map."""
    b = prob_map.shape[0]
    cell = 1.0 / (prob_map.size // b)
    return np.broadcast_to((per_image * cell)[:, None, None, None], prob_map.shape).copy()


def _compose_color_image(luma, batch):
    """3-channel discriminator input: a luma plane over the bicubic chroma."""
    return np.concatenate([luma, batch.cb_up, batch.cr_up], axis=3)


def _check_finite(breakdown):
    for term, value in vars(breakdown).items():
        if not np.isfinite(value):
            raise TrainingError(f"loss term '{term}' became non-finite ({value})")


def train_step(gen, disc, adam_g, adam_d, batch, config):
    """One discriminator update followed by one generator update."""
    t0 = time.perf_counter()
    d_step0, g_step0 = adam_d.step, adam_g.step
    losses = LossBreakdown()
    d_real_mean = d_fake_mean = 0.5

    gen_out, gen_cache = generator_forward(gen, batch.luma_in, batch.depth_in,
                                           want_cache=True)

    if config.adversarial_enabled:
        # Discriminator phase: the generator output is treated as fixed.
        real_img = _compose_color_image(batch.luma_ref, batch)
        fake_img = _compose_color_image(gen_out.color, batch)
        real_map, real_cache = discriminator_forward(disc, real_img, want_cache=True)
        fake_map, fake_cache = discriminator_forward(disc, fake_img, want_cache=True)
        p_real = _map_mean(real_map)
        p_fake = _map_mean(fake_map)
        d_real_mean = float(p_real.mean())
        d_fake_mean = float(p_fake.mean())
        adv_d, _, (g_p_real, g_p_fake, _) = adversarial_losses(p_real, p_fake)
        losses.adv_d = adv_d
        grads_real, _ = discriminator_backward(disc, real_cache, _spread(g_p_real, real_map),
                                               need_input_grad=False)
        grads_fake, _ = discriminator_backward(disc, fake_cache, _spread(g_p_fake, fake_map),
                                               need_input_grad=False)
        d_grads = [gr + gf for gr, gf in zip(flatten_grads(disc, grads_real),
                                             flatten_grads(disc, grads_fake))]
        d_names = [n for n, _ in parameters(disc)]
        adam_step(adam_d, [a for _, a in parameters(disc)], d_grads, d_names)
        assert adam_d.step == d_step0 + 1 and adam_g.step == g_step0

    # Generator phase against the just-updated, now frozen discriminator.
    losses.data, g_data_c, g_data_d = data_loss(gen_out.color, gen_out.depth,
                                                batch.luma_ref, batch.depth_ref)
    losses.tv, g_tv_c, g_tv_d = tv_loss(gen_out.color, gen_out.depth)
    losses.gd, g_gd_c, g_gd_d = gd_loss(gen_out.color, gen_out.depth,
                                        batch.luma_ref, batch.depth_ref)
    grad_color = g_data_c + g_tv_c + g_gd_c
    grad_depth = g_data_d + g_tv_d + g_gd_d

    if config.adversarial_enabled:
        fake_img = _compose_color_image(gen_out.color, batch)
        fake_map, fake_cache = discriminator_forward(disc, fake_img, want_cache=True)
        p_fake = _map_mean(fake_map)
        losses.adv_g, g_adv_fake = generator_adversarial_loss(p_fake)
        _, grad_fake_img = discriminator_backward(disc, fake_cache,
                                                  _spread(g_adv_fake, fake_map))
        grad_color = grad_color + config.alpha * grad_fake_img[..., 0:1]

    losses.total_g = total_generator_objective(config.alpha, losses.adv_g,
                                               losses.data, losses.tv, losses.gd)
    _check_finite(losses)

    g_grads, _, _ = generator_backward(gen, gen_cache, grad_color, grad_depth)
    g_names = [n for n, _ in parameters(gen)]
    adam_step(adam_g, [a for _, a in parameters(gen)],
              flatten_grads(gen, g_grads), g_names)
    assert adam_g.step == g_step0 + 1
    assert adam_d.step == d_step0 + (1 if config.adversarial_enabled else 0)

    return TrainLogRecord(step=adam_g.step, epoch=0, losses=losses,
                          d_real_mean=d_real_mean, d_fake_mean=d_fake_mean,
                          seconds=time.perf_counter() - t0)


def train(config, manifest_path, resume=None, echo=False):
    """Full training run; returns the path of the rolling checkpoint.

    The checkpoint is rewritten after every epoch and includes both
    optimizer states, so any epoch boundary is a valid resume point.
    The log is append-only CSV.
    """
    config.validate()
    samples = load_manifest_samples(manifest_path, config.scale)
    pool = PatchPool(samples, config.patches_per_epoch, config.patch_size, config.seed)

    if resume:
        gen, disc, adam_g, adam_d, meta = load_checkpoint(resume)
        if adam_g is None:
            raise ConfigError(f"{resume}: checkpoint has no optimizer state, cannot resume")
        if meta["scale"] != config.scale:
            raise ConfigError(f"{resume}: checkpoint scale {meta['scale']} != config scale "
                              f"{config.scale}")
        # checkpoints carry moments and step counts; hyperparameters are
        # owned by the config
        for state in (adam_g, adam_d):
            state.lr, state.beta1 = config.lr, config.beta1
            state.beta2, state.eps = config.beta2, 1e-8
        start_epoch, step = meta["epoch"], meta["step"]
        if start_epoch >= config.epochs:
            raise ConfigError(f"{resume}: already trained for {start_epoch} epochs, "
                              f"config asks for {config.epochs}")
    else:
        gen = build_generator([config.seed, 0])
        disc = build_discriminator([config.seed, 1])
        adam_g = adam_init([a for _, a in parameters(gen)], config.lr,
                           config.beta1, config.beta2)
        adam_d = adam_init([a for _, a in parameters(disc)], config.lr,
                           config.beta1, config.beta2)
        start_epoch, step = 0, 0

    os.makedirs(config.checkpoint_dir, exist_ok=True)
    ckpt_path = os.path.join(config.checkpoint_dir, "checkpoint.ckpt")
    # fresh runs start a new log; resumed runs append to the existing one
    resuming_log = bool(resume) and os.path.exists(config.log_path)
    with open(config.log_path, "a" if resuming_log else "w", encoding="utf-8") as log:
        if not resuming_log:
            log.write(LOG_HEADER + "\n")
        for epoch in range(start_epoch, config.epochs):
            for batch in pool.epoch_batches(epoch, config.batch_size, config.seed):
                record = train_step(gen, disc, adam_g, adam_d, batch, config)
                step += 1
                record.step, record.epoch = step, epoch
                log.write(record.csv_row() + "\n")
            log.flush()
            save_checkpoint(ckpt_path, gen, disc, adam_g, adam_d,
                            meta={"scale": config.scale, "epoch": epoch + 1,
                                  "step": step, "adam_g_step": adam_g.step,
                                  "adam_d_step": adam_d.step})
            if echo:
                print(f"epoch {epoch + 1}/{config.epochs} done ({step} steps)",
                      file=sys.stderr)
    return ckpt_path
