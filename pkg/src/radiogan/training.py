"""Alternating least-squares adversarial training with mismatch sampling.

Every batch's randomness comes from a fresh generator keyed on
(seed, step index), so a replayed step or a resumed run reproduces the
uninterrupted one exactly. The metric log is an append-only CSV with one row
per step: step, the three discriminator losses, the generator loss, the
masked background L1, and wall-clock seconds.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from radiogan.checkpoint import load_checkpoint, restore_models, save_checkpoint
from radiogan.data.manifest import CorpusData
from radiogan.discriminators import DiscriminatorConfig, Discriminators
from radiogan.generator import Generator, GeneratorConfig
from radiogan.losses import (
    erode_background_batch,
    loss_d_i,
    loss_d_is,
    loss_d_isg,
    loss_g,
    masked_l1,
)

METRIC_COLUMNS = ("step", "loss_d_i", "loss_d_is", "loss_d_isg", "loss_g", "masked_l1", "wall_clock")


class TrainingError(RuntimeError):
    pass


class MismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    lam: float = 10.0
    batch_size: int = 8
    steps: int = 2000
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    erosion_radius_px: int = 2
    seed: int = 0
    d_steps_per_g_step: int = 1
    checkpoint_every: int = 500

    def validate(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        for name in ("batch_size", "d_steps_per_g_step", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.erosion_radius_px < 0:
            raise ValueError("erosion_radius_px must be >= 0")
        return self

    @classmethod
    def from_json(cls, path) -> "TrainingConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**doc).validate()

    def to_json(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")


@dataclass
class Batch:
    images: torch.Tensor       # (B, 1, S, S) real nodule slices
    masks: torch.Tensor        # matched masks
    genes: torch.Tensor        # matched gene vectors
    backgrounds: torch.Tensor  # generator input / reconstruction base
    wrong_genes: torch.Tensor  # from a different subject than the anchor
    wrong_masks: torch.Tensor  # from a different sample
    noise: torch.Tensor


@dataclass
class TrainState:
    generator: Generator
    discriminators: Discriminators
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    step: int
    seed: int


def step_rng(seed, step):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step,)))


def init_gan_weights(module):
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)


def build_models(gen_config: GeneratorConfig, disc_config: DiscriminatorConfig, seed):
    torch.manual_seed(seed)
    generator = Generator(gen_config)
    discriminators = Discriminators(disc_config)
    generator.apply(init_gan_weights)
    discriminators.apply(init_gan_weights)
    return generator, discriminators


def build_optimizers(generator, discriminators, config: TrainingConfig):
    betas = (config.beta1, config.beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr_g, betas=betas)
    opt_d = torch.optim.Adam(discriminators.parameters(), lr=config.lr_d, betas=betas)
    return opt_g, opt_d


def sample_batch(data: CorpusData, batch_size, rng, noise_dim) -> Batch:
    """Anchors plus mismatches: a gene from another subject, a mask from
    another sample, and a background from the training pool."""
    if data.n_subjects < 2:
        raise MismatchError("mismatch sampling needs at least 2 subjects")
    if data.n_samples < 2:
        raise MismatchError("mismatch sampling needs at least 2 samples")
    if len(data.backgrounds_train) == 0:
        raise MismatchError("corpus has no training backgrounds")

    idx = rng.integers(0, data.n_samples, size=batch_size)
    subjects = data.sample_subject[idx]

    # uniform over the other subjects / other samples via the shift trick
    wrong_subj = rng.integers(0, data.n_subjects - 1, size=batch_size)
    wrong_subj = wrong_subj + (wrong_subj >= subjects)
    wrong_sample = rng.integers(0, data.n_samples - 1, size=batch_size)
    wrong_sample = wrong_sample + (wrong_sample >= idx)

    bg_idx = rng.integers(0, len(data.backgrounds_train), size=batch_size)
    noise = rng.standard_normal((batch_size, noise_dim)).astype(np.float32)

    as_image = lambda a: torch.from_numpy(a).unsqueeze(1)
    return Batch(
        images=as_image(data.images[idx]),
        masks=as_image(data.masks[idx]),
        genes=torch.from_numpy(data.genes[subjects]),
        backgrounds=as_image(data.backgrounds_train[bg_idx]),
        wrong_genes=torch.from_numpy(data.genes[wrong_subj]),
        wrong_masks=as_image(data.masks[wrong_sample]),
        noise=torch.from_numpy(noise),
    )


def _require_finite(name, value):
    if torch.is_tensor(value):
        value = float(value.detach())
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss term {name}: {value}")
    return value


def train_step(state: TrainState, batch: Batch, config: TrainingConfig):
    """One alternation: d_steps_per_g_step discriminator updates, then one
    generator update. Deterministic given (state, batch)."""
    generator, disc = state.generator, state.discriminators
    generator.train()
    disc.train()

    for _ in range(config.d_steps_per_g_step):
        with torch.no_grad():
            fake = generator(batch.backgrounds, batch.genes, batch.noise)
        code = disc.map_gene(batch.genes)
        wrong_code = disc.map_gene(batch.wrong_genes)

        # D_I sees backgrounds as reals too, so empty-mask synthesis cannot win
        real_images = torch.cat([batch.images, batch.backgrounds], dim=0)
        d_i = loss_d_i(disc.score_i(real_images), disc.score_i(fake.image))
        d_is = loss_d_is(
            disc.score_is(batch.images, batch.masks),
            disc.score_is(batch.images, batch.wrong_masks),
            disc.score_is(fake.image, fake.soft_mask),
        )
        d_isg = loss_d_isg(
            disc.score_isg(batch.images, batch.masks, code),
            disc.score_isg(batch.images, batch.wrong_masks, code),
            disc.score_isg(batch.images, batch.masks, wrong_code),
            disc.score_isg(fake.image, fake.soft_mask, code),
        )
        for name, value in (("loss_d_i", d_i), ("loss_d_is", d_is), ("loss_d_isg", d_isg)):
            _require_finite(name, value)
        state.opt_d.zero_grad(set_to_none=True)
        (d_i + d_is + d_isg).backward()
        state.opt_d.step()

    out = generator(batch.backgrounds, batch.genes, batch.noise)
    bg_region = erode_background_batch(out.soft_mask, config.erosion_radius_px)
    code = disc.map_gene(batch.genes)
    g_loss = loss_g(
        disc.score_i(out.image),
        disc.score_is(out.image, out.soft_mask),
        disc.score_isg(out.image, out.soft_mask, code),
        out.image,
        batch.backgrounds,
        bg_region,
        config.lam,
    )
    l1 = masked_l1(out.image, batch.backgrounds, bg_region)
    _require_finite("loss_g", g_loss)
    _require_finite("masked_l1", l1)
    state.opt_g.zero_grad(set_to_none=True)
    g_loss.backward()
    state.opt_g.step()

    state.step += 1
    return {
        "step": state.step,
        "loss_d_i": float(d_i.detach()),
        "loss_d_is": float(d_is.detach()),
        "loss_d_isg": float(d_isg.detach()),
        "loss_g": float(g_loss.detach()),
        "masked_l1": float(l1.detach()),
    }


def fit(data: CorpusData, config: TrainingConfig, out_dir, resume_from=None,
        gen_config=None, disc_config=None):
    """Run the configured number of steps, checkpointing and logging metrics.

    Returns (state, metrics_path). A run resumed from the step-k checkpoint
    continues with the same batch stream as the uninterrupted run. Custom
    architecture configs apply to fresh runs only; a resumed run rebuilds the
    networks stored in its checkpoint.
    """
    config.validate()
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        generator, disc = restore_models(ckpt)
        if generator.config.gene_dim != data.genes.shape[1]:
            raise TrainingError(
                f"checkpoint gene_dim {generator.config.gene_dim} != corpus {data.genes.shape[1]}"
            )
        opt_g, opt_d = build_optimizers(generator, disc, config)
        if ckpt.opt_g_state is not None:
            opt_g.load_state_dict(ckpt.opt_g_state)
        if ckpt.opt_d_state is not None:
            opt_d.load_state_dict(ckpt.opt_d_state)
        start_step = ckpt.step
    else:
        if gen_config is None:
            gen_config = GeneratorConfig(
                image_size=data.manifest.image_size, gene_dim=data.genes.shape[1]
            )
        if disc_config is None:
            disc_config = DiscriminatorConfig(
                image_size=data.manifest.image_size, gene_dim=data.genes.shape[1]
            )
        generator, disc = build_models(gen_config, disc_config, config.seed)
        opt_g, opt_d = build_optimizers(generator, disc, config)
        start_step = 0
        save_checkpoint(
            ckpt_dir / "ckpt_000000.pt", generator, disc, opt_g, opt_d, 0, asdict(config)
        )

    state = TrainState(generator, disc, opt_g, opt_d, start_step, config.seed)
    config.to_json(out_dir / "train_config.json")

    metrics_path = out_dir / "metrics.csv"
    write_header = not metrics_path.exists()
    with metrics_path.open("a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if write_header:
            writer.writerow(METRIC_COLUMNS)
        t0 = time.monotonic()
        for step in range(start_step, config.steps):
            rng = step_rng(config.seed, step)
            batch = sample_batch(data, config.batch_size, rng, generator.config.noise_dim)
            metrics = train_step(state, batch, config)
            metrics["wall_clock"] = time.monotonic() - t0
            writer.writerow([repr(metrics[c]) if isinstance(metrics[c], float) else metrics[c] for c in METRIC_COLUMNS])
            if state.step % config.checkpoint_every == 0 or state.step == config.steps:
                save_checkpoint(
                    ckpt_dir / f"ckpt_{state.step:06d}.pt",
                    generator, disc, opt_g, opt_d, state.step, asdict(config),
                )
    save_checkpoint(
        out_dir / "checkpoint.pt", generator, disc, opt_g, opt_d, state.step, asdict(config)
    )
    return state, metrics_path


def read_metrics(path):
    """Parse a metrics CSV back into a list of dicts with float fields."""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: (int(v) if k == "step" else float(v)) for k, v in row.items()})
    return rows
