"""Single-archive checkpoints: named parameter tensors plus the architecture
hyperparameters needed to rebuild the networks. Loading reconstructs the
modules from the stored configuration; a caller that needs different
dimensions gets a hard error instead of a silently reshaped network.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from radiogan.discriminators import DiscriminatorConfig, Discriminators
from radiogan.generator import Generator, GeneratorConfig

FORMAT_TAG = "radiogan-checkpoint-v1"


class CheckpointError(ValueError):
    pass


class ArchitectureMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    step: int
    generator_config: dict
    discriminator_config: dict
    generator_state: dict
    discriminator_state: dict
    opt_g_state: dict | None
    opt_d_state: dict | None
    train_config: dict | None


def save_checkpoint(path, generator, discriminators, opt_g=None, opt_d=None, step=0, train_config=None):
    payload = {
        "format": FORMAT_TAG,
        "step": int(step),
        "generator_config": asdict(generator.config),
        "discriminator_config": asdict(discriminators.config),
        "generator_state": generator.state_dict(),
        "discriminator_state": discriminators.state_dict(),
        "opt_g_state": None if opt_g is None else opt_g.state_dict(),
        "opt_d_state": None if opt_d is None else opt_d.state_dict(),
        "train_config": train_config,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    payload = torch.load(path, weights_only=True)
    if payload.get("format") != FORMAT_TAG:
        raise CheckpointError(f"unknown checkpoint format {payload.get('format')!r} in {path}")
    return Checkpoint(
        step=payload["step"],
        generator_config=payload["generator_config"],
        discriminator_config=payload["discriminator_config"],
        generator_state=payload["generator_state"],
        discriminator_state=payload["discriminator_state"],
        opt_g_state=payload["opt_g_state"],
        opt_d_state=payload["opt_d_state"],
        train_config=payload["train_config"],
    )


def restore_models(ckpt: Checkpoint):
    generator = Generator(GeneratorConfig(**ckpt.generator_config))
    discriminators = Discriminators(DiscriminatorConfig(**ckpt.discriminator_config))
    generator.load_state_dict(ckpt.generator_state)
    discriminators.load_state_dict(ckpt.discriminator_state)
    return generator, discriminators


def require_compatible(ckpt: Checkpoint, gene_dim=None, image_size=None):
    """Hard error when the checkpointed architecture does not fit the data."""
    if gene_dim is not None and ckpt.generator_config["gene_dim"] != gene_dim:
        raise ArchitectureMismatchError(
            f"checkpoint expects gene_dim {ckpt.generator_config['gene_dim']}, data has {gene_dim}"
        )
    if image_size is not None and ckpt.generator_config["image_size"] != image_size:
        raise ArchitectureMismatchError(
            f"checkpoint expects image_size {ckpt.generator_config['image_size']}, data has {image_size}"
        )
    return ckpt
