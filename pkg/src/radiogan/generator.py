"""Multi-conditional generator: background encoder, gene mapping, per-level
gated fusion with style normalization, and joint image/mask heads.

The background is encoded into a feature pyramid; the gene vector is mapped
to a code, concatenated with noise, and used both to seed the coarsest
synthesis features and to drive per-level AdaIN parameters. At each
resolution a fusion block re-encodes the synthesis features into a gate map
plus object features; the gate mixes the style-normalized object path with
the background path before upsampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

LEAKY_SLOPE = 0.2
ADAIN_EPS = 1e-5


class ConfigError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    image_size: int = 64
    levels: int = 4
    base_channels: int = 32
    gene_dim: int = 5172
    gene_code_dim: int = 128
    noise_dim: int = 32
    mask_threshold: float = 0.5

    def validate(self):
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.image_size % (1 << self.levels) != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by 2^{self.levels}"
            )
        for name in ("base_channels", "gene_dim", "gene_code_dim", "noise_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        return self

    def channels(self, level):
        """Channel count at pyramid level 1..levels (level 0 = head width)."""
        if level == 0:
            return max(self.base_channels // 2, 8)
        return self.base_channels << (level - 1)

    @property
    def style_dim(self):
        return self.gene_code_dim + self.noise_dim

    @property
    def seed_size(self):
        return self.image_size >> self.levels


class MappingNetwork(nn.Module):
    """Two fully-connected layers turning a raw gene vector into a code."""

    def __init__(self, gene_dim, code_dim):
        super().__init__()
        self.gene_dim = gene_dim
        self.fc1 = nn.Linear(gene_dim, code_dim)
        self.fc2 = nn.Linear(code_dim, code_dim)

    def forward(self, g):
        if g.dim() != 2 or g.shape[1] != self.gene_dim:
            raise ShapeError(f"expected gene batch (B, {self.gene_dim}), got {tuple(g.shape)}")
        return self.fc2(F.leaky_relu(self.fc1(g), LEAKY_SLOPE))


def adain(content, scale, shift, eps=ADAIN_EPS):
    """Re-statistic ``content`` per instance and channel to (shift, scale).

    scale/shift are (C,), (B, C) or broadcastable to (B, C, 1, 1). Statistics
    use the population standard deviation over the spatial dims; a constant
    channel maps to the shift alone (the eps floor kills the scaled term).
    """
    if content.dim() != 4:
        raise ShapeError(f"content must be (B, C, H, W), got {tuple(content.shape)}")
    scale = torch.as_tensor(scale, dtype=content.dtype, device=content.device)
    shift = torch.as_tensor(shift, dtype=content.dtype, device=content.device)
    if scale.dim() == 1:
        scale = scale.view(1, -1, 1, 1)
        shift = shift.view(1, -1, 1, 1)
    elif scale.dim() == 2:
        scale = scale.unsqueeze(-1).unsqueeze(-1)
        shift = shift.unsqueeze(-1).unsqueeze(-1)
    mu = content.mean(dim=(2, 3), keepdim=True)
    sigma = content.std(dim=(2, 3), keepdim=True, unbiased=False)
    return scale * (content - mu) / (sigma + eps) + shift


class FusionBlock(nn.Module):
    """Gated object/background mixer at one resolution level.

    The synthesis features are re-encoded by two conv+batchnorm layers that
    double the channel count; the first half becomes the gate map (sigmoid),
    the second half the object features. The gated object path is AdaIN-styled
    by an affine of the style vector, the background path is weighted by the
    gate complement, and the two are summed.
    """

    def __init__(self, channels, style_dim):
        super().__init__()
        self.channels = channels
        # batch norm follows both convs, so conv biases would be redundant
        self.conv1 = nn.Conv2d(channels, 2 * channels, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(2 * channels)
        self.conv2 = nn.Conv2d(2 * channels, 2 * channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(2 * channels)
        self.style_affine = nn.Linear(style_dim, 2 * channels)

    def forward(self, prev, bg, style, force_gate=None):
        if prev.shape != bg.shape:
            raise ShapeError(f"synthesis {tuple(prev.shape)} vs background {tuple(bg.shape)}")
        if prev.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {prev.shape[1]}")
        h = self.bn1(self.conv1(prev))
        h = F.leaky_relu(h, LEAKY_SLOPE)
        h = self.bn2(self.conv2(h))
        gate = torch.sigmoid(h[:, : self.channels])
        if force_gate is not None:
            gate = torch.full_like(gate, float(force_gate))
        obj = h[:, self.channels :]

        s = self.style_affine(style)
        scale = 1.0 + s[:, : self.channels]
        shift = s[:, self.channels :]
        object_path = adain(obj * gate, scale, shift)
        background_path = bg * (1.0 - gate)
        return object_path + background_path, gate


class BackgroundEncoder(nn.Module):
    """Strided conv pyramid over the background patch, finest to coarsest."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        stages = []
        in_ch = 1
        for level in range(1, config.levels + 1):
            stages.append(nn.Conv2d(in_ch, config.channels(level), 3, stride=2, padding=1))
            in_ch = config.channels(level)
        self.stages = nn.ModuleList(stages)

    def forward(self, bg):
        if bg.dim() != 4 or bg.shape[2] != bg.shape[3] or bg.shape[2] != self.config.image_size:
            raise ShapeError(
                f"expected (B, 1, {self.config.image_size}, {self.config.image_size}), "
                f"got {tuple(bg.shape)}"
            )
        levels = []
        h = bg
        for stage in self.stages:
            h = F.leaky_relu(stage(h), LEAKY_SLOPE)
            levels.append(h)
        return levels


class UpsampleStage(nn.Module):
    """Nearest-neighbor x2 followed by a conv (avoids checkerboard artifacts)."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x):
        return F.leaky_relu(self.conv(F.interpolate(x, scale_factor=2, mode="nearest")), LEAKY_SLOPE)


class SynthesisResult(NamedTuple):
    image: torch.Tensor       # (B, 1, H, W) in [-1, 1]
    soft_mask: torch.Tensor   # (B, 1, H, W) in [0, 1]
    mask: torch.Tensor        # (B, 1, H, W) binary, thresholded soft mask
    weight_map: torch.Tensor  # (B, 1, H, W) finest-level background gate
    gene_code: torch.Tensor   # (B, gene_code_dim)


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config.validate()
        self.mapping = MappingNetwork(config.gene_dim, config.gene_code_dim)
        self.encoder = BackgroundEncoder(config)
        top = config.channels(config.levels)
        self.seed = nn.Linear(config.style_dim, top * config.seed_size**2)
        self.fusion = nn.ModuleList(
            [FusionBlock(config.channels(level), config.style_dim) for level in range(1, config.levels + 1)]
        )
        self.upsample = nn.ModuleList(
            [UpsampleStage(config.channels(level), config.channels(level - 1)) for level in range(1, config.levels + 1)]
        )
        head_ch = config.channels(0)
        self.image_head = nn.Conv2d(head_ch, 1, 3, padding=1)
        self.mask_head = nn.Conv2d(head_ch, 1, 3, padding=1)

    def map_gene(self, g):
        return self.mapping(g)

    def forward(self, bg, gene, noise, force_gate=None) -> SynthesisResult:
        if noise.dim() != 2 or noise.shape[1] != self.config.noise_dim:
            raise ShapeError(f"expected noise (B, {self.config.noise_dim}), got {tuple(noise.shape)}")
        pyramid = self.encoder(bg)
        code = self.mapping(gene)
        style = torch.cat([code, noise], dim=1)

        b = bg.shape[0]
        s0 = self.config.seed_size
        x = self.seed(style).view(b, self.config.channels(self.config.levels), s0, s0)
        finest_gate = None
        for level in range(self.config.levels, 0, -1):
            x, gate = self.fusion[level - 1](x, pyramid[level - 1], style, force_gate=force_gate)
            finest_gate = gate
            x = self.upsample[level - 1](x)

        image = torch.tanh(self.image_head(x))
        soft_mask = torch.sigmoid(self.mask_head(x))
        mask = (soft_mask >= self.config.mask_threshold).to(soft_mask.dtype)
        weight = (1.0 - finest_gate).mean(dim=1, keepdim=True)
        weight_map = F.interpolate(weight, size=image.shape[2:], mode="nearest")
        return SynthesisResult(image, soft_mask, mask, weight_map, code)
