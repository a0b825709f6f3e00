"""The three discriminators: image-only, image+mask, and image+mask+gene.

The image+mask trunk is shared between the pair score and the gene-fused
score; the image-only score has its own trunk (two encoders total). The gene
code used for fusion comes from the discriminators' own copy of the mapping
network, so the generator cannot steer it.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from radiogan.generator import LEAKY_SLOPE, ConfigError, MappingNetwork, ShapeError


@dataclass(frozen=True)
class DiscriminatorConfig:
    image_size: int = 64
    levels: int = 4
    base_channels: int = 32
    gene_dim: int = 5172
    gene_code_dim: int = 128

    def validate(self):
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.image_size % (1 << self.levels) != 0:
            raise ConfigError(f"image_size {self.image_size} not divisible by 2^{self.levels}")
        return self

    def channels(self, level):
        return self.base_channels << (level - 1)


class ConvTrunk(nn.Module):
    """Strided conv encoder; batch norm on every level except the first."""

    def __init__(self, in_ch, config: DiscriminatorConfig):
        super().__init__()
        convs, norms = [], []
        prev = in_ch
        for level in range(1, config.levels + 1):
            out = config.channels(level)
            # norm follows every level but the first; those convs skip the bias
            convs.append(nn.Conv2d(prev, out, 3, stride=2, padding=1, bias=level == 1))
            norms.append(nn.BatchNorm2d(out) if level > 1 else nn.Identity())
            prev = out
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)

    def forward(self, x):
        for conv, norm in zip(self.convs, self.norms):
            x = F.leaky_relu(norm(conv(x)), LEAKY_SLOPE)
        return x


class Discriminators(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config.validate()
        top = config.channels(config.levels)
        self.image_trunk = ConvTrunk(1, config)
        self.pair_trunk = ConvTrunk(2, config)
        self.gene_mapping = MappingNetwork(config.gene_dim, config.gene_code_dim)
        self.fuse_conv = nn.Conv2d(top + config.gene_code_dim, top, 3, padding=1, bias=False)
        self.fuse_bn = nn.BatchNorm2d(top)
        self.head_i = nn.Linear(top, 1)
        self.head_is = nn.Linear(top, 1)
        self.head_isg = nn.Linear(top, 1)

    def map_gene(self, g):
        """Discriminator-side gene code; trained by the discriminator losses only."""
        return self.gene_mapping(g)

    def _check_image(self, image):
        s = self.config.image_size
        if image.dim() != 4 or image.shape[1] != 1 or image.shape[2:] != (s, s):
            raise ShapeError(f"expected image (B, 1, {s}, {s}), got {tuple(image.shape)}")

    def score_i(self, image):
        self._check_image(image)
        feats = self.image_trunk(image)
        return self.head_i(feats.mean(dim=(2, 3))).squeeze(1)

    def _pair_features(self, image, mask):
        self._check_image(image)
        if mask.shape != image.shape:
            raise ShapeError(f"mask {tuple(mask.shape)} does not match image {tuple(image.shape)}")
        return self.pair_trunk(torch.cat([image, mask], dim=1))

    def score_is(self, image, mask):
        feats = self._pair_features(image, mask)
        return self.head_is(feats.mean(dim=(2, 3))).squeeze(1)

    def score_isg(self, image, mask, gene_code):
        feats = self._pair_features(image, mask)
        if gene_code.dim() != 2 or gene_code.shape[1] != self.config.gene_code_dim:
            raise ShapeError(
                f"expected gene code (B, {self.config.gene_code_dim}), got {tuple(gene_code.shape)}"
            )
        code_map = gene_code.unsqueeze(-1).unsqueeze(-1).expand(-1, -1, feats.shape[2], feats.shape[3])
        fused = F.leaky_relu(self.fuse_bn(self.fuse_conv(torch.cat([feats, code_map], dim=1))), LEAKY_SLOPE)
        return self.head_isg(fused.mean(dim=(2, 3))).squeeze(1)
