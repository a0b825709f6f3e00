"""Procedural corpus with planted factors, used as a desk-scale oracle.

Each synthetic subject gets latent factors f in [0,1]^k. The gene vector is a
fixed random linear embedding of f plus Gaussian noise; the image is a
lung-like textured background with one elliptical nodule whose radius, mean
intensity, and edge sharpness are monotone in f[0], f[1], f[2]. Factors
beyond the third carry into the genes but have no image effect.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from radiogan.data.manifest import BackgroundRef, DatasetManifest, SampleRef
from radiogan.genomics import GeneTable, save_gene_table

SLICES_PER_SUBJECT = 4
BACKGROUNDS_PER_SUBJECT = 4

# factor -> appearance maps (image_size-relative radius, absolute intensity, blur px)
RADIUS_FRAC = (0.05, 0.16)
INTENSITY = (-0.05, 0.60)
BLUR_PX = (0.4, 2.5)
BG_BASE = (-0.82, -0.72)


class SyntheticConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    n_subjects: int = 24
    gene_dim: int = 64
    n_factors: int = 3
    image_size: int = 64
    noise_level: float = 0.02
    seed: int = 0

    def validate(self):
        if self.n_subjects < 1:
            raise SyntheticConfigError("n_subjects must be >= 1")
        if self.n_factors < 1 or self.n_factors > self.gene_dim:
            raise SyntheticConfigError(
                f"need 1 <= n_factors <= gene_dim, got {self.n_factors} vs {self.gene_dim}"
            )
        if self.image_size < 32:
            raise SyntheticConfigError(f"image_size must be >= 32, got {self.image_size}")
        if self.noise_level < 0:
            raise SyntheticConfigError("noise_level must be >= 0")
        return self


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def _segment_distance(yy, xx, p0, p1):
    d = p1 - p0
    norm2 = float(d @ d)
    if norm2 == 0.0:
        return np.hypot(yy - p0[0], xx - p0[1])
    t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / norm2
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))


def render_background(rng, size):
    """Dark parenchyma-like field: smooth texture plus a few bright streaks."""
    base = rng.uniform(*BG_BASE)
    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / 16.0)
    texture /= np.abs(texture).max() + 1e-12
    img = base + 0.10 * texture

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(int(rng.integers(2, 6))):
        p0 = rng.uniform(0, size - 1, size=2)
        angle = rng.uniform(0, np.pi)
        length = rng.uniform(0.2, 0.6) * size
        p1 = p0 + length * np.array([np.sin(angle), np.cos(angle)])
        width = rng.uniform(0.6, 1.4)
        gain = rng.uniform(0.25, 0.55)
        img = img + gain * np.exp(-0.5 * (_segment_distance(yy, xx, p0, p1) / width) ** 2)
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def nodule_geometry(f, image_size):
    """Monotone factor -> (radius_px, mean intensity, edge blur px) map."""
    f = np.asarray(f, dtype=np.float64)
    size_f = f[0] if f.size > 0 else 0.5
    inten_f = f[1] if f.size > 1 else 0.5
    blur_f = f[2] if f.size > 2 else 0.5
    radius = (RADIUS_FRAC[0] + (RADIUS_FRAC[1] - RADIUS_FRAC[0]) * size_f) * image_size
    intensity = INTENSITY[0] + (INTENSITY[1] - INTENSITY[0]) * inten_f
    blur = BLUR_PX[0] + (BLUR_PX[1] - BLUR_PX[0]) * blur_f
    return float(radius), float(intensity), float(blur)


def render_sample(f, image_size, rng):
    """One (image, mask) slice for factors ``f``; center and rotation vary per call."""
    bg = render_background(rng, image_size).astype(np.float64)
    radius, intensity, blur = nodule_geometry(f, image_size)
    aspect = rng.uniform(0.78, 1.0)
    theta = rng.uniform(0.0, np.pi)
    margin = radius + 3.0 * blur + 2.0
    cy = rng.uniform(margin, image_size - 1 - margin)
    cx = rng.uniform(margin, image_size - 1 - margin)

    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    u = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
    v = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
    rho = np.hypot(u / radius, v / (radius * aspect))
    mask = (rho <= 1.0).astype(np.uint8)

    # smoothstep edge of width blur/radius in normalized units; core stays at 1
    w = blur / radius
    t = np.clip((1.0 + 0.5 * w - rho) / w, 0.0, 1.0)
    alpha = t * t * (3.0 - 2.0 * t)

    grain = ndimage.gaussian_filter(rng.standard_normal((image_size, image_size)), sigma=1.5)
    grain /= np.abs(grain).max() + 1e-12
    nodule_value = intensity + 0.04 * grain
    img = bg * (1.0 - alpha) + nodule_value * alpha
    return np.clip(img, -1.0, 1.0).astype(np.float32), mask


def generate_synthetic_corpus(config: SyntheticCorpusConfig, out_dir) -> DatasetManifest:
    """Write a synthetic corpus under ``out_dir`` and return its manifest.

    Bit-identical for a fixed config: every random draw flows from per-subject
    streams keyed on (seed, subject index).
    """
    config.validate()
    out_dir = Path(out_dir)
    (out_dir / "subjects").mkdir(parents=True, exist_ok=True)

    embed_rng = _stream(config.seed, 0)
    embedding = embed_rng.standard_normal((config.gene_dim, config.n_factors))
    embedding /= np.sqrt(config.n_factors)

    subject_ids = [f"S{i:03d}" for i in range(config.n_subjects)]
    genes = np.zeros((config.n_subjects, config.gene_dim), dtype=np.float64)
    samples, backgrounds, planted = [], [], []

    for i, sid in enumerate(subject_ids):
        rng = _stream(config.seed, 1, i)
        f = rng.uniform(0.0, 1.0, size=config.n_factors)
        genes[i] = embedding @ f + config.noise_level * rng.standard_normal(config.gene_dim)

        subject_dir = out_dir / "subjects" / sid
        subject_dir.mkdir(parents=True, exist_ok=True)
        for s in range(SLICES_PER_SUBJECT):
            image, mask = render_sample(f, config.image_size, rng)
            image_rel = f"subjects/{sid}/sample_{s:03d}_image.npy"
            mask_rel = f"subjects/{sid}/sample_{s:03d}_mask.npy"
            np.save(out_dir / image_rel, image)
            np.save(out_dir / mask_rel, mask)
            samples.append(SampleRef(sid, image_rel, mask_rel))
            planted.append(f.copy())
        for b in range(BACKGROUNDS_PER_SUBJECT):
            bg = render_background(rng, config.image_size)
            distance = float(rng.uniform(5.0, 25.0))
            role = "heldout" if b == BACKGROUNDS_PER_SUBJECT - 1 else "train"
            bg_rel = f"subjects/{sid}/bg_{b:03d}.npy"
            np.save(out_dir / bg_rel, bg)
            backgrounds.append(BackgroundRef(sid, bg_rel, distance, role))

    gene_names = [f"g{j:04d}" for j in range(config.gene_dim)]
    save_gene_table(GeneTable(subject_ids, gene_names, genes), out_dir / "genes.csv")

    manifest = DatasetManifest(
        root=out_dir,
        seed=config.seed,
        image_size=config.image_size,
        gene_dim=config.gene_dim,
        spacing_mm=(1.0, 1.0),
        gene_table="genes.csv",
        samples=samples,
        backgrounds=backgrounds,
        planted_factors=np.stack(planted),
    )
    manifest.save()
    return manifest.validate()
