"""Corpus construction from per-subject volumes, masks, and a gene table.

Expected input layout under ``image_root``::

    <subject_id>/volume.npy        3-D array, CT intensities (HU)
    <subject_id>/spacing.json      {"spacing_mm": [axis0, axis1, axis2]}
    <subject_id>/nodule_mask.npy   3-D binary, aligned with volume
    <subject_id>/lung_mask.npy     3-D binary, aligned with volume

Subjects without a matching row in the gene table are skipped and listed in
the build report. Lung segmentation is an input, not computed here.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from radiogan.data.manifest import BackgroundRef, DatasetManifest, SampleRef
from radiogan.data.patches import (
    HU_WINDOW,
    SamplingError,
    VoiBoundsError,
    resample_square,
    sample_background_centers,
    sample_nodule_slices,
    voi_slices,
    window_intensity,
)
from radiogan.genomics import GeneTable, save_gene_table

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProtocolConfig:
    voi_mm: float = 60.0
    patch_size: int = 64
    d_min_mm: float = 5.0
    d_max_mm: float = 25.0
    bg_vois_per_subject: int = 2
    bg_slices_per_voi: int = 20
    hu_window: tuple[float, float] = HU_WINDOW
    heldout_bg_every: int = 4
    clamp_voi: bool = True
    seed: int = 0


@dataclass
class BuildReport:
    subjects_found: int = 0
    subjects_used: int = 0
    n_samples: int = 0
    n_backgrounds: int = 0
    skipped: list = field(default_factory=list)

    def skip(self, subject_id, reason):
        log.warning("skipping subject %s: %s", subject_id, reason)
        self.skipped.append({"subject_id": subject_id, "reason": reason})

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")


def _load_subject(subject_dir: Path):
    volume = np.load(subject_dir / "volume.npy")
    spacing = json.loads((subject_dir / "spacing.json").read_text(encoding="utf-8"))["spacing_mm"]
    nodule = np.load(subject_dir / "nodule_mask.npy").astype(bool)
    lung = np.load(subject_dir / "lung_mask.npy").astype(bool)
    if volume.shape != nodule.shape or volume.shape != lung.shape:
        raise ValueError(f"misaligned arrays in {subject_dir}")
    return volume, tuple(float(s) for s in spacing), nodule, lung


def build_dataset(image_root, gene_table: GeneTable, config: ProtocolConfig, out_dir):
    """Pair every nodule slice with its subject's gene vector; returns (manifest, report)."""
    image_root = Path(image_root)
    out_dir = Path(out_dir)
    (out_dir / "subjects").mkdir(parents=True, exist_ok=True)
    if not image_root.is_dir():
        raise FileNotFoundError(f"image root {image_root} does not exist")

    report = BuildReport()
    subject_dirs = sorted(d for d in image_root.iterdir() if (d / "volume.npy").exists())
    report.subjects_found = len(subject_dirs)

    samples, backgrounds = [], []
    used_ids = []
    bg_counter = 0
    for subject_dir in subject_dirs:
        sid = subject_dir.name
        if sid not in gene_table.subject_ids:
            report.skip(sid, "no gene row")
            continue
        try:
            volume, spacing, nodule, lung = _load_subject(subject_dir)
            subject_samples, subject_bgs, bg_counter = _process_subject(
                sid, len(used_ids), volume, spacing, nodule, lung, config, out_dir, bg_counter
            )
        except (VoiBoundsError, SamplingError, ValueError, FileNotFoundError) as exc:
            report.skip(sid, str(exc))
            continue
        if not subject_samples:
            report.skip(sid, "no nodule slices")
            continue
        samples.extend(subject_samples)
        backgrounds.extend(subject_bgs)
        used_ids.append(sid)

    if not used_ids:
        raise ValueError(f"no usable subjects under {image_root}")

    keep = [gene_table.subject_ids.index(sid) for sid in used_ids]
    table = GeneTable(used_ids, list(gene_table.gene_names), gene_table.values[keep])
    save_gene_table(table, out_dir / "genes.csv")

    report.subjects_used = len(used_ids)
    report.n_samples = len(samples)
    report.n_backgrounds = len(backgrounds)
    report.save(out_dir / "build_report.json")

    in_plane = config.voi_mm / config.patch_size
    manifest = DatasetManifest(
        root=out_dir,
        seed=config.seed,
        image_size=config.patch_size,
        gene_dim=table.n_genes,
        spacing_mm=(in_plane, in_plane),
        gene_table="genes.csv",
        samples=samples,
        backgrounds=backgrounds,
        bg_distance_mm=(config.d_min_mm, config.d_max_mm),
        planted_factors=None,
    )
    manifest.save()
    return manifest.validate(), report


def _process_subject(sid, ordinal, volume, spacing, nodule, lung, config, out_dir, bg_counter):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(ordinal,)))
    subject_dir = out_dir / "subjects" / sid
    subject_dir.mkdir(parents=True, exist_ok=True)
    in_plane = (spacing[1], spacing[2])

    # nodule VOI around the mask centroid
    if not nodule.any():
        raise ValueError("empty nodule mask")
    com = ndimage.center_of_mass(nodule)
    center_mm = tuple((c + 0.5) * s for c, s in zip(com, spacing))
    sl = voi_slices(volume.shape, spacing, center_mm, config.voi_mm, clamp=config.clamp_voi)
    voi = window_intensity(volume[sl], config.hu_window)
    mask_voi = nodule[sl]

    samples = []
    for k, (patch, mask) in enumerate(sample_nodule_slices(voi, mask_voi, in_plane)):
        image = np.clip(resample_square(patch.pixels, config.patch_size, order=1), -1.0, 1.0)
        mask_rs = resample_square(mask.pixels, config.patch_size, order=0).astype(np.uint8)
        image_rel = f"subjects/{sid}/sample_{k:03d}_image.npy"
        mask_rel = f"subjects/{sid}/sample_{k:03d}_mask.npy"
        np.save(out_dir / image_rel, image.astype(np.float32))
        np.save(out_dir / mask_rel, mask_rs)
        samples.append(SampleRef(sid, image_rel, mask_rel))

    # background VOIs at controlled distance from the nodule-free lung boundary
    backgrounds = []
    centers = sample_background_centers(
        lung, nodule, spacing, config.d_min_mm, config.d_max_mm, config.bg_vois_per_subject, rng
    )
    bg_index = 0
    for center_idx, distance in centers:
        center_mm = tuple((c + 0.5) * s for c, s in zip(center_idx, spacing))
        sl = voi_slices(volume.shape, spacing, center_mm, config.voi_mm, clamp=True)
        bg_voi = window_intensity(volume[sl], config.hu_window)
        nod_voi = nodule[sl]
        eligible_z = [z for z in range(bg_voi.shape[0]) if not nod_voi[z].any()]
        if not eligible_z:
            continue
        take = min(config.bg_slices_per_voi, len(eligible_z))
        chosen = rng.choice(len(eligible_z), size=take, replace=False)
        for z in sorted(eligible_z[j] for j in chosen):
            patch = np.clip(resample_square(bg_voi[z], config.patch_size, order=1), -1.0, 1.0)
            rel = f"subjects/{sid}/bg_{bg_index:03d}.npy"
            np.save(out_dir / rel, patch.astype(np.float32))
            role = "heldout" if bg_counter % config.heldout_bg_every == config.heldout_bg_every - 1 else "train"
            backgrounds.append(BackgroundRef(sid, rel, float(distance), role))
            bg_index += 1
            bg_counter += 1
    return samples, backgrounds, bg_counter
