"""Corpus manifest: the on-disk index tying images, masks, genes, and provenance.

Layout of a corpus directory::

    corpus/
      manifest.json
      genes.csv                 one row per subject, normal gene-table CSV
      subjects/<id>/*.npy       float32 images in [-1, 1], uint8 masks

The manifest records sample and background references by relative path, the
generation seed, and, for synthetic corpora, the planted per-sample factors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from radiogan.genomics import GeneTable, load_gene_table

MANIFEST_NAME = "manifest.json"
FORMAT_TAG = "radiogan-corpus-v1"


class ManifestError(ValueError):
    """Broken or inconsistent corpus manifest."""


@dataclass(frozen=True)
class SampleRef:
    subject_id: str
    image: str
    mask: str


@dataclass(frozen=True)
class BackgroundRef:
    subject_id: str
    image: str
    center_distance_mm: float
    role: str = "train"  # train | heldout


@dataclass
class DatasetManifest:
    root: Path
    seed: int
    image_size: int
    gene_dim: int
    spacing_mm: tuple[float, float]
    gene_table: str
    samples: list[SampleRef] = field(default_factory=list)
    backgrounds: list[BackgroundRef] = field(default_factory=list)
    bg_distance_mm: tuple[float, float] = (5.0, 25.0)
    planted_factors: np.ndarray | None = None

    def validate(self):
        if self.planted_factors is not None and len(self.planted_factors) != len(self.samples):
            raise ManifestError(
                f"planted factor rows ({len(self.planted_factors)}) != samples ({len(self.samples)})"
            )
        lo, hi = self.bg_distance_mm
        for bg in self.backgrounds:
            if not (lo <= bg.center_distance_mm <= hi):
                raise ManifestError(
                    f"background {bg.image} distance {bg.center_distance_mm} mm "
                    f"outside [{lo}, {hi}] mm"
                )
            if bg.role not in ("train", "heldout"):
                raise ManifestError(f"background {bg.image} has unknown role {bg.role!r}")
        for rel in self._all_paths():
            if not (self.root / rel).exists():
                raise ManifestError(f"manifest reference does not resolve: {rel}")
        return self

    def _all_paths(self):
        yield self.gene_table
        for s in self.samples:
            yield s.image
            yield s.mask
        for b in self.backgrounds:
            yield b.image

    def save(self) -> Path:
        doc = {
            "format": FORMAT_TAG,
            "seed": self.seed,
            "image_size": self.image_size,
            "gene_dim": self.gene_dim,
            "spacing_mm": list(self.spacing_mm),
            "gene_table": self.gene_table,
            "bg_distance_mm": list(self.bg_distance_mm),
            "samples": [asdict(s) for s in self.samples],
            "backgrounds": [asdict(b) for b in self.backgrounds],
            "planted_factors": None
            if self.planted_factors is None
            else [[float(v) for v in row] for row in self.planted_factors],
        }
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        root = Path(root)
        path = root / MANIFEST_NAME if root.is_dir() else root
        root = path.parent
        if not path.exists():
            raise ManifestError(f"no manifest at {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("format") != FORMAT_TAG:
            raise ManifestError(f"unknown manifest format {doc.get('format')!r}")
        planted = doc.get("planted_factors")
        manifest = cls(
            root=root,
            seed=int(doc["seed"]),
            image_size=int(doc["image_size"]),
            gene_dim=int(doc["gene_dim"]),
            spacing_mm=tuple(doc["spacing_mm"]),
            gene_table=doc["gene_table"],
            samples=[SampleRef(**s) for s in doc["samples"]],
            backgrounds=[BackgroundRef(**b) for b in doc["backgrounds"]],
            bg_distance_mm=tuple(doc.get("bg_distance_mm", (5.0, 25.0))),
            planted_factors=None if planted is None else np.asarray(planted, dtype=np.float64),
        )
        return manifest.validate()

    def load_sample(self, i):
        ref = self.samples[i]
        image = np.load(self.root / ref.image)
        mask = np.load(self.root / ref.mask)
        return image, mask

    def load_background(self, i):
        return np.load(self.root / self.backgrounds[i].image)

    def load_gene_table(self) -> GeneTable:
        return load_gene_table(self.root / self.gene_table)

    def subject_ids(self):
        seen, out = set(), []
        for s in self.samples:
            if s.subject_id not in seen:
                seen.add(s.subject_id)
                out.append(s.subject_id)
        return out


class CorpusData:
    """Eager, stacked view of a corpus, as the trainer consumes it."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        table = manifest.load_gene_table()
        if table.n_genes != manifest.gene_dim:
            raise ManifestError(
                f"gene table width {table.n_genes} != manifest gene_dim {manifest.gene_dim}"
            )
        self.subject_ids = list(table.subject_ids)
        self.genes = table.values.astype(np.float32)
        index = {sid: i for i, sid in enumerate(self.subject_ids)}

        images, masks, subj = [], [], []
        for i, ref in enumerate(manifest.samples):
            if ref.subject_id not in index:
                raise ManifestError(f"sample {ref.image} references unknown subject {ref.subject_id}")
            image, mask = manifest.load_sample(i)
            images.append(image.astype(np.float32))
            masks.append((mask > 0).astype(np.float32))
            subj.append(index[ref.subject_id])
        self.images = np.stack(images) if images else np.zeros((0, manifest.image_size, manifest.image_size), np.float32)
        self.masks = np.stack(masks) if masks else np.zeros_like(self.images)
        self.sample_subject = np.asarray(subj, dtype=np.int64)

        train_bg, heldout_bg = [], []
        for i, ref in enumerate(manifest.backgrounds):
            target = heldout_bg if ref.role == "heldout" else train_bg
            target.append(manifest.load_background(i).astype(np.float32))
        shape = (manifest.image_size, manifest.image_size)
        self.backgrounds_train = np.stack(train_bg) if train_bg else np.zeros((0, *shape), np.float32)
        self.backgrounds_heldout = np.stack(heldout_bg) if heldout_bg else np.zeros((0, *shape), np.float32)

        if manifest.planted_factors is None:
            self.planted_sample = None
            self.planted_subject = None
        else:
            self.planted_sample = manifest.planted_factors
            per_subject = {}
            for row, ref in zip(manifest.planted_factors, manifest.samples):
                per_subject.setdefault(ref.subject_id, row)
            self.planted_subject = np.stack([per_subject[sid] for sid in self.subject_ids])

    @property
    def n_samples(self):
        return len(self.images)

    @property
    def n_subjects(self):
        return len(self.subject_ids)

    @classmethod
    def load(cls, root) -> "CorpusData":
        return cls(DatasetManifest.load(root))
