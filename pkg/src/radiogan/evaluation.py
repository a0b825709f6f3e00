"""Quantitative evaluation: gene-code structure, factor recovery against the
planted ground truth, background preservation, and report/plot artifacts.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.stats import spearmanr
from sklearn.cluster import KMeans
from sklearn.manifold import TSNE
from sklearn.metrics import silhouette_score

from radiogan.checkpoint import load_checkpoint, require_compatible, restore_models
from radiogan.data.manifest import CorpusData, DatasetManifest
from radiogan.generator import Generator, ShapeError
from radiogan.losses import erode_background
from radiogan.training import step_rng


@dataclass
class CodeMatrix:
    """One learned gene code per subject row."""

    subject_ids: list[str]
    codes: np.ndarray

    def __post_init__(self):
        if len(self.subject_ids) != self.codes.shape[0]:
            raise ValueError("one code row per subject required")


def embed_genes(generator: Generator, manifest: DatasetManifest) -> CodeMatrix:
    """Map every gene-table row through the generator's mapping network."""
    table = manifest.load_gene_table()
    if table.n_genes != generator.config.gene_dim:
        raise ShapeError(
            f"gene table width {table.n_genes} != generator gene_dim {generator.config.gene_dim}"
        )
    generator.eval()
    with torch.no_grad():
        codes = generator.map_gene(torch.from_numpy(table.values).float()).numpy()
    return CodeMatrix(list(table.subject_ids), codes.astype(np.float64))


def project_2d(codes, perplexity=10.0, seed=0):
    """Deterministic 2-D t-SNE of the code rows."""
    codes = np.asarray(codes)
    n = codes.shape[0]
    if n <= 3 * perplexity:
        raise ValueError(
            f"need more than 3*perplexity subjects for the projection: {n} <= {3 * perplexity:g}"
        )
    tsne = TSNE(n_components=2, perplexity=perplexity, random_state=seed, init="pca")
    return tsne.fit_transform(codes.astype(np.float64))


def cluster_quality(points, labels):
    """Silhouette score; zero-width degenerate clusters score 0 by convention."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if len(set(labels.tolist())) < 2:
        raise ValueError("silhouette is undefined for a single label")
    if np.allclose(points, points[0]):
        return 0.0
    return float(silhouette_score(points, labels))


def kmeans_silhouette_sweep(points, k_range=range(2, 7), seed=0):
    """Best (k, silhouette, labels) over a small k sweep."""
    points = np.asarray(points, dtype=np.float64)
    best = None
    for k in k_range:
        if k >= len(points):
            break
        labels = KMeans(n_clusters=k, n_init=10, random_state=seed).fit_predict(points)
        if len(set(labels.tolist())) < 2:
            continue
        score = cluster_quality(points, labels)
        if best is None or score > best[1]:
            best = (k, score, labels)
    if best is None:
        raise ValueError("no valid clustering in the swept range")
    return best


def background_preservation(synth, base, mask, radius_px):
    """Mean absolute intensity change over the eroded background region."""
    synth = np.asarray(synth, dtype=np.float64)
    base = np.asarray(base, dtype=np.float64)
    if synth.shape != base.shape:
        raise ValueError(f"shape mismatch {synth.shape} vs {base.shape}")
    region = erode_background(np.asarray(mask), radius_px).astype(bool)
    if not region.any():
        raise ValueError("background region is empty after erosion")
    return float(np.abs(synth - base)[region].mean())


@dataclass
class FactorRecoveryReport:
    per_factor_rho: list[float]
    probe_r2: float

    def to_dict(self):
        return asdict(self)


def factor_recovery(codes, planted, fit_fraction=0.5, seed=0) -> FactorRecoveryReport:
    """Best |Spearman rho| per planted factor over single code dimensions,
    plus out-of-sample R^2 of a least-squares probe from codes to factors."""
    codes = np.asarray(codes, dtype=np.float64)
    planted = np.asarray(planted, dtype=np.float64)
    if codes.shape[0] != planted.shape[0]:
        raise ValueError(f"row mismatch: {codes.shape[0]} codes vs {planted.shape[0]} factors")
    n, n_factors = planted.shape

    rho = np.zeros((codes.shape[1], n_factors))
    for j in range(n_factors):
        for d in range(codes.shape[1]):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # constant columns give NaN
                r = spearmanr(codes[:, d], planted[:, j]).statistic
            rho[d, j] = 0.0 if np.isnan(r) else r
    per_factor = [float(np.abs(rho[:, j]).max()) for j in range(n_factors)]

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_fit = max(2, int(round(fit_fraction * n)))
    fit_idx, eval_idx = order[:n_fit], order[n_fit:]
    if len(eval_idx) < 2:
        raise ValueError(f"too few rows ({n}) for a fit/evaluate split")

    mu = codes[fit_idx].mean(axis=0)
    sd = codes[fit_idx].std(axis=0)
    sd[sd < 1e-12] = 1.0
    x_fit = np.c_[np.ones(len(fit_idx)), (codes[fit_idx] - mu) / sd]
    x_eval = np.c_[np.ones(len(eval_idx)), (codes[eval_idx] - mu) / sd]
    coef, *_ = np.linalg.lstsq(x_fit, planted[fit_idx], rcond=None)
    pred = x_eval @ coef

    resid = ((planted[eval_idx] - pred) ** 2).sum(axis=0)
    total = ((planted[eval_idx] - planted[eval_idx].mean(axis=0)) ** 2).sum(axis=0)
    total[total < 1e-12] = 1e-12
    r2 = float(np.mean(1.0 - resid / total))
    return FactorRecoveryReport(per_factor, r2)


def permutation_null_max_rho(codes, planted, n_permutations=200, seed=0):
    """Null distribution of the max |Spearman rho| under subject shuffling."""
    rng = np.random.default_rng(seed)
    planted = np.asarray(planted, dtype=np.float64)
    out = []
    for _ in range(n_permutations):
        shuffled = planted[rng.permutation(len(planted))]
        report = factor_recovery(codes, shuffled, seed=seed)
        out.append(max(report.per_factor_rho))
    return np.asarray(out)


def to_uint8(image):
    arr = np.asarray(image, dtype=np.float64)
    if arr.min() < -1.0 or arr.max() > 1.0:
        warnings.warn("image values outside [-1, 1] were clamped for rendering")
        arr = np.clip(arr, -1.0, 1.0)
    return np.round((arr + 1.0) * 127.5).astype(np.uint8)


def render_grid(rows, path):
    """Tile rows of same-shaped [-1, 1] images with 1-px white separators."""
    if not rows or not rows[0]:
        raise ValueError("render_grid needs at least one image")
    tiles = [[to_uint8(img) for img in row] for row in rows]
    h, w = tiles[0][0].shape
    n_rows, n_cols = len(tiles), max(len(r) for r in tiles)
    canvas = np.full((n_rows * h + (n_rows - 1), n_cols * w + (n_cols - 1)), 255, dtype=np.uint8)
    for i, row in enumerate(tiles):
        for j, tile in enumerate(row):
            if tile.shape != (h, w):
                raise ValueError(f"tile {i},{j} has shape {tile.shape}, expected {(h, w)}")
            canvas[i * (h + 1) : i * (h + 1) + h, j * (w + 1) : j * (w + 1) + w] = tile
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas, mode="L").save(path)
    return path


def synthesize_patches(generator: Generator, backgrounds, genes, noise=None, seed=0):
    """Numpy-level batch synthesis with deterministic noise when none is given."""
    generator.eval()
    bg = torch.from_numpy(np.asarray(backgrounds, dtype=np.float32)).unsqueeze(1)
    gene = torch.from_numpy(np.asarray(genes, dtype=np.float32))
    if noise is None:
        rng = step_rng(seed, 0)
        noise = rng.standard_normal((bg.shape[0], generator.config.noise_dim)).astype(np.float32)
    with torch.no_grad():
        out = generator(bg, gene, torch.from_numpy(np.asarray(noise, dtype=np.float32)))
    return {
        "image": out.image.squeeze(1).numpy(),
        "soft_mask": out.soft_mask.squeeze(1).numpy(),
        "mask": out.mask.squeeze(1).numpy().astype(np.uint8),
        "weight_map": out.weight_map.squeeze(1).numpy(),
    }


@dataclass
class EvaluationReport:
    silhouette: float
    silhouette_k: int
    raw_gene_silhouette: float
    raw_gene_silhouette_k: int
    background_preservation_mean: float
    background_preservation_max: float
    mask_nonempty_fraction: float
    synthesized_area_rho: float | None
    factor_recovery: dict | None
    raw_gene_factor_recovery: dict | None

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")


def evaluate_checkpoint(checkpoint_path, manifest: DatasetManifest, out_dir,
                        erosion_radius_px=None, perplexity=10.0, seed=0) -> EvaluationReport:
    """Full evaluation pass: codes, clustering, t-SNE plot, synthesis checks.

    The erosion radius defaults to the one the checkpoint was trained with.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = load_checkpoint(checkpoint_path)
    require_compatible(ckpt, gene_dim=manifest.gene_dim, image_size=manifest.image_size)
    generator, _ = restore_models(ckpt)
    if erosion_radius_px is None:
        erosion_radius_px = (ckpt.train_config or {}).get("erosion_radius_px", 2)
    data = CorpusData(manifest)

    code_matrix = embed_genes(generator, manifest)
    sil_k, sil, labels = kmeans_silhouette_sweep(code_matrix.codes, seed=seed)
    raw_k, raw_sil, _ = kmeans_silhouette_sweep(data.genes.astype(np.float64), seed=seed)

    # shrink the plot perplexity at desk scale so the projection still renders
    n_subjects = code_matrix.codes.shape[0]
    eff_perplexity = min(perplexity, max(2.0, (n_subjects - 1) / 4.0))
    if n_subjects > 3 * eff_perplexity:
        coords = project_2d(code_matrix.codes, perplexity=eff_perplexity, seed=seed)
        _scatter_plot(coords, labels, out_dir / "tsne_codes.png")

    # synthesis on held-out backgrounds, cycling subjects across them
    bgs = data.backgrounds_heldout if len(data.backgrounds_heldout) else data.backgrounds_train
    n = len(bgs)
    subject_idx = np.arange(n) % data.n_subjects
    result = synthesize_patches(generator, bgs, data.genes[subject_idx], seed=seed)
    preservation = [
        background_preservation(result["image"][i], bgs[i], result["soft_mask"][i], erosion_radius_px)
        for i in range(n)
    ]
    per_subject = synthesize_patches(
        generator,
        bgs[np.arange(data.n_subjects) % n],
        data.genes[np.arange(data.n_subjects)],
        seed=seed,
    )
    nonempty = float(np.mean([m.sum() > 0 for m in per_subject["mask"]]))

    recovery = None
    raw_recovery = None
    area_rho = None
    if data.planted_subject is not None:
        recovery = factor_recovery(code_matrix.codes, data.planted_subject, seed=seed).to_dict()
        raw_recovery = factor_recovery(
            data.genes.astype(np.float64), data.planted_subject, seed=seed
        ).to_dict()
        # does the planted size factor survive into the synthesized masks?
        areas = np.array([m.sum() for m in per_subject["mask"]], dtype=np.float64)
        rho = spearmanr(data.planted_subject[:, 0], areas).statistic
        area_rho = None if np.isnan(rho) else float(rho)

    rows = [
        [bgs[i] for i in range(min(6, n))],
        [result["image"][i] for i in range(min(6, n))],
        [result["weight_map"][i] * 2 - 1 for i in range(min(6, n))],
        [result["mask"][i].astype(np.float64) * 2 - 1 for i in range(min(6, n))],
    ]
    render_grid(rows, out_dir / "synthesis_grid.png")

    report = EvaluationReport(
        silhouette=float(sil),
        silhouette_k=int(sil_k),
        raw_gene_silhouette=float(raw_sil),
        raw_gene_silhouette_k=int(raw_k),
        background_preservation_mean=float(np.mean(preservation)),
        background_preservation_max=float(np.max(preservation)),
        mask_nonempty_fraction=nonempty,
        synthesized_area_rho=area_rho,
        factor_recovery=recovery,
        raw_gene_factor_recovery=raw_recovery,
    )
    report.save(out_dir / "evaluation_report.json")
    return report


def _scatter_plot(coords, labels, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(coords[:, 0], coords[:, 1], c=labels, cmap="tab10", s=36)
    ax.set_xlabel("tsne-1")
    ax.set_ylabel("tsne-2")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
