"""Least-squares adversarial losses and the masked background reconstruction.

The score-level functions are the exact loss formulas over already computed
score tensors, so they can be checked against scalar enumeration. The
background region for the L1 term comes from eroding the complement of the
binarized generated mask with a disk; outside-of-image counts as background,
so borders are never excluded from reconstruction.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy import ndimage

MASK_BINARIZE_THRESHOLD = 0.5


class EmptyBatchError(ValueError):
    pass


def _check_nonempty(name, scores):
    if scores.numel() == 0:
        raise EmptyBatchError(f"empty {name} batch")


def real_term(scores):
    _check_nonempty("real-labeled", scores)
    return ((scores - 1.0) ** 2).mean()


def fake_term(scores):
    _check_nonempty("fake-labeled", scores)
    return (scores**2).mean()


def loss_d_i(real_scores, fake_scores):
    return real_term(real_scores) + fake_term(fake_scores)


def loss_d_is(matched_scores, wrong_mask_scores, fake_scores):
    return real_term(matched_scores) + fake_term(wrong_mask_scores) + fake_term(fake_scores)


def loss_d_isg(matched_scores, wrong_mask_scores, wrong_gene_scores, fake_scores):
    return (
        real_term(matched_scores)
        + fake_term(wrong_mask_scores)
        + fake_term(wrong_gene_scores)
        + fake_term(fake_scores)
    )


def masked_l1(synth, base, background_mask):
    """L1 between synthesis and base over the background region, averaged over
    all pixels (not just background ones) so the gradient scale stays put when
    the nodule grows."""
    if synth.shape != base.shape or synth.shape != background_mask.shape:
        raise ValueError(
            f"shape mismatch: {tuple(synth.shape)} / {tuple(base.shape)} / {tuple(background_mask.shape)}"
        )
    _check_nonempty("masked-l1", synth)
    return ((synth - base).abs() * background_mask).mean()


def loss_g(score_i, score_is, score_isg, synth, base, background_mask, weight):
    return (
        real_term(score_i)
        + real_term(score_is)
        + real_term(score_isg)
        + weight * masked_l1(synth, base, background_mask)
    )


def disk_structuring_element(radius_px):
    """Boolean disk: offsets with squared distance <= radius^2."""
    if radius_px < 0:
        raise ValueError(f"radius must be >= 0, got {radius_px}")
    r = int(radius_px)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy**2 + xx**2) <= r**2


def erode_background(mask, radius_px):
    """Binary erosion of the inverted (binarized) mask with a disk.

    Accepts a soft or binary 2-D mask; returns uint8. Pixels outside the image
    are treated as background (value 1), so erosion only bites around the
    nodule, not at the borders.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    background = ~(mask >= MASK_BINARIZE_THRESHOLD)
    if radius_px == 0:
        return background.astype(np.uint8)
    eroded = ndimage.binary_erosion(
        background, structure=disk_structuring_element(radius_px), border_value=1
    )
    return eroded.astype(np.uint8)


def erode_background_batch(masks, radius_px):
    """Per-sample erosion for a (B, 1, H, W) torch batch; returns same-shaped tensor."""
    arr = masks.detach().cpu().numpy()
    out = np.stack([erode_background(m[0], radius_px) for m in arr])[:, None]
    return torch.as_tensor(out, dtype=masks.dtype, device=masks.device)
