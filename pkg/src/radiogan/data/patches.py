"""Patch-level data operations: VOI cropping, slice selection, background sampling.

Images live in [-1, 1]; CT intensities are mapped there through a fixed
window before any patch leaves this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

HU_WINDOW = (-1000.0, 400.0)


class VoiBoundsError(ValueError):
    """Requested crop does not fit the volume."""


class SamplingError(ValueError):
    """No candidate satisfies the sampling constraint."""


@dataclass(frozen=True)
class ImagePatch:
    """2-D grayscale patch in [-1, 1] with physical pixel spacing (row, col) mm."""

    pixels: np.ndarray
    spacing_mm: tuple[float, float]

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float32)
        if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError(f"patch must be a non-empty 2-D grid, got {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise ValueError("patch has non-finite pixels")
        if pixels.min() < -1.0 or pixels.max() > 1.0:
            raise ValueError(
                f"patch intensities outside [-1, 1]: [{pixels.min()}, {pixels.max()}]"
            )
        if len(self.spacing_mm) != 2 or any(s <= 0 for s in self.spacing_mm):
            raise ValueError(f"spacing must be two positive reals, got {self.spacing_mm}")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "spacing_mm", (float(self.spacing_mm[0]), float(self.spacing_mm[1])))

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True)
class SegMask:
    """Binary mask on the same grid as its paired patch."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2:
            raise ValueError(f"mask must be 2-D, got {pixels.shape}")
        if not np.isin(pixels, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "pixels", pixels.astype(np.uint8))

    @property
    def shape(self):
        return self.pixels.shape

    def area(self):
        return int(self.pixels.sum())


def window_intensity(values, window=HU_WINDOW):
    """Clamp to the intensity window and map it linearly onto [-1, 1]."""
    lo, hi = window
    if hi <= lo:
        raise ValueError(f"window must be increasing, got {window}")
    x = np.clip(np.asarray(values, dtype=np.float32), lo, hi)
    return (2.0 * (x - lo) / (hi - lo) - 1.0).astype(np.float32)


def voi_slices(shape, spacing_mm, center_mm, size_mm=60.0, clamp=False):
    """Index slices for a cubic crop of physical extent ``size_mm`` per axis.

    The center must lie inside the volume. A crop spilling over an edge is an
    error unless ``clamp`` is set, in which case the window is shifted inward.
    """
    shape = tuple(shape)
    if len(shape) != len(spacing_mm) or len(shape) != len(center_mm):
        raise ValueError("shape, spacing and center must have the same rank")
    out = []
    for axis, (dim, sp, c) in enumerate(zip(shape, spacing_mm, center_mm)):
        extent = dim * sp
        if not (0.0 <= c <= extent):
            raise VoiBoundsError(
                f"center {c} mm outside volume extent [0, {extent}] mm on axis {axis}"
            )
        n = max(1, int(round(size_mm / sp)))
        if n > dim:
            raise VoiBoundsError(
                f"{size_mm} mm window needs {n} voxels on axis {axis}, volume has {dim}"
            )
        start = int(round(c / sp - n / 2.0))
        if clamp:
            start = min(max(start, 0), dim - n)
        elif start < 0 or start + n > dim:
            raise VoiBoundsError(
                f"window [{start}, {start + n}) exceeds axis {axis} of size {dim}; "
                "pass clamp=True to shift it inside"
            )
        out.append(slice(start, start + n))
    return tuple(out)


def extract_voi(volume, spacing_mm, center_mm, size_mm=60.0, clamp=False):
    """Crop a cubic volume-of-interest around ``center_mm`` (given in mm)."""
    volume = np.asarray(volume)
    sl = voi_slices(volume.shape, spacing_mm, center_mm, size_mm, clamp)
    return volume[sl].copy()


def sample_nodule_slices(voi, mask_voi, spacing_mm):
    """All axial (image, mask) slice pairs where the mask has nodule pixels.

    ``voi`` must already be intensity-normalized to [-1, 1]; the first axis is
    the slicing axis and ``spacing_mm`` gives the in-plane (row, col) spacing.
    """
    voi = np.asarray(voi)
    mask_voi = np.asarray(mask_voi)
    if voi.shape != mask_voi.shape:
        raise ValueError(f"image {voi.shape} and mask {mask_voi.shape} are misaligned")
    pairs = []
    for z in range(voi.shape[0]):
        if mask_voi[z].sum() > 0:
            pairs.append(
                (ImagePatch(voi[z], spacing_mm), SegMask((mask_voi[z] > 0).astype(np.uint8)))
            )
    return pairs


def resample_square(pixels, out_size, order=1):
    """Resample a 2-D grid to ``out_size`` x ``out_size`` (order 0 for masks)."""
    pixels = np.asarray(pixels)
    zoom = (out_size / pixels.shape[0], out_size / pixels.shape[1])
    out = ndimage.zoom(pixels.astype(np.float32), zoom, order=order, grid_mode=True, mode="nearest")
    if out.shape != (out_size, out_size):
        out = out[:out_size, :out_size]
    return out


def sample_background_centers(lung_mask, nodule_mask, spacing_mm, d_min_mm, d_max_mm, n, rng):
    """Uniformly sample ``n`` distinct centers whose distance to the boundary of
    the nodule-free lung mask lies in [d_min_mm, d_max_mm].

    Returns a list of (index_tuple, distance_mm) pairs. The distance is the
    Euclidean distance-transform value of the eligible mask at the center.
    """
    lung = np.asarray(lung_mask).astype(bool)
    nodule = np.asarray(nodule_mask).astype(bool)
    if lung.shape != nodule.shape:
        raise ValueError(f"lung {lung.shape} and nodule {nodule.shape} masks are misaligned")
    if not lung.any():
        raise SamplingError("lung mask is empty")
    if d_min_mm > d_max_mm or d_min_mm < 0:
        raise ValueError(f"need 0 <= d_min <= d_max, got [{d_min_mm}, {d_max_mm}]")
    eligible_region = lung & ~nodule
    dist = ndimage.distance_transform_edt(eligible_region, sampling=spacing_mm)
    candidates = np.argwhere((dist >= d_min_mm) & (dist <= d_max_mm))
    if len(candidates) == 0:
        raise SamplingError(
            f"no centers at {d_min_mm}-{d_max_mm} mm from the mask boundary "
            f"(max available distance {dist.max():.2f} mm)"
        )
    if n > len(candidates):
        raise SamplingError(
            f"requested {n} centers but only {len(candidates)} satisfy "
            f"the {d_min_mm}-{d_max_mm} mm band"
        )
    chosen = rng.choice(len(candidates), size=n, replace=False)
    return [(tuple(int(v) for v in candidates[i]), float(dist[tuple(candidates[i])])) for i in chosen]
