"""Lung segmentation by histogram thresholding and component selection.

Air-filled lung tissue is dark relative to the surrounding body, so voxels
below an automatically chosen intensity threshold are lung candidates. The
threshold maximizes the between-class variance of the intensity histogram.
Candidate components touching the volume border are background air and are
discarded; the two largest surviving 6-connected components are the lungs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ArgumentError, DegenerateInputError, SegmentationError
from .volume import PatchGrid, Volume3, save_volume, load_volume


@dataclass(frozen=True)
class LungMask:
    """Boolean lung map aligned with a source volume."""

    dims: tuple[int, int, int]
    bits: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != dims:
            raise ArgumentError(f"mask shape {bits.shape} does not match dims {dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "bits", bits)

    @property
    def n_true(self) -> int:
        return int(self.bits.sum())


def otsu_threshold(values: np.ndarray, n_bins: int = 256) -> float:
    """Bin-edge threshold maximizing between-class variance.

    Values are binned into ``n_bins`` uniform bins over [min, max]; for each
    interior bin edge t the split {v < t} / {v >= t} is scored by
    w0*w1*(mu0 - mu1)^2 using bin-centre means. Ties take the lowest edge.

    Bin centres enter the score only through mu0 - mu1, so they can be
    recoded as the odd integers 2k+1 without moving the argmax; the
    comparison then runs in exact integer arithmetic and near-ties cannot
    be flipped by summation order.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size < 2:
        raise ArgumentError("otsu_threshold needs at least 2 values")
    if not np.isfinite(values).all():
        raise ArgumentError("otsu_threshold requires finite values")
    n_bins = int(n_bins)
    if n_bins < 2:
        raise ArgumentError(f"n_bins must be >= 2, got {n_bins}")
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        raise DegenerateInputError("all values identical; no threshold separates them")
    counts, edges = np.histogram(values, bins=n_bins, range=(lo, hi))
    counts = counts.tolist()
    codes = [2 * k + 1 for k in range(n_bins)]
    total = sum(counts)
    total_moment = sum(c * m for c, m in zip(counts, codes))
    best_k = 1
    best_num, best_den = -1, 1  # score = num/den, both integers
    n0 = s0 = 0
    for k in range(1, n_bins):
        n0 += counts[k - 1]
        s0 += counts[k - 1] * codes[k - 1]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (s0 * n1 - (total_moment - s0) * n0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:  # strictly greater: ties keep lowest edge
            best_num, best_den, best_k = num, den, k
    return float(edges[best_k])


# 6-connectivity: faces only
_STRUCT6 = ndimage.generate_binary_structure(3, 1)


def segment_lungs(v: Volume3) -> LungMask:
    """Extract the lung compartment of a volume as a boolean mask.

    Voxels below the automatic threshold are candidates; candidate components
    touching any boundary face are removed; the two largest remaining
    components are kept (one, if only one survives).
    """
    t = otsu_threshold(v.data, 256)
    candidates = v.data < t
    labels, n_components = ndimage.label(candidates, structure=_STRUCT6)
    if n_components == 0:
        raise SegmentationError("no voxels below threshold")
    border_labels = np.unique(
        np.concatenate(
            [
                labels[0, :, :].ravel(),
                labels[-1, :, :].ravel(),
                labels[:, 0, :].ravel(),
                labels[:, -1, :].ravel(),
                labels[:, :, 0].ravel(),
                labels[:, :, -1].ravel(),
            ]
        )
    )
    sizes = np.bincount(labels.ravel(), minlength=n_components + 1)
    sizes[0] = 0
    sizes[border_labels] = 0
    surviving = np.flatnonzero(sizes)
    if surviving.size == 0:
        raise SegmentationError("all candidate components touch the volume border")
    order = np.argsort(-sizes, kind="stable")
    keep = [lab for lab in order[:2] if sizes[lab] > 0]
    mask = np.isin(labels, keep)
    return LungMask(v.dims, mask)


def lung_fraction(mask: LungMask, grid: PatchGrid, index: int) -> float:
    """Fraction of patch voxels flagged as lung, in [0, 1]."""
    if mask.dims != grid.volume_dims:
        raise ArgumentError(f"mask dims {mask.dims} do not match grid dims {grid.volume_dims}")
    if not 0 <= index < grid.n_patches:
        raise ArgumentError(f"patch index {index} out of range [0, {grid.n_patches})")
    x, y, z = grid.patch_origins[index]
    s = grid.patch_side
    block = mask.bits[x : x + s, y : y + s, z : z + s]
    return float(block.sum()) / float(s**3)


def save_mask(mask: LungMask, path, spacing=(1.0, 1.0, 1.0)) -> None:
    """Persist a mask as a 0.0/1.0 ``.evr`` volume."""
    save_volume(Volume3(mask.dims, spacing, mask.bits.astype(np.float32)), path)


def load_mask(path) -> LungMask:
    v = load_volume(path)
    return LungMask(v.dims, v.data > 0.5)
