"""Gray-level co-occurrence matrices and Haralick texture descriptors.

Patches are taken from the largest mask region of each image (sliding
window, fully contained), quantized to a fixed number of gray levels,
and turned into per-(distance, angle) co-occurrence matrices. The
matrix counts *ordered* pixel pairs: with x the column index (rightward)
and y the row index (downward), the offset for distance d and angle
theta (degrees) is ``(dx, dy) = (round(d*cos(theta)), round(d*sin(theta)))``
and each in-bounds position contributes the pair
``(I(x, y), I(x+dx, y+dy))``. A symmetric variant (transpose added
before normalization) is available by flag.

Four scalar descriptors are derived from the unit-sum matrix:
contrast, homogeneity, entropy (nats, with a 1e-12 guard inside the
log) and correlation from the row/column marginal moments. A patch with
zero marginal variance has no defined correlation; that case is flagged
instead of being silently mapped to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import labeling
from .errors import InputError
from .manifest import Manifest, entry_label
from .raster import AmplitudeImage, SceneMask

#: Guard added inside the entropy logarithm.
ENTROPY_EPS = 1e-12

DEFAULT_LEVELS = 64
DEFAULT_PATCH = 64
DEFAULT_DISTANCES = (1, 2, 4, 8)
DEFAULT_ANGLES = (0.0, 45.0, 90.0, 135.0)
FEATURE_NAMES = ("contrast", "homogeneity", "entropy", "correlation")


@dataclass(frozen=True)
class QuantizedPatch:
    """Square patch of integer gray-level codes in [0, levels)."""

    size: int
    levels: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.data.shape != (self.size, self.size):
            raise InputError("dimension-mismatch",
                             f"patch shape {self.data.shape} != ({self.size}, {self.size})")
        if self.data.size and (self.data.min() < 0 or self.data.max() >= self.levels):
            raise InputError("range-exceeded",
                             f"codes must lie in [0, {self.levels})")


@dataclass(frozen=True)
class GlcmMatrix:
    """Unit-sum co-occurrence matrix for one (distance, angle) offset."""

    levels: int
    distance: int
    angle: float
    matrix: np.ndarray = field(repr=False)
    pair_count: int = 0


@dataclass(frozen=True)
class HaralickFeatures:
    contrast: float
    homogeneity: float
    entropy: float
    correlation: float
    degenerate: bool = False


def offset_for(distance: int, angle_deg: float) -> tuple[int, int]:
    """(dx, dy) pixel offset; x is column rightward, y is row downward."""
    theta = math.radians(angle_deg)
    dx = int(np.rint(distance * math.cos(theta)))
    dy = int(np.rint(distance * math.sin(theta)))
    return dx, dy


def largest_region(mask: SceneMask) -> Optional[int]:
    """Region id with the most pixels, excluding background (0); ties pick the smaller id."""
    counts = np.bincount(mask.data.ravel())
    if len(counts) <= 1 or counts[1:].max() == 0:
        return None
    return int(counts[1:].argmax()) + 1


def extract_patches(image: AmplitudeImage, mask: SceneMask,
                    patch: int = DEFAULT_PATCH, stride: int = 32) -> list[tuple[int, int]]:
    """Top-left (row, col) positions of patches fully inside the largest region.

    Positions are returned in row-major scan order. An image whose
    largest region cannot hold a single window yields an empty list.
    """
    if (mask.width, mask.height) != (image.width, image.height):
        raise InputError("dimension-mismatch", "mask dimensions do not match the image")
    if patch < 1 or stride < 1:
        raise InputError("invalid-params", "patch and stride must be >= 1")
    region = largest_region(mask)
    if region is None:
        return []
    inside = (mask.data == region)
    # Summed-area table lets each window test be O(1).
    sat = np.zeros((image.height + 1, image.width + 1), dtype=np.int64)
    np.cumsum(np.cumsum(inside, axis=0), axis=1, out=sat[1:, 1:])
    positions = []
    full = patch * patch
    for y in range(0, image.height - patch + 1, stride):
        for x in range(0, image.width - patch + 1, stride):
            total = (sat[y + patch, x + patch] - sat[y, x + patch]
                     - sat[y + patch, x] + sat[y, x])
            if total == full:
                positions.append((y, x))
    return positions


def quantize(values: np.ndarray, levels: int = DEFAULT_LEVELS) -> QuantizedPatch:
    """Quantize values in [0, 1] to integer codes ``min(floor(v*levels), levels-1)``."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InputError("dimension-mismatch", f"expected a square patch, got {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise InputError("range-exceeded", "values must lie in [0, 1]")
    codes = np.minimum(np.floor(arr * levels), levels - 1).astype(np.int64)
    return QuantizedPatch(size=arr.shape[0], levels=levels, data=codes)


def glcm(patch: QuantizedPatch, distance: int, angle_deg: float,
         symmetric: bool = False) -> GlcmMatrix:
    """Co-occurrence matrix of ordered pairs at the given offset, normalized to sum 1."""
    if distance < 1:
        raise InputError("invalid-params", "distance must be >= 1")
    dx, dy = offset_for(distance, angle_deg)
    n = patch.size
    x0, x1 = max(0, -dx), min(n, n - dx)
    y0, y1 = max(0, -dy), min(n, n - dy)
    if x0 >= x1 or y0 >= y1:
        raise InputError("empty-pairs",
                         f"offset ({dx}, {dy}) leaves no pixel pairs in a {n}x{n} patch")
    first = patch.data[y0:y1, x0:x1]
    second = patch.data[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
    flat = first.ravel() * patch.levels + second.ravel()
    counts = np.bincount(flat, minlength=patch.levels ** 2).reshape(patch.levels, patch.levels)
    pair_count = int(counts.sum())
    matrix = counts.astype(np.float64)
    if symmetric:
        matrix = matrix + matrix.T
    matrix /= matrix.sum()
    return GlcmMatrix(levels=patch.levels, distance=distance, angle=angle_deg,
                      matrix=matrix, pair_count=pair_count)


def haralick(g: GlcmMatrix) -> HaralickFeatures:
    """Contrast, homogeneity, entropy (nats) and correlation of a unit-sum matrix."""
    p = g.matrix
    levels = np.arange(g.levels, dtype=np.float64)
    l = levels[:, None]
    k = levels[None, :]
    diff2 = (l - k) ** 2
    contrast = float(np.sum(p * diff2))
    homogeneity = float(np.sum(p / (1.0 + diff2)))
    entropy = float(-np.sum(p * np.log(p + ENTROPY_EPS)))
    p_l = p.sum(axis=1)
    p_k = p.sum(axis=0)
    mu_l = float(np.dot(levels, p_l))
    mu_k = float(np.dot(levels, p_k))
    var_l = float(np.dot((levels - mu_l) ** 2, p_l))
    var_k = float(np.dot((levels - mu_k) ** 2, p_k))
    sigma = math.sqrt(var_l) * math.sqrt(var_k)
    if sigma == 0.0:
        return HaralickFeatures(contrast=contrast, homogeneity=homogeneity,
                                entropy=entropy, correlation=float("nan"), degenerate=True)
    correlation = float(np.sum(p * (l - mu_l) * (k - mu_k)) / sigma)
    return HaralickFeatures(contrast=contrast, homogeneity=homogeneity,
                            entropy=entropy, correlation=correlation)


@dataclass(frozen=True)
class ProfileRow:
    """Mean/std of one feature over all patches of one (set, label, d, theta) cell."""

    set_name: str
    label: str
    feature: str
    distance: int
    angle: float
    mean: float
    std: float
    n_patches: int

    @property
    def absent(self) -> bool:
        return self.n_patches == 0


def texture_profile(manifest_real: Manifest,
                    manifest_gen: Optional[Manifest] = None,
                    labels: Sequence[str] = labeling.DEFAULT_LABELS,
                    distances: Sequence[int] = DEFAULT_DISTANCES,
                    angles: Sequence[float] = DEFAULT_ANGLES,
                    levels: int = DEFAULT_LEVELS,
                    patch: int = DEFAULT_PATCH,
                    stride: int = 32,
                    symmetric: bool = False,
                    keywords=labeling.DEFAULT_KEYWORDS,
                    priority: Sequence[str] = labeling.DEFAULT_PRIORITY) -> list[ProfileRow]:
    """Per-(set, label, distance, angle) feature summaries.

    Real rows always come first; generated rows follow when a second
    manifest is given. Cells with no valid patches are emitted with
    n_patches = 0 so absence stays visible. Degenerate correlations are
    excluded from the correlation mean.
    """
    rows: list[ProfileRow] = []
    sets = [("real", manifest_real)]
    if manifest_gen is not None:
        sets.append(("gen", manifest_gen))
    for set_name, manifest in sets:
        # label -> (d, theta) -> feature -> list of values
        acc: dict[str, dict[tuple[int, float], dict[str, list[float]]]] = {
            lab: {(d, a): {f: [] for f in FEATURE_NAMES}
                  for d in distances for a in angles}
            for lab in labels
        }
        for entry in manifest.entries:
            label = entry_label(entry, keywords, priority, labels)
            if label is None or label not in acc:
                continue
            if entry.mask is None:
                raise InputError("missing-mask", f"{entry.image}: texture profiling needs a mask")
            image = manifest.load_image(entry)
            mask = manifest.load_mask(entry, image)
            for (y, x) in extract_patches(image, mask, patch, stride):
                q = quantize(image.data[y:y + patch, x:x + patch], levels)
                for d in distances:
                    for a in angles:
                        feats = haralick(glcm(q, d, a, symmetric))
                        cell = acc[label][(d, a)]
                        cell["contrast"].append(feats.contrast)
                        cell["homogeneity"].append(feats.homogeneity)
                        cell["entropy"].append(feats.entropy)
                        if not feats.degenerate:
                            cell["correlation"].append(feats.correlation)
        for label in labels:
            for d in distances:
                for a in angles:
                    for feature in FEATURE_NAMES:
                        values = acc[label][(d, a)][feature]
                        if values:
                            arr = np.asarray(values)
                            rows.append(ProfileRow(set_name, label, feature, d, a,
                                                   float(arr.mean()), float(arr.std()),
                                                   len(values)))
                        else:
                            rows.append(ProfileRow(set_name, label, feature, d, a,
                                                   float("nan"), float("nan"), 0))
    return rows
