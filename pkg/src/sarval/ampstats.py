"""Saturation-aware amplitude histograms and KL divergence.

Pixels at exactly 1.0 are the saturation sentinel: they are excluded
from the histogram body, tracked as a separate fraction, and the
remaining mass is renormalized to sum to 1. KL divergence is computed
in nats with additive smoothing (1e-12) on the second argument only, so
empty bins of the reference distribution contribute exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import labeling
from .errors import InputError
from .manifest import Manifest, entry_label
from .raster import AmplitudeImage

#: Additive smoothing applied to the generated (Q) histogram.
SMOOTHING_EPS = 1e-12

DEFAULT_BIN_COUNT = 256


@dataclass(frozen=True)
class AmplitudeHistogram:
    """Binned amplitude density over [0, 1) with separate saturation mass.

    ``counts`` holds raw non-saturated pixel counts per bin, so partial
    histograms can be merged exactly before normalization.
    """

    bin_count: int
    counts: np.ndarray
    saturated_count: int
    sample_count: int
    n_images: int

    def __post_init__(self):
        if self.bin_count < 2:
            raise InputError("invalid-params", "bin_count must be >= 2")
        if self.counts.shape != (self.bin_count,):
            raise InputError("bin-mismatch",
                             f"counts shape {self.counts.shape} != ({self.bin_count},)")

    @property
    def bin_edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.bin_count + 1)

    @property
    def bin_centers(self) -> np.ndarray:
        edges = self.bin_edges
        return (edges[:-1] + edges[1:]) / 2.0

    @property
    def density(self) -> np.ndarray:
        """Per-bin probability mass over the non-saturated pixels (sums to 1)."""
        total = int(self.counts.sum())
        if total == 0:
            raise InputError("fully-saturated",
                             "all pixels are saturated; density is undefined")
        return self.counts.astype(np.float64) / total

    @property
    def saturated_fraction(self) -> float:
        return self.saturated_count / self.sample_count if self.sample_count else 0.0


def histogram(images: Iterable[AmplitudeImage],
              bin_count: int = DEFAULT_BIN_COUNT) -> AmplitudeHistogram:
    """Pooled saturation-aware histogram of normalized images.

    Accumulation is commutative, so image order does not matter.
    """
    if bin_count < 2:
        raise InputError("invalid-params", "bin_count must be >= 2")
    counts = np.zeros(bin_count, dtype=np.int64)
    saturated = 0
    total = 0
    n_images = 0
    for image in images:
        counts_i, sat_i = _bin_image(image, bin_count)
        counts += counts_i
        saturated += sat_i
        total += image.data.size
        n_images += 1
    if n_images == 0:
        raise InputError("no-images", "histogram requires at least one image")
    if counts.sum() == 0:
        raise InputError("fully-saturated", "every pixel is saturated; density is undefined")
    return AmplitudeHistogram(bin_count=bin_count, counts=counts,
                              saturated_count=saturated, sample_count=total,
                              n_images=n_images)


def _bin_image(image: AmplitudeImage, bin_count: int) -> tuple[np.ndarray, int]:
    """Bin one image: (per-bin counts over [0,1), saturated-pixel count)."""
    if not image.normalized:
        raise InputError("not-normalized",
                         f"image {image.source_id!r} must be normalized first")
    values = image.pixels
    saturated = int(np.count_nonzero(values == 1.0))
    body = values[values < 1.0].astype(np.float64)
    idx = np.floor(body * bin_count).astype(np.int64)
    return np.bincount(idx, minlength=bin_count), saturated


def merge_histograms(a: AmplitudeHistogram, b: AmplitudeHistogram) -> AmplitudeHistogram:
    """Exact merge of two partial histograms (associative and commutative)."""
    if a.bin_count != b.bin_count:
        raise InputError("bin-mismatch", f"bin counts differ: {a.bin_count} vs {b.bin_count}")
    return AmplitudeHistogram(bin_count=a.bin_count, counts=a.counts + b.counts,
                              saturated_count=a.saturated_count + b.saturated_count,
                              sample_count=a.sample_count + b.sample_count,
                              n_images=a.n_images + b.n_images)


@dataclass(frozen=True)
class KlReport:
    """KL divergence (nats) between a real and a generated amplitude distribution."""

    kl_nats: float
    category: Optional[str] = None
    n_real: int = 0
    n_gen: int = 0
    saturation_gap: float = 0.0
    absent: bool = False


def kl_divergence(p: AmplitudeHistogram, q: AmplitudeHistogram,
                  category: Optional[str] = None,
                  smoothing_eps: float = SMOOTHING_EPS) -> KlReport:
    """D(P || Q) in nats; P unsmoothed, Q smoothed by ``smoothing_eps``.

    Bins where P is zero contribute exactly 0, so the result is finite
    even when the generated set misses bins, and non-negativity (Gibbs'
    inequality) holds up to the smoothing perturbation.
    """
    if p.bin_count != q.bin_count:
        raise InputError("bin-mismatch",
                         f"histograms disagree on bins: {p.bin_count} vs {q.bin_count}")
    pd = p.density
    q_smooth = q.density + smoothing_eps
    q_smooth /= q_smooth.sum()
    support = pd > 0
    kl = float(np.sum(pd[support] * np.log(pd[support] / q_smooth[support])))
    return KlReport(kl_nats=kl, category=category, n_real=p.n_images, n_gen=q.n_images,
                    saturation_gap=abs(p.saturated_fraction - q.saturated_fraction))


def category_histograms(manifest: Manifest,
                        labels: Sequence[str] = labeling.DEFAULT_LABELS,
                        bin_count: int = DEFAULT_BIN_COUNT,
                        keywords=labeling.DEFAULT_KEYWORDS,
                        priority: Sequence[str] = labeling.DEFAULT_PRIORITY,
                        ) -> dict[Optional[str], AmplitudeHistogram]:
    """Pooled histogram per category, plus the global pool under key None.

    Each entry contributes to the global pool and, when it maps to a
    configured label, to that label's pool.
    """
    per_label: dict[Optional[str], AmplitudeHistogram] = {}

    def pool(key: Optional[str], hist: AmplitudeHistogram) -> None:
        per_label[key] = (merge_histograms(per_label[key], hist)
                          if key in per_label else hist)

    for entry in manifest.entries:
        image = manifest.load_image(entry)
        counts, saturated = _bin_image(image, bin_count)
        hist = AmplitudeHistogram(bin_count=bin_count, counts=counts,
                                  saturated_count=saturated,
                                  sample_count=image.data.size, n_images=1)
        pool(None, hist)
        label = entry_label(entry, keywords, priority, labels)
        if label is not None and label in labels:
            pool(label, hist)
    return per_label


def kl_by_category(manifest_real: Manifest, manifest_gen: Manifest,
                   labels: Sequence[str] = labeling.DEFAULT_LABELS,
                   bin_count: int = DEFAULT_BIN_COUNT,
                   keywords=labeling.DEFAULT_KEYWORDS,
                   priority: Sequence[str] = labeling.DEFAULT_PRIORITY) -> list[KlReport]:
    """Per-category KL reports plus a global report pooling all images.

    Categories with no images on either side are flagged absent rather
    than given a fabricated value. The global report has category None
    and comes first.
    """
    real = category_histograms(manifest_real, labels, bin_count, keywords, priority)
    gen = category_histograms(manifest_gen, labels, bin_count, keywords, priority)
    reports = []
    for category in (None, *labels):
        p, q = real.get(category), gen.get(category)
        if p is None or q is None:
            reports.append(KlReport(kl_nats=float("nan"), category=category,
                                    n_real=p.n_images if p else 0,
                                    n_gen=q.n_images if q else 0, absent=True))
        else:
            reports.append(kl_divergence(p, q, category))
    return reports
