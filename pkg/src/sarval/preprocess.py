"""Dataset preparation: dynamic-range normalization, clipping, tiling.

Amplitudes are divided by ``mu + k*sigma`` (population statistics of the
image, k = 3 by default) and clipped to [0, 1]. Everything at or above
the threshold lands at exactly 1.0, which acts as the saturation
sentinel downstream; the saturated count is reported alongside the
normalized image rather than folded into it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .raster import AmplitudeImage


@dataclass(frozen=True)
class NormalizationParams:
    """Mean/standard deviation of an amplitude image plus the sigma multiplier."""

    mu: float
    sigma: float
    k: float = 3.0

    def __post_init__(self):
        if self.sigma < 0 or self.mu < 0:
            raise InputError("invalid-params", "mu and sigma must be non-negative")
        if self.denominator <= 0:
            raise InputError("zero-denominator", "mu + k*sigma must be positive")

    @property
    def denominator(self) -> float:
        return self.mu + self.k * self.sigma


@dataclass(frozen=True)
class SaturationReport:
    total_pixels: int
    saturated_pixels: int

    @property
    def fraction(self) -> float:
        return self.saturated_pixels / self.total_pixels


def compute_norm_params(image: AmplitudeImage, k: float = 3.0) -> NormalizationParams:
    """Population mean and standard deviation (divisor N) of the raster."""
    if image.normalized:
        raise InputError("already-normalized",
                         f"image {image.source_id!r} is already normalized")
    if image.data.size == 0:
        raise InputError("degenerate-dimensions", "cannot compute statistics of an empty image")
    values = image.data.astype(np.float64)
    mu = float(values.mean())
    sigma = float(values.std())
    return NormalizationParams(mu=mu, sigma=sigma, k=k)


def normalize_clip(image: AmplitudeImage,
                   params: NormalizationParams) -> tuple[AmplitudeImage, SaturationReport]:
    """Scale amplitudes by ``mu + k*sigma`` and clip to [0, 1].

    A pixel is saturated when its amplitude reaches the threshold
    (pre-clip value >= 1); the comparison is done against the threshold
    itself so the count is exact in floating point.
    """
    denom = params.denominator
    saturated = int(np.count_nonzero(image.data >= denom))
    scaled = np.minimum(image.data.astype(np.float64) / denom, 1.0)
    out = AmplitudeImage.from_array(scaled, normalized=True, source_id=image.source_id)
    report = SaturationReport(total_pixels=image.data.size, saturated_pixels=saturated)
    return out, report


def tile(image: AmplitudeImage, tile_size: int, stride: int) -> list[AmplitudeImage]:
    """Cut all fully contained ``tile_size`` squares, row-major scan order.

    Remainders at the right/bottom edges are dropped. Tiles inherit the
    source id with an ``+x+y`` offset suffix. An image smaller than the
    tile yields an empty list.
    """
    if tile_size < 1 or stride < 1:
        raise InputError("invalid-params", "tile_size and stride must be >= 1")
    tiles: list[AmplitudeImage] = []
    for y in range(0, image.height - tile_size + 1, stride):
        for x in range(0, image.width - tile_size + 1, stride):
            window = np.ascontiguousarray(image.data[y:y + tile_size, x:x + tile_size])
            tiles.append(AmplitudeImage(
                width=tile_size, height=tile_size, data=window,
                normalized=image.normalized,
                source_id=f"{image.source_id}+{x}+{y}",
            ))
    return tiles
