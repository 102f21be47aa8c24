"""sarval: preparation and statistical evaluation of SAR amplitude imagery.

Submodules
----------
raster / manifest / labeling
    Raster and mask I/O, dataset manifests, keyword labeling.
preprocess
    Dynamic-range normalization with saturation accounting, tiling.
ampstats
    Saturation-aware amplitude histograms and KL divergence.
texture
    Co-occurrence matrices and Haralick descriptors over mask patches.
alignment
    Embedding cosine matrices, softmax, batched rank statistics.
diffusion
    Forward-process, noise-offset and refine-loss numerical checks.
checkpoint
    Flat tensor archives, per-layer weight deltas, LoRA merging.
report / cli
    Config-driven evaluation runs with deterministic JSON/CSV/SVG output.
"""

__version__ = "0.1.0"

from .errors import ConfigError, InputError, MetricError, SarvalError

__all__ = [
    "__version__",
    "SarvalError", "ConfigError", "InputError", "MetricError",
]
