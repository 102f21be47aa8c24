"""embed-exporter: writes EMB1 embedding files and flat tensor archives.

Runs a CLIP-style vision-language encoder (or a no-weights dummy
encoder) over the images and captions of a dataset manifest and emits
files in the exact wire formats the evaluation toolkit ingests. The
toolkit itself is not imported; the file formats are the contract.
"""

__version__ = "0.1.0"

from .encoder import ClipEncoder, DummyEncoder
from .export import ExportError, ExportJob, export_checkpoint, export_embeddings

__all__ = [
    "__version__",
    "ClipEncoder", "DummyEncoder",
    "ExportError", "ExportJob", "export_checkpoint", "export_embeddings",
]
