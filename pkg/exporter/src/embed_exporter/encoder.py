"""Image/text encoders behind one small interface.

``DummyEncoder`` needs no model weights: rows are seeded from content
hashes (image bytes, caption text), so exports are byte-reproducible
and duplicate inputs map to identical embeddings, mimicking a real
encoder in eval mode. ``ClipEncoder`` wraps a Hugging Face CLIP
checkpoint and is imported lazily so the dummy path never touches
torch.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Sequence

import numpy as np


def _l2_normalize(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return (rows / norms).astype(np.float32)


class DummyEncoder:
    """Hash-seeded pseudo-embeddings for CI runs without model downloads."""

    def __init__(self, dim: int = 32):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim

    @staticmethod
    def _row(seed_material: bytes, dim: int) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(seed_material).digest()[:8], "little")
        return np.random.default_rng(seed).standard_normal(dim)

    def encode_images(self, paths: Sequence[Path]) -> np.ndarray:
        rows = [self._row(b"image:" + Path(p).read_bytes(), self.dim) for p in paths]
        return _l2_normalize(np.stack(rows))

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        rows = [self._row(b"text:" + t.encode("utf-8"), self.dim) for t in texts]
        return _l2_normalize(np.stack(rows))

    def state_tensors(self) -> dict[str, np.ndarray]:
        """A tiny deterministic stand-in state, mainly for round-trip tests."""
        rng = np.random.default_rng(0)
        return {"dummy.projection.weight":
                rng.standard_normal((self.dim, self.dim)).astype(np.float32)}


class ClipEncoder:
    """CLIP-style encoder loaded from a Hugging Face model id or local path."""

    def __init__(self, model_id: str, device: str = "cpu", batch_size: int = 16):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "real-model export needs the 'clip' extra (torch + transformers)"
            ) from exc
        self._torch = torch
        self.device = device
        self.batch_size = batch_size
        self.model = CLIPModel.from_pretrained(model_id).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.dim = int(self.model.config.projection_dim)

    def _batches(self, items):
        for start in range(0, len(items), self.batch_size):
            yield items[start:start + self.batch_size]

    def encode_images(self, paths: Sequence[Path]) -> np.ndarray:
        from PIL import Image
        rows = []
        with self._torch.no_grad():
            for batch in self._batches(list(paths)):
                images = [Image.open(p).convert("RGB") for p in batch]
                inputs = self.processor(images=images, return_tensors="pt").to(self.device)
                feats = self.model.get_image_features(**inputs)
                rows.append(feats.cpu().numpy())
        return _l2_normalize(np.concatenate(rows))

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        with self._torch.no_grad():
            for batch in self._batches(list(texts)):
                inputs = self.processor(text=batch, return_tensors="pt",
                                        padding=True, truncation=True).to(self.device)
                feats = self.model.get_text_features(**inputs)
                rows.append(feats.cpu().numpy())
        return _l2_normalize(np.concatenate(rows))

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {name: tensor.cpu().numpy()
                for name, tensor in self.model.state_dict().items()}
