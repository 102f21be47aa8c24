"""Export pipeline: manifest in, EMB1 pair (and optional archive) out."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .formats import write_emb1, write_tensor_archive


class ExportError(Exception):
    pass


@dataclass(frozen=True)
class ExportJob:
    manifest: Path
    out_img: Path
    out_txt: Path
    model: str = "dummy"
    dummy: bool = False
    dim: int = 32
    batch_size: int = 16
    device: str = "cpu"


def load_manifest_entries(path: Path) -> list[dict]:
    """Minimal reader for the toolkit's manifest format (array of objects)."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ExportError(f"no such manifest: {path}")
    except json.JSONDecodeError as exc:
        raise ExportError(f"{path}: not valid JSON ({exc})")
    if not isinstance(raw, list) or not all(isinstance(e, dict) and "image" in e
                                            for e in raw):
        raise ExportError(f"{path}: expected a JSON array of entries with 'image' keys")
    return raw


def _make_encoder(job: ExportJob):
    if job.dummy:
        from .encoder import DummyEncoder
        return DummyEncoder(dim=job.dim)
    from .encoder import ClipEncoder
    try:
        return ClipEncoder(job.model, device=job.device, batch_size=job.batch_size)
    except Exception as exc:
        raise ExportError(f"could not load model {job.model!r}: {exc}")


def export_embeddings(job: ExportJob, encoder=None) -> tuple[Path, Path]:
    """Encode every usable manifest entry and write the two EMB1 files.

    Entries whose image cannot be read/encoded, or that lack a caption,
    are skipped with a warning and their ids are omitted from both
    files, keeping the pairing aligned.
    """
    entries = load_manifest_entries(job.manifest)
    root = Path(job.manifest).parent
    if encoder is None:
        encoder = _make_encoder(job)

    # Pre-pass drops unusable entries (no caption, unreadable or corrupt
    # image) so their ids are omitted from both files and the remaining
    # items can be encoded in full batches.
    ids: list[str] = []
    paths: list[Path] = []
    captions: list[str] = []
    for entry in entries:
        image_id = str(entry["image"])
        caption = entry.get("caption")
        if caption is None:
            print(f"warning: {image_id}: no caption, skipped", file=sys.stderr)
            continue
        p = Path(image_id)
        path = p if p.is_absolute() else root / p
        try:
            with open(path, "rb") as fh:
                fh.read(1)
            if not job.dummy:
                from PIL import Image
                with Image.open(path) as img:
                    img.verify()
        except Exception as exc:
            print(f"warning: {image_id}: unreadable image ({exc}), skipped",
                  file=sys.stderr)
            continue
        ids.append(image_id)
        paths.append(path)
        captions.append(str(caption))
    if not ids:
        raise ExportError(f"{job.manifest}: no usable entries to export")

    img_rows = encoder.encode_images(paths)
    txt_rows = encoder.encode_texts(captions)

    write_emb1(ids, img_rows, "image", job.out_img)
    write_emb1(ids, txt_rows, "text", job.out_txt)
    return Path(job.out_img), Path(job.out_txt)


def export_checkpoint(state: Mapping[str, np.ndarray], path,
                      metadata: Optional[dict[str, str]] = None) -> Path:
    """Write a flat name -> tensor map as an archive the toolkit can parse."""
    write_tensor_archive(state, path, metadata)
    return Path(path)
