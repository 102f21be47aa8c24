"""Dataset manifests: JSON lists of image/mask/caption/label entries.

A manifest is an array of objects with keys ``image``, ``mask``,
``caption``, ``labels`` and ``split``; only ``image`` is required.
Relative paths are resolved against the manifest's own directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import labeling
from .errors import InputError
from .raster import AmplitudeImage, SceneMask, read_mask, read_raster

_SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    mask: Optional[str] = None
    caption: Optional[str] = None
    labels: Optional[tuple[str, ...]] = None
    split: str = "train"


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        paths = [e.image for e in self.entries]
        if len(set(paths)) != len(paths):
            raise InputError("duplicate-paths", "manifest image paths must be unique")
        for e in self.entries:
            if e.split not in _SPLITS:
                raise InputError("bad-split", f"{e.image}: split {e.split!r} not in {_SPLITS}")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    def load_image(self, entry: ManifestEntry) -> AmplitudeImage:
        return read_raster(self.resolve(entry.image))

    def load_mask(self, entry: ManifestEntry,
                  image: Optional[AmplitudeImage] = None) -> Optional[SceneMask]:
        """Load the entry's mask, checking its dimensions against the image."""
        if entry.mask is None:
            return None
        mask = read_mask(self.resolve(entry.mask))
        if image is None:
            image = self.load_image(entry)
        if (mask.width, mask.height) != (image.width, image.height):
            raise InputError("dimension-mismatch",
                             f"{entry.mask}: mask {mask.width}x{mask.height} does not match "
                             f"image {image.width}x{image.height}")
        return mask


def entry_label(entry: ManifestEntry,
                keywords=labeling.DEFAULT_KEYWORDS,
                priority: Sequence[str] = labeling.DEFAULT_PRIORITY,
                labels: Sequence[str] = labeling.DEFAULT_LABELS) -> Optional[str]:
    """Single evaluation label for an entry.

    Explicit manifest labels win; otherwise the caption is run through
    the keyword dictionary. Ambiguity is resolved by priority order.
    """
    if entry.labels:
        found = set(entry.labels)
    elif entry.caption:
        found = labeling.label_caption(entry.caption, keywords, labels)
    else:
        return None
    return labeling.primary_label(found, priority)


def load_manifest(path, labels: Sequence[str] = labeling.DEFAULT_LABELS) -> Manifest:
    """Read and validate a JSON manifest."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError("missing-file", f"no such manifest: {path}")
    except json.JSONDecodeError as exc:
        raise InputError("malformed-manifest", f"{path}: {exc}")
    if not isinstance(raw, list):
        raise InputError("malformed-manifest", f"{path}: expected a JSON array of entries")
    known = set(labels)
    entries = []
    for i, obj in enumerate(raw):
        if not isinstance(obj, dict) or "image" not in obj:
            raise InputError("malformed-manifest", f"{path}: entry {i} lacks an 'image' key")
        entry_labels = obj.get("labels")
        if entry_labels is not None:
            entry_labels = tuple(str(x) for x in entry_labels)
            bad = [x for x in entry_labels if x not in known]
            if bad:
                raise InputError("unknown-label", f"{path}: entry {i} has invalid labels {bad}")
        entries.append(ManifestEntry(
            image=str(obj["image"]),
            mask=str(obj["mask"]) if obj.get("mask") is not None else None,
            caption=str(obj["caption"]) if obj.get("caption") is not None else None,
            labels=entry_labels,
            split=str(obj.get("split", "train")),
        ))
    return Manifest(entries=tuple(entries), root=path.parent)


def save_manifest(manifest: Manifest, path) -> None:
    """Write a manifest as JSON (stable key order, one entry per array item)."""
    out = []
    for e in manifest.entries:
        obj: dict = {"image": e.image}
        if e.mask is not None:
            obj["mask"] = e.mask
        if e.caption is not None:
            obj["caption"] = e.caption
        if e.labels is not None:
            obj["labels"] = list(e.labels)
        obj["split"] = e.split
        out.append(obj)
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
