"""Shared helpers for building tiny datasets on disk."""

import json
from pathlib import Path

import numpy as np
import pytest

from sarval.raster import AmplitudeImage, SceneMask, write_mask, write_raster

FIXTURES = Path(__file__).parent / "fixtures"
MINI = FIXTURES / "mini"


def make_image(values, normalized=True, source_id="") -> AmplitudeImage:
    return AmplitudeImage.from_array(np.asarray(values, dtype=np.float32),
                                     normalized=normalized, source_id=source_id)


def write_dataset(root: Path, images: dict, captions: dict | None = None,
                  masks: dict | None = None) -> Path:
    """Write images (+ optional masks) and a manifest; returns the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, image in images.items():
        write_raster(image, root / name)
        entry = {"image": name, "split": "test"}
        if captions and name in captions:
            entry["caption"] = captions[name]
        if masks and name in masks:
            mask_name = name.rsplit(".", 1)[0] + "_mask.png"
            write_mask(masks[name], root / mask_name)
            entry["mask"] = mask_name
        entries.append(entry)
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(entries, indent=2), encoding="utf-8")
    return manifest_path


def full_mask(height: int, width: int) -> SceneMask:
    return SceneMask.from_array(np.ones((height, width), dtype=np.int32))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
