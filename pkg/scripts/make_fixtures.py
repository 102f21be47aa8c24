#!/usr/bin/env python3
"""Regenerate the synthetic mini-dataset under tests/fixtures/mini.

Everything is seeded, so reruns reproduce the checked-in files. The
mini-dataset stands in for real evaluation inputs: 11 categories x 4
images (128 x 128) per side, masks, captions, dummy embeddings in the
same hash-seeded scheme the exporter uses, and a pair of tiny
checkpoints for the weight-change tools.

Usage: python3 scripts/make_fixtures.py
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from sarval.alignment import EmbeddingSet, write_embeddings
from sarval.checkpoint import write_archive
from sarval.labeling import DEFAULT_LABELS
from sarval.manifest import Manifest, ManifestEntry, save_manifest
from sarval.preprocess import compute_norm_params, normalize_clip
from sarval.raster import AmplitudeImage, SceneMask, write_mask, write_raster

ROOT = Path(__file__).resolve().parents[1]
MINI = ROOT / "tests" / "fixtures" / "mini"

SIZE = 128
PER_LABEL = 4
EMB_DIM = 32

CAPTIONS = {
    "forest": "A SAR image of a dense forest.",
    "city": "A SAR image of a sprawling city center.",
    "field": "A SAR image of an open field with crops.",
    "port": "A SAR image of a port with moored ships.",
    "airport": "A SAR image of an airport with a long runway.",
    "mountains": "A SAR image of rugged mountains.",
    "structures": "A SAR image of scattered structures.",
    "seacoast": "A SAR image of a rocky seacoast.",
    "beach": "A SAR image of a wide sandy beach.",
    "industrial": "A SAR image of an industrial complex.",
    "residential": "A SAR image of a quiet residential neighborhood.",
}

# Rough per-category speckle scale + structure mix, just to make the
# distributions differ between labels.
SCALES = {label: 0.6 + 0.08 * i for i, label in enumerate(DEFAULT_LABELS)}


def synth_amplitude(rng: np.random.Generator, label: str, jitter: float) -> AmplitudeImage:
    scale = SCALES[label] * (1.0 + jitter)
    speckle = scale * np.sqrt(rng.exponential(1.0, size=(SIZE, SIZE)))
    yy, xx = np.mgrid[0:SIZE, 0:SIZE] / SIZE
    waves = 1 + DEFAULT_LABELS.index(label) % 3
    structure = 1.0 + 0.5 * np.sin(2 * np.pi * (xx + yy) * waves)
    bright = rng.random((SIZE, SIZE)) < 0.002
    raw = speckle * structure + bright * scale * 12.0
    image = AmplitudeImage.from_array(raw)
    normalized, _ = normalize_clip(image, compute_norm_params(image))
    return normalized


def make_mask() -> SceneMask:
    ids = np.ones((SIZE, SIZE), dtype=np.int32)
    ids[:20, :20] = 2  # secondary region, exercises largest-region selection
    return SceneMask.from_array(ids)


def dummy_row(rng_seed: bytes, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(rng_seed).digest()[:8], "little")
    row = np.random.default_rng(seed).standard_normal(dim)
    return (row / np.linalg.norm(row)).astype(np.float32)


def dummy_embeddings(ids: list[str], texts: list[str] | None, kind: str) -> EmbeddingSet:
    sources = texts if texts is not None else ids
    rows = np.stack([dummy_row(f"{kind}:{src}".encode("utf-8"), EMB_DIM)
                     for src in sources])
    return EmbeddingSet(ids=tuple(ids), vectors=rows, kind=kind)


def build_side(side: str, seed: int) -> None:
    out = MINI / side
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    mask = make_mask()
    write_mask(mask, out / "mask.png")
    entries = []
    for label in DEFAULT_LABELS:
        for i in range(PER_LABEL):
            name = f"{label}_{i}.ras"
            jitter = 0.05 * float(rng.standard_normal()) + (0.1 if side == "gen" else 0.0)
            write_raster(synth_amplitude(rng, label, jitter), out / name)
            caption = f"{CAPTIONS[label][:-1]}, scene {i}."
            entries.append(ManifestEntry(image=name, mask="mask.png",
                                         caption=caption, split="test"))
    save_manifest(Manifest(entries=tuple(entries), root=out), out / "manifest.json")

    ids = [e.image for e in entries]
    texts = [e.caption for e in entries]
    emb_dir = MINI / "emb"
    emb_dir.mkdir(parents=True, exist_ok=True)
    write_embeddings(dummy_embeddings(ids, None, "image"), emb_dir / f"{side}_img.emb")
    write_embeddings(dummy_embeddings(ids, texts, "text"), emb_dir / f"{side}_txt.emb")


def build_checkpoints() -> None:
    out = MINI / "ckpt"
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(7)
    before = {
        "down.res1.conv.weight": rng.standard_normal((8, 8)).astype(np.float32),
        "down.attn0.q.weight": rng.standard_normal((8, 8)).astype(np.float32),
        "up.res2.conv.weight": rng.standard_normal((4, 4)).astype(np.float32),
        "mid.norm.scale": rng.standard_normal(16).astype(np.float16),
    }
    after = {
        name: (w.astype(np.float32) + rng.normal(0, 2e-3, w.shape)).astype(w.dtype)
        for name, w in before.items()
    }
    write_archive(before, out / "before.ckpt")
    write_archive(after, out / "after.ckpt")
    (out / "groups.json").write_text(json.dumps([
        {"prefix": "down.res1", "block": "down", "subblock": "res1"},
        {"regex": r"attn0", "block": "down", "subblock": "attn0"},
        {"prefix": "up.", "block": "up", "subblock": "res2"},
    ], indent=2) + "\n", encoding="utf-8")


def build_config() -> None:
    config = {
        "seed": 42,
        "real": {
            "manifest": "real/manifest.json",
            "image_embeddings": "emb/real_img.emb",
            "text_embeddings": "emb/real_txt.emb",
        },
        "models": {
            "model-a": {
                "manifest": "gen/manifest.json",
                "image_embeddings": "emb/gen_img.emb",
                "text_embeddings": "emb/gen_txt.emb",
            }
        },
        "metrics": ["kl", "texture", "alignment"],
        "bins": 64,
        "batch_size": 16,
        "levels": 32,
        "distances": [1, 2, 4],
        "angles": [0, 45, 90, 135],
        "patch": 64,
        "patch_stride": 32,
        "per_label_target": 30,
    }
    (MINI / "eval.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")


def build_golden() -> None:
    # Frozen end-to-end output of `sarval report` on the mini dataset; the
    # regression test compares fresh runs byte-for-byte against it.
    from sarval.report import emit_json, load_config, run_eval
    report = run_eval(load_config(MINI / "eval.json"))
    emit_json(report, MINI / "golden_report.json")


def main() -> None:
    MINI.mkdir(parents=True, exist_ok=True)
    build_side("real", seed=101)
    build_side("gen", seed=202)
    build_checkpoints()
    build_config()
    build_golden()
    print(f"fixtures written under {MINI}")


if __name__ == "__main__":
    main()
