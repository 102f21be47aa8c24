"""Embedding-space prompt/image alignment metrics.

Embeddings arrive as EMB1 files (magic ``b"EMB1"`` | u32 LE header
length | UTF-8 JSON header with dim/count/ids/kind | count*dim float32
LE rows). Rows are defensively L2-normalized before any cosine math, so
files that were not normalized at export time still behave.

Similarity matrices are plain (n, n) float arrays: entry (i, j) is the
cosine between image i and text j, with the matched pair on the
diagonal. Rank statistics follow the retrieval convention: items are
scored in consecutive batches, and within a batch the rank of the true
caption counts only strictly greater scores, so ties never worsen it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InputError

EMB1_MAGIC = b"EMB1"

DEFAULT_BATCH_SIZE = 16


@dataclass(frozen=True)
class EmbeddingSet:
    """Named embedding rows: ids[i] identifies vectors[i]."""

    ids: tuple[str, ...]
    vectors: np.ndarray = field(repr=False)
    kind: str = "image"

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise InputError("dimension-mismatch",
                             f"vectors must be 2-D, got ndim={self.vectors.ndim}")
        if len(self.ids) != self.vectors.shape[0]:
            raise InputError("dimension-mismatch",
                             f"{len(self.ids)} ids for {self.vectors.shape[0]} rows")
        if len(set(self.ids)) != len(self.ids):
            raise InputError("duplicate-ids", "embedding ids must be unique")
        if not np.all(np.isfinite(self.vectors)):
            raise InputError("non-finite-values", "embedding rows must be finite")
        if self.count and np.any(np.linalg.norm(self.vectors, axis=1) == 0):
            raise InputError("zero-norm-row", "embedding rows must have nonzero norm")

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def unit_rows(self) -> np.ndarray:
        """Rows scaled to unit L2 norm, in float64."""
        v = self.vectors.astype(np.float64)
        return v / np.linalg.norm(v, axis=1, keepdims=True)


def read_embeddings(path) -> EmbeddingSet:
    """Parse an EMB1 file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise InputError("missing-file", f"no such file: {path}")
    if len(raw) < 8 or raw[:4] != EMB1_MAGIC:
        raise InputError("malformed-header", f"{path}: not an EMB1 file")
    (header_len,) = struct.unpack_from("<I", raw, 4)
    if 8 + header_len > len(raw):
        raise InputError("malformed-header", f"{path}: header length exceeds file size")
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
        dim = int(header["dim"])
        count = int(header["count"])
        ids = tuple(str(x) for x in header["ids"])
        kind = str(header.get("kind", "image"))
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise InputError("malformed-header", f"{path}: bad EMB1 header ({exc})")
    if len(ids) != count:
        raise InputError("malformed-header", f"{path}: {len(ids)} ids for count={count}")
    payload = raw[8 + header_len:]
    if len(payload) != 4 * dim * count:
        raise InputError("payload-size-mismatch",
                         f"{path}: expected {4 * dim * count} payload bytes, got {len(payload)}")
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return EmbeddingSet(ids=ids, vectors=np.ascontiguousarray(vectors), kind=kind)


def write_embeddings(embeddings: EmbeddingSet, path) -> None:
    """Write an EMB1 file (float32 rows, JSON header)."""
    header = json.dumps({
        "dim": embeddings.dim,
        "count": embeddings.count,
        "ids": list(embeddings.ids),
        "kind": embeddings.kind,
    }, sort_keys=True).encode("utf-8")
    body = np.ascontiguousarray(embeddings.vectors, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(EMB1_MAGIC + struct.pack("<I", len(header)) + header + body)
    except OSError as exc:
        raise InputError("unwritable-path", f"{path}: {exc}")


def cosine_matrix(img: EmbeddingSet, txt: EmbeddingSet) -> np.ndarray:
    """Pairwise cosine similarities S[i, j] = cos(img_i, txt_j)."""
    if img.count != txt.count:
        raise InputError("dimension-mismatch",
                         f"image/text counts differ: {img.count} vs {txt.count}")
    if img.dim != txt.dim:
        raise InputError("dimension-mismatch",
                         f"image/text dims differ: {img.dim} vs {txt.dim}")
    return img.unit_rows() @ txt.unit_rows().T


def softmax_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    m = np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise InputError("non-finite-values", "softmax input must be finite")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class RankStats:
    """Summary of true-caption ranks pooled over all batches."""

    mean: float
    median: float
    variance: float
    variance_about_median: float
    n_items: int
    batch_size: int


def batch_ranks(matrix: np.ndarray, batch_size: int = DEFAULT_BATCH_SIZE) -> np.ndarray:
    """Per-item rank of the matched caption within its batch.

    Items are split into consecutive batches of ``batch_size`` matrix
    rows; the rank of item i is 1 plus the number of other captions in
    the batch scoring strictly higher than the matched one. A final
    partial batch is kept only when it has at least 2 items.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError("dimension-mismatch", f"similarity matrix must be square, got {m.shape}")
    if batch_size < 2:
        raise InputError("invalid-params", "batch_size must be >= 2")
    n = m.shape[0]
    ranks = []
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        if stop - start < 2:
            break
        block = m[start:stop, start:stop]
        diag = np.diag(block)
        ranks.append(1 + (block > diag[:, None]).sum(axis=1))
    if not ranks:
        raise InputError("too-few-items", "rank statistics need at least 2 items")
    return np.concatenate(ranks)


def rank_stats(matrix: np.ndarray, batch_size: int = DEFAULT_BATCH_SIZE) -> RankStats:
    """Mean/median/variance of matched-caption ranks over consecutive batches.

    ``variance`` is about the mean; ``variance_about_median`` is the
    mean squared deviation from the median.
    """
    ranks = batch_ranks(matrix, batch_size).astype(np.float64)
    median = float(np.median(ranks))
    return RankStats(
        mean=float(ranks.mean()),
        median=median,
        variance=float(ranks.var()),
        variance_about_median=float(np.mean((ranks - median) ** 2)),
        n_items=int(ranks.size),
        batch_size=batch_size,
    )


@dataclass(frozen=True)
class LabelCosine:
    label: str
    mean: float
    n_pairs: int

    @property
    def absent(self) -> bool:
        return self.n_pairs == 0


def per_label_cosine(img: EmbeddingSet, txt: EmbeddingSet,
                     pair_labels: Sequence[Optional[str]],
                     labels: Sequence[str]) -> list[LabelCosine]:
    """Mean matched-pair cosine per label.

    ``pair_labels[i]`` assigns pair i to a category (None drops it from
    the per-label view). Labels with no pairs are flagged absent.
    """
    if len(pair_labels) != img.count:
        raise InputError("dimension-mismatch",
                         f"{len(pair_labels)} labels for {img.count} pairs")
    diag = diagonal_cosine(img, txt)
    out = []
    for label in labels:
        idx = [i for i, lab in enumerate(pair_labels) if lab == label]
        if idx:
            out.append(LabelCosine(label=label, mean=float(diag[idx].mean()), n_pairs=len(idx)))
        else:
            out.append(LabelCosine(label=label, mean=float("nan"), n_pairs=0))
    return out


def diagonal_cosine(img: EmbeddingSet, txt: EmbeddingSet) -> np.ndarray:
    """Cosine of each matched pair (the similarity-matrix diagonal)."""
    if img.count != txt.count or img.dim != txt.dim:
        raise InputError("dimension-mismatch", "image/text sets must pair one-to-one")
    return np.einsum("ij,ij->i", img.unit_rows(), txt.unit_rows())
