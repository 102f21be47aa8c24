"""Writers for the two wire formats the evaluation toolkit reads.

EMB1: magic b"EMB1" | u32 LE header length | UTF-8 JSON header
{"dim", "count", "ids", "kind"} | count*dim float32 LE rows.

Tensor archive: u64 LE header length | UTF-8 JSON header mapping tensor
name -> {"dtype": "F32"|"F16", "shape": [...], "data_offsets": [begin,
end]} | raw payload (offsets relative to the payload start).

Writes are atomic: content goes to a temp file in the target directory
and is renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

EMB1_MAGIC = b"EMB1"


def _atomic_write(path, blob: bytes) -> None:
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_emb1(ids: Sequence[str], vectors: np.ndarray, kind: str, path) -> None:
    """Write L2-normalized float32 rows with their ids."""
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or vectors.shape[0] != len(ids):
        raise ValueError(f"{len(ids)} ids for vector block of shape {vectors.shape}")
    header = json.dumps({
        "dim": int(vectors.shape[1]),
        "count": int(vectors.shape[0]),
        "ids": list(ids),
        "kind": kind,
    }, sort_keys=True).encode("utf-8")
    _atomic_write(path, EMB1_MAGIC + struct.pack("<I", len(header)) + header
                  + vectors.tobytes())


def write_tensor_archive(tensors: Mapping[str, np.ndarray], path,
                         metadata: Mapping[str, str] | None = None) -> None:
    """Flat tensor archive; float16 arrays stay F16, everything else is F32."""
    header: dict = {}
    if metadata is not None:
        header["__metadata__"] = dict(metadata)
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype == np.float16:
            dtype, data = "F16", np.ascontiguousarray(arr, dtype="<f2")
        elif arr.dtype in (np.float32, np.float64):
            dtype, data = "F32", np.ascontiguousarray(arr, dtype="<f4")
        else:
            raise ValueError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        blob = data.tobytes()
        header[name] = {"dtype": dtype, "shape": list(arr.shape),
                        "data_offsets": [offset, offset + len(blob)]}
        chunks.append(blob)
        offset += len(blob)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    _atomic_write(path, struct.pack("<Q", len(head)) + head + b"".join(chunks))
