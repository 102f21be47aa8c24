"""Flat tensor archives, per-layer weight-change analytics, LoRA merging.

The archive layout is the de-facto flat-checkpoint convention: u64 LE
header length | UTF-8 JSON header mapping tensor name -> {"dtype",
"shape", "data_offsets"} | raw payload. ``data_offsets`` are [begin,
end) byte positions relative to the payload start. Only F32 and F16
dtypes are accepted, and F16 is widened to F32 on read so later
subtractions do not lose precision. A ``__metadata__`` header entry
(string map) is tolerated and ignored.

MAWC is the per-layer mean of |w_after - w_before|; differences below
the resolution threshold (default 5e-4) are treated as exactly zero
before averaging. Aggregation into blocks averages layer MAWC values
unweighted by default, with a parameter-weighted alternative.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError

DEFAULT_MAWC_THRESHOLD = 5e-4

_DTYPES = {"F32": np.dtype("<f4"), "F16": np.dtype("<f2")}


@dataclass(frozen=True)
class TensorEntry:
    dtype: str
    shape: tuple[int, ...]
    offsets: tuple[int, int]


@dataclass(frozen=True)
class TensorArchive:
    """Parsed archive: tensors decode lazily from the shared payload."""

    entries: dict[str, TensorEntry]
    payload: bytes = field(repr=False)
    metadata: Optional[dict[str, str]] = None

    def names(self) -> list[str]:
        return sorted(self.entries)

    def tensor(self, name: str) -> np.ndarray:
        """Decode one tensor as float32 (F16 is widened)."""
        try:
            entry = self.entries[name]
        except KeyError:
            raise InputError("missing-tensor", f"archive has no tensor {name!r}")
        begin, end = entry.offsets
        raw = np.frombuffer(self.payload[begin:end], dtype=_DTYPES[entry.dtype])
        return raw.reshape(entry.shape).astype(np.float32)


def _reject_duplicates(pairs):
    seen = set()
    out = {}
    for key, value in pairs:
        if key in seen:
            raise InputError("duplicate-tensor", f"duplicate tensor name {key!r}")
        seen.add(key)
        out[key] = value
    return out


def parse_archive(path) -> TensorArchive:
    """Read and validate a flat tensor archive.

    Raises
    ------
    InputError
        Codes: ``missing-file``, ``malformed-header``,
        ``duplicate-tensor``, ``unsupported-dtype``,
        ``truncated-payload``, ``overlapping-ranges``,
        ``payload-size-mismatch``.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise InputError("missing-file", f"no such file: {path}")
    if len(raw) < 8:
        raise InputError("malformed-header", f"{path}: too short for a header length")
    (header_len,) = struct.unpack_from("<Q", raw, 0)
    if 8 + header_len > len(raw):
        raise InputError("malformed-header", f"{path}: header length exceeds file size")
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"),
                            object_pairs_hook=_reject_duplicates)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError("malformed-header", f"{path}: bad JSON header ({exc})")
    if not isinstance(header, dict):
        raise InputError("malformed-header", f"{path}: header must be a JSON object")
    payload = raw[8 + header_len:]
    metadata = header.pop("__metadata__", None)
    entries: dict[str, TensorEntry] = {}
    for name, desc in header.items():
        try:
            dtype = desc["dtype"]
            shape = tuple(int(s) for s in desc["shape"])
            begin, end = (int(x) for x in desc["data_offsets"])
        except (TypeError, KeyError, ValueError):
            raise InputError("malformed-header", f"{path}: bad entry for {name!r}")
        if dtype not in _DTYPES:
            raise InputError("unsupported-dtype", f"{path}: {name!r} has dtype {dtype!r}")
        if begin < 0 or end < begin:
            raise InputError("malformed-header", f"{path}: {name!r} has invalid offsets")
        if end > len(payload):
            raise InputError("truncated-payload",
                             f"{path}: {name!r} ends at {end} but payload has {len(payload)} bytes")
        expected = _DTYPES[dtype].itemsize * int(np.prod(shape, dtype=np.int64))
        if end - begin != expected:
            raise InputError("payload-size-mismatch",
                             f"{path}: {name!r} spans {end - begin} bytes, "
                             f"dtype x shape needs {expected}")
        entries[name] = TensorEntry(dtype=dtype, shape=shape, offsets=(begin, end))
    spans = sorted(e.offsets for e in entries.values())
    for (b0, e0), (b1, _) in zip(spans, spans[1:]):
        if b1 < e0:
            raise InputError("overlapping-ranges",
                             f"{path}: tensor byte ranges overlap at offset {b1}")
    return TensorArchive(entries=entries, payload=payload, metadata=metadata)


def write_archive(tensors: Mapping[str, np.ndarray], path,
                  metadata: Optional[dict[str, str]] = None) -> None:
    """Write arrays as a flat archive (float16 inputs stay F16, the rest F32)."""
    header: dict = {}
    chunks = []
    offset = 0
    if metadata is not None:
        header["__metadata__"] = dict(metadata)
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype == np.float16:
            dtype, data = "F16", np.ascontiguousarray(arr, dtype="<f2")
        else:
            dtype, data = "F32", np.ascontiguousarray(arr, dtype="<f4")
        blob = data.tobytes()
        header[name] = {"dtype": dtype, "shape": list(arr.shape),
                        "data_offsets": [offset, offset + len(blob)]}
        chunks.append(blob)
        offset += len(blob)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        Path(path).write_bytes(struct.pack("<Q", len(head)) + head + b"".join(chunks))
    except OSError as exc:
        raise InputError("unwritable-path", f"{path}: {exc}")


@dataclass(frozen=True)
class WeightDelta:
    layer_name: str
    mawc: float
    param_count: int
    changed_fraction: float


@dataclass(frozen=True)
class MawcResult:
    deltas: list[WeightDelta]
    only_before: list[str]
    only_after: list[str]


def mawc(before: TensorArchive, after: TensorArchive,
         threshold: float = DEFAULT_MAWC_THRESHOLD) -> MawcResult:
    """Per-layer mean absolute weight change between two checkpoints.

    Differences with |delta| below the threshold are zeroed before
    averaging; ``changed_fraction`` counts |delta| strictly above it.
    Names present on only one side are reported, not fatal. Deltas are
    ordered by layer name.
    """
    if threshold < 0:
        raise ConfigError("invalid-threshold", "threshold must be >= 0")
    shared = sorted(set(before.entries) & set(after.entries))
    deltas = []
    for name in shared:
        w0 = before.tensor(name)
        w1 = after.tensor(name)
        if w0.shape != w1.shape:
            raise InputError("shape-mismatch",
                             f"{name!r}: {w0.shape} vs {w1.shape}")
        diff = np.abs(w1.astype(np.float64) - w0.astype(np.float64))
        changed = int(np.count_nonzero(diff > threshold))
        diff[diff < threshold] = 0.0
        deltas.append(WeightDelta(layer_name=name, mawc=float(diff.mean()),
                                  param_count=diff.size,
                                  changed_fraction=changed / diff.size))
    return MawcResult(
        deltas=deltas,
        only_before=sorted(set(before.entries) - set(after.entries)),
        only_after=sorted(set(after.entries) - set(before.entries)),
    )


@dataclass(frozen=True)
class GroupRule:
    """Maps layer names to a (block, subblock) bucket; first match wins."""

    block: str
    subblock: str
    prefix: Optional[str] = None
    regex: Optional[str] = None

    def __post_init__(self):
        if (self.prefix is None) == (self.regex is None):
            raise ConfigError("invalid-rule", "exactly one of prefix/regex is required")

    def matches(self, name: str) -> bool:
        if self.prefix is not None:
            return name.startswith(self.prefix)
        return re.search(self.regex, name) is not None


def load_rules(path) -> list[GroupRule]:
    """Load grouping rules from JSON: array of {block, subblock, prefix|regex}."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("bad-rules-file", f"{path}: {exc}")
    if not isinstance(raw, list):
        raise ConfigError("bad-rules-file", f"{path}: expected a JSON array of rules")
    rules = []
    for i, obj in enumerate(raw):
        try:
            rules.append(GroupRule(block=str(obj["block"]), subblock=str(obj["subblock"]),
                                   prefix=obj.get("prefix"), regex=obj.get("regex")))
        except (TypeError, KeyError):
            raise ConfigError("bad-rules-file", f"{path}: rule {i} is malformed")
    return rules


@dataclass(frozen=True)
class BlockSummary:
    block: str
    subblock: str
    mawc: float
    n_layers: int
    param_count: int


def block_aggregate(deltas: Sequence[WeightDelta], rules: Sequence[GroupRule],
                    weighted: bool = False) -> list[BlockSummary]:
    """Aggregate layer MAWC into (block, subblock) buckets.

    The default is the unweighted mean across member layers; with
    ``weighted=True`` layers contribute proportionally to their
    parameter counts. Layers matching no rule land in
    ("ungrouped", "ungrouped"). Output is sorted by (block, subblock).
    """
    buckets: dict[tuple[str, str], list[WeightDelta]] = {}
    for delta in deltas:
        key = ("ungrouped", "ungrouped")
        for rule in rules:
            if rule.matches(delta.layer_name):
                key = (rule.block, rule.subblock)
                break
        buckets.setdefault(key, []).append(delta)
    out = []
    for (block, subblock) in sorted(buckets):
        members = buckets[(block, subblock)]
        params = sum(d.param_count for d in members)
        if weighted:
            value = sum(d.mawc * d.param_count for d in members) / params
        else:
            value = sum(d.mawc for d in members) / len(members)
        out.append(BlockSummary(block=block, subblock=subblock, mawc=float(value),
                                n_layers=len(members), param_count=params))
    return out


@dataclass(frozen=True)
class LoraSpec:
    """Low-rank update factors: delta = (alpha / r) * A @ B."""

    r: int
    alpha: float
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.r < 1:
            raise InputError("invalid-params", "rank must be >= 1")
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise InputError("dimension-mismatch", "A and B must be matrices")
        if self.A.shape[1] != self.r or self.B.shape[0] != self.r:
            raise InputError("dimension-mismatch",
                             f"A is {self.A.shape}, B is {self.B.shape}; "
                             f"inner dimensions must equal rank {self.r}")


def lora_delta(spec: LoraSpec) -> np.ndarray:
    """Materialize the update matrix; its numerical rank is at most r."""
    return (spec.alpha / spec.r) * (spec.A.astype(np.float64) @ spec.B.astype(np.float64))


def merge_lora(W: np.ndarray, spec: LoraSpec) -> np.ndarray:
    """Apply the low-rank update to a frozen base matrix."""
    W = np.asarray(W, dtype=np.float64)
    delta = lora_delta(spec)
    if W.shape != delta.shape:
        raise InputError("dimension-mismatch",
                         f"base is {W.shape} but the update is {delta.shape}")
    return W + delta


def merge_lora_archive(base: TensorArchive, lora: TensorArchive,
                       alpha: float, rank: int) -> dict[str, np.ndarray]:
    """Merge ``<name>.lora_A`` / ``<name>.lora_B`` factor pairs into base tensors.

    Tensors without factors are passed through unchanged; factor pairs
    must both be present and agree with ``rank``.
    """
    merged: dict[str, np.ndarray] = {}
    consumed = set()
    for name in base.names():
        a_name, b_name = f"{name}.lora_A", f"{name}.lora_B"
        W = base.tensor(name)
        if a_name in lora.entries or b_name in lora.entries:
            if not (a_name in lora.entries and b_name in lora.entries):
                raise InputError("missing-tensor",
                                 f"{name!r} has only one of its LoRA factors")
            spec = LoraSpec(r=rank, alpha=alpha,
                            A=lora.tensor(a_name), B=lora.tensor(b_name))
            merged[name] = merge_lora(W, spec).astype(np.float32)
            consumed.update((a_name, b_name))
        else:
            merged[name] = W
    unused = set(lora.entries) - consumed
    if unused:
        raise InputError("missing-tensor",
                         f"LoRA factors {sorted(unused)} match no base tensor")
    return merged
