"""Scene-category labels and keyword-based caption labeling.

Captions are mapped to categories by whole-word, case-insensitive
keyword matching on Unicode word boundaries. The shipped keyword
dictionary is a reasonable default and is meant to be overridden with a
corpus-specific one (JSON object: label -> list of keywords).
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .errors import ConfigError

# The 11 default scene categories.
DEFAULT_LABELS: tuple[str, ...] = (
    "forest", "city", "field", "port", "airport", "mountains",
    "structures", "seacoast", "beach", "industrial", "residential",
)

# Tie-break order for picking a single evaluation label: rarest classes
# first so they are not swallowed by ubiquitous ones.
DEFAULT_PRIORITY: tuple[str, ...] = (
    "airport", "port", "residential", "city", "structures", "seacoast",
    "field", "beach", "industrial", "mountains", "forest",
)

DEFAULT_KEYWORDS: dict[str, tuple[str, ...]] = {
    "forest": ("forest", "forests", "forested", "woodland", "woods"),
    "city": ("city", "urban", "downtown", "town"),
    "field": ("field", "fields", "farmland", "agricultural", "crops"),
    "port": ("port", "harbor", "harbour", "dock", "docks", "marina"),
    "airport": ("airport", "runway", "runways", "airfield"),
    "mountains": ("mountain", "mountains", "mountainous", "hills", "ridge"),
    "structures": ("structure", "structures", "tower", "bridge"),
    "seacoast": ("seacoast", "coast", "coastline", "coastal", "shore", "shoreline"),
    "beach": ("beach", "beaches", "sand", "dunes"),
    "industrial": ("industrial", "factory", "factories", "warehouse", "warehouses", "plant"),
    "residential": ("residential", "houses", "housing", "neighborhood", "neighbourhood", "suburb"),
}


def validate_dictionary(dictionary: Mapping[str, Iterable[str]],
                        labels: Sequence[str] = DEFAULT_LABELS) -> None:
    """Reject dictionaries that reference labels outside the configured set."""
    known = set(labels)
    for label, keywords in dictionary.items():
        if label not in known:
            raise ConfigError("unknown-label",
                              f"keyword dictionary references {label!r}, not in the label set")
        kws = list(keywords)
        if not kws:
            raise ConfigError("empty-keywords", f"label {label!r} has no keywords")


def label_caption(caption: str,
                  dictionary: Mapping[str, Iterable[str]] = DEFAULT_KEYWORDS,
                  labels: Sequence[str] = DEFAULT_LABELS) -> set[str]:
    """Return every label with a whole-word keyword match in the caption.

    Matching is case-insensitive on Unicode word boundaries; adding
    keywords to the dictionary can only grow the result. The empty set
    is a valid outcome.
    """
    validate_dictionary(dictionary, labels)
    found: set[str] = set()
    for label, keywords in dictionary.items():
        for kw in keywords:
            if re.search(rf"\b{re.escape(kw)}\b", caption, flags=re.IGNORECASE):
                found.add(label)
                break
    return found


def primary_label(found: set[str],
                  priority: Sequence[str] = DEFAULT_PRIORITY) -> Optional[str]:
    """Pick the single evaluation label: the matched label earliest in priority order."""
    if len(set(priority)) != len(priority):
        raise ConfigError("invalid-priority", "priority list contains duplicates")
    unknown = found - set(priority)
    if unknown:
        raise ConfigError("invalid-priority",
                          f"labels {sorted(unknown)} missing from the priority list")
    for label in priority:
        if label in found:
            return label
    return None


def load_keywords(path) -> dict[str, tuple[str, ...]]:
    """Load a keyword dictionary from JSON (label -> array of strings)."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("bad-keywords-file", f"{path}: {exc}")
    if not isinstance(obj, dict):
        raise ConfigError("bad-keywords-file", f"{path}: expected a JSON object")
    return {str(label): tuple(str(k) for k in kws) for label, kws in obj.items()}
