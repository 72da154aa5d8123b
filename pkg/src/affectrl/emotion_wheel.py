"""Emotion-wheel taxonomy: flat clusters of canonical labels plus a one-hop synonym map.

Two labels are treated as semantically equivalent when they resolve to the
same cluster. Labels that resolve to no cluster are unmatched (``None``).
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping

from .errors import WheelParseError, WheelValidationError

_STRIP_CHARS = string.whitespace + string.punctuation
_WS = re.compile(r"\s+")

_TOP_KEYS = {"clusters", "synonyms"}
_CLUSTER_KEYS = {"id", "labels", "parent"}


def normalize_label(raw: str) -> str:
    """Lowercase, trim surrounding whitespace/punctuation and collapse inner whitespace.

    Synonyms are not resolved here. All-whitespace input gives ``""``.
    """
    text = _WS.sub(" ", raw.lower())
    return text.strip(_STRIP_CHARS)


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    name: str
    labels: tuple[str, ...]
    parent: str | None = None


@dataclass(frozen=True)
class EmotionWheel:
    clusters: tuple[Cluster, ...]
    synonyms: Mapping[str, str] = field(default_factory=dict)
    _index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "synonyms", dict(self.synonyms))
        _validate(self.clusters, self.synonyms)
        index = {label: c.cluster_id for c in self.clusters for label in c.labels}
        object.__setattr__(self, "_index", index)

    @property
    def canonical_labels(self) -> list[str]:
        """All canonical labels, ordered by cluster id then label."""
        return [label for c in self.clusters for label in c.labels]

    def cluster_of(self, label: str) -> int | None:
        return cluster_of(self, label)

    def __len__(self) -> int:
        return len(self.clusters)


def _validate(clusters: tuple[Cluster, ...], synonyms: Mapping[str, str]) -> None:
    seen: dict[str, int] = {}
    names = set()
    for expected_id, cluster in enumerate(clusters):
        if cluster.cluster_id != expected_id:
            raise WheelValidationError(
                f"cluster ids must be dense 0..n-1; got {cluster.cluster_id} at position {expected_id}"
            )
        if cluster.name in names:
            raise WheelValidationError(f"duplicate cluster id {cluster.name!r}", cluster.name)
        names.add(cluster.name)
        if not cluster.labels:
            raise WheelValidationError(f"cluster {cluster.name!r} is empty", cluster.name)
        for label in cluster.labels:
            if not label or label != normalize_label(label):
                raise WheelValidationError(f"label {label!r} is not normalized", label)
            if label in seen:
                raise WheelValidationError(
                    f"label {label!r} appears in more than one cluster", label
                )
            seen[label] = cluster.cluster_id
    for cluster in clusters:
        if cluster.parent is not None and cluster.parent not in names:
            raise WheelValidationError(
                f"cluster {cluster.name!r} has unknown parent {cluster.parent!r}", cluster.parent
            )
    for surface, target in synonyms.items():
        if not surface or surface != normalize_label(surface):
            raise WheelValidationError(f"synonym {surface!r} is not normalized", surface)
        if surface in seen:
            raise WheelValidationError(
                f"synonym {surface!r} shadows a canonical label", surface
            )
        if target not in seen:
            raise WheelValidationError(
                f"synonym {surface!r} points to unknown label {target!r}", target
            )


def cluster_of(wheel: EmotionWheel, label: str) -> int | None:
    """Cluster id of ``label`` (directly or through one synonym hop), else ``None``."""
    key = normalize_label(label)
    if not key:
        return None
    cid = wheel._index.get(key)
    if cid is None and key in wheel.synonyms:
        cid = wheel._index.get(wheel.synonyms[key])
    return cid


def load_wheel(document: str) -> EmotionWheel:
    """Parse a JSON taxonomy document into a validated :class:`EmotionWheel`."""
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise WheelParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise WheelParseError("top level must be an object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise WheelParseError(f"unknown top-level keys: {sorted(unknown)}")
    raw_clusters = data.get("clusters")
    if not isinstance(raw_clusters, list):
        raise WheelParseError("'clusters' must be a list")
    raw_synonyms = data.get("synonyms", {})
    if not isinstance(raw_synonyms, dict):
        raise WheelParseError("'synonyms' must be an object")

    clusters = []
    for i, entry in enumerate(raw_clusters):
        if not isinstance(entry, dict):
            raise WheelParseError(f"cluster #{i} must be an object")
        unknown = set(entry) - _CLUSTER_KEYS
        if unknown:
            raise WheelParseError(f"cluster #{i}: unknown keys {sorted(unknown)}")
        name = entry.get("id")
        labels = entry.get("labels")
        parent = entry.get("parent")
        if not isinstance(name, str) or not name:
            raise WheelParseError(f"cluster #{i}: 'id' must be a non-empty string")
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise WheelParseError(f"cluster {name!r}: 'labels' must be a list of strings")
        if parent is not None and not isinstance(parent, str):
            raise WheelParseError(f"cluster {name!r}: 'parent' must be null or a string")
        normalized = []
        for raw in labels:
            label = normalize_label(raw)
            if not label:
                raise WheelValidationError(f"cluster {name!r} has an empty label", raw)
            if label in normalized:
                raise WheelValidationError(
                    f"label {label!r} repeated in cluster {name!r}", label
                )
            normalized.append(label)
        clusters.append(Cluster(i, name, tuple(sorted(normalized)), parent))

    synonyms: dict[str, str] = {}
    for surface, target in raw_synonyms.items():
        if not isinstance(target, str):
            raise WheelParseError(f"synonym {surface!r}: target must be a string")
        key = normalize_label(surface)
        if key in synonyms:
            raise WheelValidationError(f"synonym {key!r} defined twice", key)
        synonyms[key] = normalize_label(target)
    return EmotionWheel(tuple(clusters), synonyms)


def dump_wheel(wheel: EmotionWheel) -> str:
    """Serialize to the taxonomy JSON format, canonically ordered."""
    doc = {
        "clusters": [
            {"id": c.name, "labels": sorted(c.labels), "parent": c.parent}
            for c in wheel.clusters
        ],
        "synonyms": {k: wheel.synonyms[k] for k in sorted(wheel.synonyms)},
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def read_wheel(path) -> EmotionWheel:
    with open(path, encoding="utf-8") as fh:
        return load_wheel(fh.read())


def default_wheel() -> EmotionWheel:
    """The bundled 8-cluster desk-scale wheel."""
    text = resources.files("affectrl.data").joinpath("default_wheel.json").read_text("utf-8")
    return load_wheel(text)
