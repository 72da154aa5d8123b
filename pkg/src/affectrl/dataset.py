"""Training samples and the bundled synthetic emotion task."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError
from .ov_metric import LabelSet


@dataclass(frozen=True)
class Sample:
    id: str
    context: int
    query: str
    gt_labels: LabelSet

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "context": self.context,
            "query": self.query,
            "labels": list(self.gt_labels),
        }


DEMO_QUERY = "What emotions does the person in this clip express?"

# One ground-truth label set per context; the last one spans two clusters.
DEMO_LABELS = (
    ("happy", "cheerful"),
    ("sad", "lonely"),
    ("angry",),
    ("surprised", "anxious"),
)


def demo_samples() -> list[Sample]:
    return [
        Sample(f"clip{c:02d}", c, DEMO_QUERY, LabelSet(labels))
        for c, labels in enumerate(DEMO_LABELS)
    ]


def validate_samples(samples: list[Sample]) -> None:
    seen = set()
    for i, s in enumerate(samples, start=1):
        if s.id in seen:
            raise DataError("duplicate sample id", i, s.id)
        seen.add(s.id)
        if not s.gt_labels:
            raise DataError("sample has no ground-truth labels", i, s.id)
        if s.context < 0:
            raise DataError("context index must be >= 0", i, s.id)


def read_samples(path: str | Path) -> list[Sample]:
    """Read ``{"id", "context", "query", "labels"}`` JSON Lines."""
    samples = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: malformed JSON ({exc.msg})", line=line_no) from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}: expected an object", line=line_no)
            sid = obj.get("id")
            if not isinstance(sid, str):
                raise DataError(f"{path}: missing string 'id'", line=line_no)
            context = obj.get("context")
            labels = obj.get("labels")
            if not isinstance(context, int) or isinstance(context, bool):
                raise DataError(f"{path}: 'context' must be an integer", line_no, sid)
            if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
                raise DataError(f"{path}: 'labels' must be a list of strings", line_no, sid)
            if sid in seen:
                raise DataError(f"{path}: duplicate sample id", line_no, sid)
            if context < 0:
                raise DataError(f"{path}: 'context' must be >= 0", line_no, sid)
            gt = LabelSet(labels)
            if not gt:
                raise DataError(f"{path}: sample has no ground-truth labels", line_no, sid)
            seen.add(sid)
            samples.append(Sample(sid, context, str(obj.get("query", "")), gt))
    if not samples:
        raise DataError(f"{path}: dataset is empty")
    return samples


def write_samples(samples: list[Sample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")
