"""Emotion-wheel set-matching metric for open-vocabulary label predictions.

A predicted label counts as correct when its wheel cluster is among the
ground-truth clusters, and a ground-truth label counts as recovered when its
cluster is among the predicted clusters. The score is the mean of the
resulting precision and recall.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .emotion_wheel import EmotionWheel, cluster_of, normalize_label
from .errors import ContractViolation, DataError


@dataclass(frozen=True)
class LabelSet:
    """Normalized, deduplicated, order-preserving collection of label texts."""

    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", _normalize_unique(self.labels))

    @classmethod
    def of(cls, *labels: str) -> "LabelSet":
        return cls(labels)

    def __iter__(self) -> Iterator[str]:
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __bool__(self) -> bool:
        return bool(self.labels)


def _normalize_unique(raw: Iterable[str]) -> tuple[str, ...]:
    out: list[str] = []
    for item in raw:
        label = normalize_label(item)
        if label and label not in out:
            out.append(label)
    return tuple(out)


@dataclass(frozen=True)
class MetricReport:
    score: float
    precision: float
    recall: float
    matched_pred: int
    matched_gt: int
    unmatched_labels: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def ew_score(pred: LabelSet, gt: LabelSet, wheel: EmotionWheel) -> MetricReport:
    """Score ``pred`` against ``gt`` through wheel clusters.

    An empty prediction scores 0. ``unmatched_labels`` lists predicted labels
    that hit no ground-truth cluster, then ground-truth labels that no
    prediction covered.
    """
    if not gt:
        raise ContractViolation("ground-truth label set must be non-empty")
    pred_ids = [cluster_of(wheel, label) for label in pred]
    gt_ids = [cluster_of(wheel, label) for label in gt]
    gt_clusters = {c for c in gt_ids if c is not None}
    pred_clusters = {c for c in pred_ids if c is not None}

    pred_hit = [c is not None and c in gt_clusters for c in pred_ids]
    gt_hit = [c is not None and c in pred_clusters for c in gt_ids]
    matched_pred = sum(pred_hit)
    matched_gt = sum(gt_hit)

    precision = matched_pred / len(pred) if len(pred) else 0.0
    recall = matched_gt / len(gt)
    unmatched = [label for label, hit in zip(pred, pred_hit) if not hit]
    unmatched += [label for label, hit in zip(gt, gt_hit) if not hit]
    return MetricReport(
        score=(precision + recall) / 2,
        precision=precision,
        recall=recall,
        matched_pred=matched_pred,
        matched_gt=matched_gt,
        unmatched_labels=unmatched,
    )


@dataclass
class BatchReport:
    aggregate: MetricReport
    per_sample: list[tuple[str, MetricReport]]
    pooled_precision: float
    pooled_recall: float

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate.to_dict(),
            "pooled": {"precision": self.pooled_precision, "recall": self.pooled_recall},
            "per_sample": [{"id": sid, **rep.to_dict()} for sid, rep in self.per_sample],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def read_label_lines(path: str | Path) -> list[tuple[int, str, LabelSet]]:
    """Parse a ``{"id", "labels"}`` JSON Lines file into ``(line_no, id, labels)`` rows."""
    rows = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: malformed JSON ({exc.msg})", line=line_no) from exc
            sid = obj.get("id") if isinstance(obj, dict) else None
            if not isinstance(sid, str):
                raise DataError(f"{path}: missing string 'id'", line=line_no)
            labels = obj.get("labels")
            if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
                raise DataError(f"{path}: 'labels' must be a list of strings", line_no, sid)
            if sid in seen:
                raise DataError(f"{path}: duplicate id", line_no, sid)
            seen.add(sid)
            rows.append((line_no, sid, LabelSet(labels)))
    return rows


def evaluate_rows(
    predictions: list[tuple[int, str, LabelSet]],
    references: list[tuple[int, str, LabelSet]],
    wheel: EmotionWheel,
    workers: int = 1,
) -> BatchReport:
    pred_by_id = {sid: (line, labels) for line, sid, labels in predictions}
    ref_ids = {sid for _, sid, _ in references}
    for line, sid, labels in references:
        if sid not in pred_by_id:
            raise DataError("predictions missing sample present in references", line, sid)
        if not labels:
            raise DataError("reference has no labels", line, sid)
    for line, sid, _ in predictions:
        if sid not in ref_ids:
            raise DataError("prediction has no matching reference", line, sid)
    for (pline, pid, _), (_, rid, _) in zip(predictions, references):
        if pid != rid:
            raise DataError(f"id mismatch: reference has {rid!r}", pline, pid)

    ordered = sorted(references, key=lambda row: row[1])
    jobs = [(pred_by_id[sid][1], gt) for _, sid, gt in ordered]

    def run(job: tuple[LabelSet, LabelSet]) -> MetricReport:
        return ew_score(job[0], job[1], wheel)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run, jobs))
    else:
        reports = [run(job) for job in jobs]

    n = len(reports)
    if n == 0:
        raise DataError("no samples to evaluate")
    precision = sum(r.precision for r in reports) / n
    recall = sum(r.recall for r in reports) / n
    n_pred = sum(len(p) for p, _ in jobs)
    n_gt = sum(len(g) for _, g in jobs)
    aggregate = MetricReport(
        score=sum(r.score for r in reports) / n,
        precision=precision,
        recall=recall,
        matched_pred=sum(r.matched_pred for r in reports),
        matched_gt=sum(r.matched_gt for r in reports),
        unmatched_labels=sorted({lab for r in reports for lab in r.unmatched_labels}),
    )
    return BatchReport(
        aggregate=aggregate,
        per_sample=[(sid, rep) for (_, sid, _), rep in zip(ordered, reports)],
        pooled_precision=aggregate.matched_pred / n_pred if n_pred else 0.0,
        pooled_recall=aggregate.matched_gt / n_gt,
    )


def batch_evaluate(
    predictions: str | Path,
    references: str | Path,
    wheel: EmotionWheel,
    workers: int = 1,
) -> BatchReport:
    """Score a predictions JSONL file against a references JSONL file.

    The aggregate score is the unweighted mean of per-sample scores; pooled
    (corpus-level) precision and recall are reported alongside.
    """
    return evaluate_rows(read_label_lines(predictions), read_label_lines(references), wheel, workers)
