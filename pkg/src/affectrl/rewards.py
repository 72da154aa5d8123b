"""Format/accuracy rewards over ``<think>...</think><answer>...</answer>`` outputs."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from .emotion_wheel import EmotionWheel
from .errors import ContractViolation
from .ov_metric import LabelSet, ew_score

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
TAGS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)

DEFAULT_BETA_FORMAT = 0.5

_TEMPLATE = re.compile(
    r"<think>(?P<think>.*)</think>\s*<answer>(?P<answer>.*)</answer>", re.DOTALL
)
_ANSWER_SPLIT = re.compile(r",|\band\b", re.IGNORECASE)


@dataclass(frozen=True)
class StructuredOutput:
    raw: str
    think: str | None
    answer: str | None
    well_formed: bool

    @property
    def format_reward(self) -> int:
        return 1 if self.well_formed else 0


@dataclass(frozen=True)
class RewardBreakdown:
    format: int
    accuracy: float
    total: float
    beta_format: float


def _has_tag(text: str) -> bool:
    return any(tag in text for tag in TAGS)


def check_format(raw: str) -> StructuredOutput:
    """Parse ``raw`` against the strict think/answer template.

    Exactly one think block followed by one answer block, optionally separated
    by a single whitespace run; nothing before, after, or nested.
    """
    m = _TEMPLATE.fullmatch(raw)
    if m is None or _has_tag(m["think"]) or _has_tag(m["answer"]):
        return StructuredOutput(raw, None, None, False)
    return StructuredOutput(raw, m["think"], m["answer"], True)


def split_answer(answer: str) -> list[str]:
    """Split answer text on commas and the standalone word "and"."""
    return _ANSWER_SPLIT.split(answer)


def extract_answer(output: StructuredOutput) -> LabelSet:
    if not output.well_formed:
        return LabelSet()
    return LabelSet(split_answer(output.answer))


def format_reward(raw: str) -> int:
    return check_format(raw).format_reward


def accuracy_reward(raw: str, gt: LabelSet, wheel: EmotionWheel) -> float:
    return ew_score(extract_answer(check_format(raw)), gt, wheel).score


def combined_reward(
    raw: str,
    gt: LabelSet,
    wheel: EmotionWheel,
    beta_format: float = DEFAULT_BETA_FORMAT,
) -> RewardBreakdown:
    """``accuracy + beta_format * format`` for one model output."""
    if beta_format < 0:
        raise ContractViolation(f"beta_format must be >= 0, got {beta_format}")
    parsed = check_format(raw)
    accuracy = ew_score(extract_answer(parsed), gt, wheel).score
    fmt = parsed.format_reward
    return RewardBreakdown(
        format=fmt,
        accuracy=accuracy,
        total=accuracy + beta_format * fmt,
        beta_format=beta_format,
    )


def format_cold_start_target(description: str, labels: LabelSet | Iterable[str]) -> str:
    """Render a description and its labels as a template-conforming target string."""
    if not isinstance(labels, LabelSet):
        labels = LabelSet(tuple(labels))
    if not labels:
        raise ContractViolation("cold-start target needs at least one label")
    if _has_tag(description):
        raise ContractViolation("description must not contain think/answer tags")
    return f"{THINK_OPEN}{description}{THINK_CLOSE}{ANSWER_OPEN}{', '.join(labels)}{ANSWER_CLOSE}"
