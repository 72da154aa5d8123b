"""Context-conditioned, position-wise softmax policy over a small token vocabulary.

Each (context, position) pair owns an independent row of logits, so

    log pi(o | c) = sum_t log softmax(logits[c, t])[o_t]

and the gradient of a sequence log-probability is ``onehot(o_t) - probs`` on
visited rows and zero elsewhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .emotion_wheel import EmotionWheel
from .errors import ContractViolation, DataError
from .rewards import ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN, format_cold_start_target

EOS = "<eos>"
SEP = ","
STRUCTURAL = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE, EOS)
DEFAULT_FILLERS = ("hmm", "voice", "face")
DEFAULT_MAX_LEN = 10
CHECKPOINT_VERSION = 1
EOS_ID = STRUCTURAL.index(EOS)


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(set(self.tokens)) != len(self.tokens):
            raise ContractViolation("vocabulary tokens must be unique")
        if EOS not in self.tokens:
            raise ContractViolation(f"vocabulary must contain {EOS}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def from_wheel(cls, wheel: EmotionWheel, fillers: Sequence[str] = DEFAULT_FILLERS) -> "Vocab":
        return cls(STRUCTURAL + (SEP,) + tuple(fillers) + tuple(wheel.canonical_labels))

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self._index[token]

    @property
    def eos_id(self) -> int:
        return self._index[EOS]

    def decode(self, ids: Sequence[int]) -> str:
        """Concatenate token texts; ``<eos>`` is dropped and the separator renders as ", "."""
        parts = []
        for i in ids:
            tok = self.tokens[i]
            if tok == EOS:
                break
            parts.append(", " if tok == SEP else tok)
        return "".join(parts)

    def encode(self, text: str) -> list[int]:
        """Greedy longest-match tokenization; whitespace between tokens is skipped."""
        by_len = sorted(self.tokens, key=len, reverse=True)
        ids = []
        pos = 0
        while pos < len(text):
            if text[pos].isspace():
                pos += 1
                continue
            for tok in by_len:
                if tok != EOS and text.startswith(tok, pos):
                    ids.append(self._index[tok])
                    pos += len(tok)
                    break
            else:
                raise DataError(f"cannot tokenize text at offset {pos}: {text[pos:pos + 20]!r}")
        return ids


@dataclass
class PolicyParams:
    """Logit tensor of shape ``[num_contexts, max_positions, V]``."""

    logits: np.ndarray
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 3 or self.logits.shape[0] < 1:
            raise ContractViolation(f"logits must be [contexts, positions, V], got {self.logits.shape}")
        if not 1 <= self.max_len <= self.logits.shape[1]:
            raise ContractViolation(
                f"max_len={self.max_len} must be in [1, {self.logits.shape[1]}]"
            )
        if not np.all(np.isfinite(self.logits)):
            raise ContractViolation("logits must be finite")

    @classmethod
    def zeros(cls, num_contexts: int, vocab_size: int, max_len: int = DEFAULT_MAX_LEN) -> "PolicyParams":
        return cls(np.zeros((num_contexts, max_len, vocab_size)), max_len)

    @property
    def num_contexts(self) -> int:
        return self.logits.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[2]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.logits.copy(), self.max_len)


@dataclass(frozen=True)
class TokenSeq:
    context: int
    tokens: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tokens)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_context(params: PolicyParams, context: int) -> None:
    if not 0 <= context < params.num_contexts:
        raise IndexError(f"context {context} out of range [0, {params.num_contexts})")


def token_distribution(params: PolicyParams, context: int, position: int) -> np.ndarray:
    _check_context(params, context)
    if not 0 <= position < params.max_len:
        raise IndexError(f"position {position} out of range [0, {params.max_len})")
    return np.exp(_log_softmax(params.logits[context, position]))


def log_prob_table(params: PolicyParams, context: int) -> np.ndarray:
    """``[max_len, V]`` log-probabilities for one context."""
    _check_context(params, context)
    return _log_softmax(params.logits[context, : params.max_len])


def _sample_from(table: np.ndarray, eos: int, rng: np.random.Generator) -> list[int]:
    tokens = []
    cdf = np.cumsum(np.exp(table), axis=-1)
    for pos in range(table.shape[0]):
        u = rng.random() * cdf[pos, -1]
        tok = min(int(np.searchsorted(cdf[pos], u, side="right")), table.shape[1] - 1)
        tokens.append(tok)
        if tok == eos:
            break
    return tokens


def sample_sequence(
    params: PolicyParams,
    context: int,
    rng_seed: int | np.random.Generator,
    eos_id: int = EOS_ID,
) -> TokenSeq:
    """Ancestral sampling until ``<eos>`` or ``max_len``.

    ``rng_seed`` may be an int or an existing Generator (which is advanced).
    """
    rng = np.random.default_rng(rng_seed)
    return TokenSeq(context, tuple(_sample_from(log_prob_table(params, context), eos_id, rng)))


def greedy_decode(params: PolicyParams, context: int, eos_id: int = EOS_ID) -> TokenSeq:
    table = log_prob_table(params, context)
    tokens = []
    for pos in range(table.shape[0]):
        tok = int(np.argmax(table[pos]))
        tokens.append(tok)
        if tok == eos_id:
            break
    return TokenSeq(context, tuple(tokens))


def _check_seq(params: PolicyParams, seq: TokenSeq) -> None:
    _check_context(params, seq.context)
    if not 1 <= len(seq.tokens) <= params.max_len:
        raise ContractViolation(f"sequence length {len(seq.tokens)} not in [1, {params.max_len}]")
    for t in seq.tokens:
        if not 0 <= t < params.vocab_size:
            raise IndexError(f"token index {t} out of range [0, {params.vocab_size})")


def sequence_logprob(params: PolicyParams, seq: TokenSeq, table: np.ndarray | None = None) -> float:
    _check_seq(params, seq)
    if table is None:
        table = log_prob_table(params, seq.context)
    return float(table[np.arange(len(seq.tokens)), list(seq.tokens)].sum())


def grad_sequence_logprob(params: PolicyParams, seq: TokenSeq) -> np.ndarray:
    """d sequence_logprob / d logits, same shape as ``params.logits``."""
    _check_seq(params, seq)
    grad = np.zeros_like(params.logits)
    n = len(seq.tokens)
    rows = np.exp(log_prob_table(params, seq.context)[:n])
    rows = -rows
    rows[np.arange(n), list(seq.tokens)] += 1.0
    grad[seq.context, :n] = rows
    return grad


def supervised_warmup(
    params: PolicyParams,
    targets: Sequence[TokenSeq],
    learning_rate: float,
    steps: int,
) -> PolicyParams:
    """Maximum-likelihood ascent on target sequences (toy cold-start phase).

    Returns new params; the input is left untouched.
    """
    out = params.copy()
    for _ in range(steps):
        grad = np.zeros_like(out.logits)
        for seq in targets:
            grad += grad_sequence_logprob(out, seq)
        out.logits += learning_rate * grad / len(targets)
    return out


def format_warm_start(
    num_contexts: int,
    wheel: EmotionWheel,
    vocab: Vocab | None = None,
    seed: int = 0,
    targets_per_context: int = 64,
    labels_per_target: int = 2,
    steps: int = 200,
    learning_rate: float = 1.0,
    max_len: int = DEFAULT_MAX_LEN,
) -> PolicyParams:
    """Cold-start a zero policy on template targets whose labels are drawn at random.

    The result emits ``<think>filler</think><answer>l1, l2</answer>`` reliably
    but carries no information about which emotions fit which context.
    """
    vocab = vocab or Vocab.from_wheel(wheel)
    canonical = set(wheel.canonical_labels)
    fillers = [t for t in vocab.tokens if t not in STRUCTURAL and t != SEP and t not in canonical]
    labels = wheel.canonical_labels
    rng = np.random.default_rng(seed)
    targets = []
    for c in range(num_contexts):
        for _ in range(targets_per_context):
            picked = rng.choice(len(labels), size=labels_per_target, replace=False)
            desc = fillers[rng.integers(len(fillers))] if fillers else ""
            text = format_cold_start_target(desc, [labels[i] for i in picked])
            ids = vocab.encode(text)
            if len(ids) < max_len:
                ids.append(vocab.eos_id)
            if len(ids) > max_len:
                raise ContractViolation(f"warm-start target needs {len(ids)} positions > max_len={max_len}")
            targets.append(TokenSeq(c, tuple(ids)))
    start = PolicyParams.zeros(num_contexts, len(vocab), max_len)
    return supervised_warmup(start, targets, learning_rate, steps)


def save_checkpoint(params: PolicyParams, vocab: Vocab, path: str | Path) -> None:
    """JSON checkpoint; float ``repr`` round-trips every logit exactly."""
    doc = {
        "format": "affectrl-policy",
        "version": CHECKPOINT_VERSION,
        "shape": list(params.logits.shape),
        "max_len": params.max_len,
        "vocab": list(vocab.tokens),
        "logits": [float(x) for x in params.logits.ravel()],
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, Vocab]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "affectrl-policy" or doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: not a version-{CHECKPOINT_VERSION} policy checkpoint")
    shape = tuple(doc["shape"])
    vocab = Vocab(tuple(doc["vocab"]))
    if shape[2] != len(vocab):
        raise DataError(f"{path}: vocab size {len(vocab)} does not match shape {shape}")
    logits = np.array(doc["logits"], dtype=np.float64).reshape(shape)
    return PolicyParams(logits, doc["max_len"]), vocab
