"""Group-relative policy optimization over the toy policy.

Per input, G outputs are sampled from the frozen pre-update snapshot and
scored; their rewards are standardized within the group to give advantages,
and the policy minimizes

    L = -(1/G) sum_i [ min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) - beta_kl KL_i ]

with a sequence-level ratio rho_i = pi_theta(o_i) / pi_old(o_i) and the
per-sample estimator KL_i = t - log t - 1, t = pi_ref(o_i) / pi_theta(o_i).
Gradients are assembled analytically; the optimizer is plain gradient descent.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import Sample
from .emotion_wheel import EmotionWheel
from .errors import ConfigError, ContractViolation, NonFiniteError
from .ov_metric import LabelSet, ew_score
from .rewards import RewardBreakdown, check_format, combined_reward, extract_answer
from .toy_policy import (
    DEFAULT_MAX_LEN,
    PolicyParams,
    TokenSeq,
    Vocab,
    greedy_decode,
    log_prob_table,
    sample_sequence,
    sequence_logprob,
)

log = logging.getLogger(__name__)

KL_CLAMP = 60.0
TRACE_COLUMNS = (
    "iteration",
    "mean_reward",
    "mean_accuracy",
    "format_rate",
    "mean_kl",
    "loss",
    "grad_norm",
)


@dataclass
class TrainConfig:
    group_size: int = 8
    clip_eps: float = 0.2
    beta_format: float = 0.5
    beta_kl: float = 0.01
    learning_rate: float = 0.5
    iterations: int = 500
    inner_epochs: int = 1
    seed: int = 0
    std_floor: float = 1e-8
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        checks = [
            ("group_size", self.group_size >= 2, "must be an integer >= 2"),
            ("clip_eps", 0 < self.clip_eps < 1, "must lie in (0, 1)"),
            ("beta_format", self.beta_format >= 0, "must be >= 0"),
            ("beta_kl", self.beta_kl >= 0, "must be >= 0"),
            ("learning_rate", self.learning_rate >= 0, "must be >= 0"),
            ("iterations", self.iterations >= 0, "must be >= 0"),
            ("inner_epochs", self.inner_epochs >= 1, "must be >= 1"),
            ("std_floor", self.std_floor > 0, "must be > 0"),
            ("max_len", self.max_len >= 1, "must be >= 1"),
        ]
        for name, ok, msg in checks:
            value = getattr(self, name)
            if not ok or (isinstance(value, float) and not math.isfinite(value)):
                raise ConfigError(f"{name} {msg} (got {value!r})", name)
        for name in ("group_size", "iterations", "inner_epochs", "seed", "max_len"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer (got {value!r})", name)


@dataclass
class Rollout:
    seq: TokenSeq
    text: str
    reward: RewardBreakdown
    logprob_theta: float
    logprob_old: float
    logprob_ref: float
    advantage: float = 0.0


@dataclass
class RolloutGroup:
    context: int
    rollouts: list[Rollout]

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward.total for r in self.rollouts])

    @property
    def advantages(self) -> np.ndarray:
        return np.array([r.advantage for r in self.rollouts])

    def __len__(self) -> int:
        return len(self.rollouts)


@dataclass
class IterationRecord:
    iteration: int
    mean_reward: float
    mean_accuracy: float
    format_rate: float
    mean_kl: float
    loss: float
    grad_norm: float
    kl_clamped: int = 0


@dataclass
class TrainTrace:
    config: dict = field(default_factory=dict)
    records: list[IterationRecord] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.records:
            writer.writerow([r.iteration] + [repr(float(getattr(r, c))) for c in TRACE_COLUMNS[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"config": self.config, "records": [asdict(r) for r in self.records]}
        return json.dumps(doc, indent=2) + "\n"


def compute_advantages(rewards: Sequence[float], std_floor: float = 1e-8) -> np.ndarray:
    """Standardize rewards within a group (population std).

    Groups whose std falls below ``std_floor`` get all-zero advantages.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ContractViolation(f"need a group of at least 2 rewards, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise ContractViolation("rewards must be finite")
    std = r.std()
    if std < std_floor:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def _kl_terms(logp_theta: float, logp_ref: float) -> tuple[float, float, bool]:
    """Estimator value, its derivative w.r.t. ``logp_theta``, and whether clamping fired."""
    d = logp_ref - logp_theta
    clamped = abs(d) > KL_CLAMP
    if clamped:
        d = math.copysign(KL_CLAMP, d)
    t = math.exp(d)
    # t - d - 1 loses everything to cancellation for tiny d; expm1 keeps it exact at 0.
    value = math.expm1(d) - d
    return value, 1.0 - t, clamped


def kl_estimate(logp_theta: float, logp_ref: float) -> float:
    """Non-negative per-sample KL estimator ``t - log t - 1`` with ``t = pi_ref / pi_theta``."""
    return _kl_terms(logp_theta, logp_ref)[0]


def clipped_surrogate(ratio: float, advantage: float, clip_eps: float) -> tuple[float, bool]:
    """``min(ratio*A, clip(ratio)*A)`` and whether the unclipped branch is the active one.

    Ties go to the unclipped branch.
    """
    unclipped = ratio * advantage
    clipped = min(max(ratio, 1.0 - clip_eps), 1.0 + clip_eps) * advantage
    if unclipped <= clipped:
        return unclipped, True
    return clipped, False


def rollout_group(
    params_theta: PolicyParams,
    context: int,
    gt: LabelSet,
    wheel: EmotionWheel,
    config: TrainConfig,
    rng: np.random.Generator,
    vocab: Vocab | None = None,
    params_ref: PolicyParams | None = None,
) -> RolloutGroup:
    """Sample and score ``config.group_size`` outputs from the snapshot ``params_theta``.

    ``params_theta`` is the pre-update (old) policy; its log-probs fill both
    ``logprob_theta`` and ``logprob_old``. ``params_ref`` defaults to the same
    snapshot.
    """
    if not gt:
        raise ContractViolation("ground-truth label set must be non-empty")
    vocab = vocab or Vocab.from_wheel(wheel)
    params_ref = params_ref or params_theta
    table = log_prob_table(params_theta, context)
    ref_table = log_prob_table(params_ref, context)
    rollouts = []
    for _ in range(config.group_size):
        seq = sample_sequence(params_theta, context, rng, eos_id=vocab.eos_id)
        text = vocab.decode(seq.tokens)
        lp = sequence_logprob(params_theta, seq, table)
        rollouts.append(
            Rollout(
                seq=seq,
                text=text,
                reward=combined_reward(text, gt, wheel, config.beta_format),
                logprob_theta=lp,
                logprob_old=lp,
                logprob_ref=sequence_logprob(params_ref, seq, ref_table),
            )
        )
    advantages = compute_advantages([r.reward.total for r in rollouts], config.std_floor)
    for r, a in zip(rollouts, advantages):
        r.advantage = float(a)
    return RolloutGroup(context, rollouts)


@dataclass
class _LossTerms:
    loss: float
    grad: np.ndarray
    mean_kl: float
    kl_clamped: int


def _grpo_terms(
    group: RolloutGroup,
    params_theta: PolicyParams,
    params_old: PolicyParams,
    params_ref: PolicyParams,
    config: TrainConfig,
) -> _LossTerms:
    if params_theta.logits.shape != params_old.logits.shape or (
        params_theta.logits.shape != params_ref.logits.shape
    ):
        raise ContractViolation("policy snapshots must share one shape")
    c = group.context
    G = len(group)
    table = log_prob_table(params_theta, c)
    old_table = log_prob_table(params_old, c)
    ref_table = log_prob_table(params_ref, c)
    probs = np.exp(table)

    objective = 0.0
    kl_total = 0.0
    clamped = 0
    grad = np.zeros_like(params_theta.logits)
    for i, ro in enumerate(group.rollouts):
        lp = sequence_logprob(params_theta, ro.seq, table)
        lp_old = sequence_logprob(params_old, ro.seq, old_table)
        lp_ref = sequence_logprob(params_ref, ro.seq, ref_table)
        with np.errstate(over="ignore"):
            ratio = float(np.exp(lp - lp_old))
        surrogate, active = clipped_surrogate(ratio, ro.advantage, config.clip_eps)
        kl, dkl, was_clamped = _kl_terms(lp, lp_ref)
        clamped += was_clamped
        term = surrogate - config.beta_kl * kl
        if not (math.isfinite(ratio) and math.isfinite(term)):
            raise NonFiniteError(f"non-finite loss term for rollout {i}", index=i)
        objective += term
        kl_total += kl

        # d term / d log pi_theta(o_i)
        coeff = (ro.advantage * ratio if active else 0.0) - config.beta_kl * dkl
        if coeff != 0.0:
            n = len(ro.seq)
            rows = -probs[:n]
            rows[np.arange(n), list(ro.seq.tokens)] += 1.0
            grad[c, :n] -= (coeff / G) * rows
    return _LossTerms(-objective / G, grad, kl_total / G, clamped)


def grpo_loss_and_grad(
    group: RolloutGroup,
    params_theta: PolicyParams,
    params_old: PolicyParams,
    params_ref: PolicyParams,
    config: TrainConfig,
) -> tuple[float, np.ndarray]:
    terms = _grpo_terms(group, params_theta, params_old, params_ref, config)
    return terms.loss, terms.grad


@dataclass
class GreedyResult:
    context: int
    text: str
    well_formed: bool
    accuracy: float


def evaluate_greedy(
    params: PolicyParams,
    samples: Sequence[Sample],
    wheel: EmotionWheel,
    vocab: Vocab | None = None,
) -> list[GreedyResult]:
    """Greedy-decode each sample's context and score it against its labels."""
    vocab = vocab or Vocab.from_wheel(wheel)
    out = []
    for s in samples:
        text = vocab.decode(greedy_decode(params, s.context, vocab.eos_id).tokens)
        parsed = check_format(text)
        acc = ew_score(extract_answer(parsed), s.gt_labels, wheel).score
        out.append(GreedyResult(s.context, text, parsed.well_formed, acc))
    return out


def train(
    dataset: Sequence[Sample],
    wheel: EmotionWheel,
    config: TrainConfig,
    init_params: PolicyParams | None = None,
    vocab: Vocab | None = None,
    on_iteration: Callable[[int, PolicyParams, TrainTrace], None] | None = None,
) -> tuple[PolicyParams, TrainTrace]:
    """Run GRPO and return the final policy and its per-iteration trace.

    Without ``init_params`` the policy starts from all-zero logits (uniform);
    the starting point is frozen as the reference policy either way.
    On a non-finite loss a :class:`NonFiniteError` is raised with the partial
    trace and last finite params attached as ``.trace`` and ``.params``.
    """
    if not dataset:
        raise ContractViolation("dataset must be non-empty")
    config.validate()
    vocab = vocab or Vocab.from_wheel(wheel)
    num_contexts = max(s.context for s in dataset) + 1
    if init_params is None:
        theta = PolicyParams.zeros(num_contexts, len(vocab), config.max_len)
    else:
        theta = init_params.copy()
        if theta.num_contexts < num_contexts or theta.vocab_size != len(vocab):
            raise ContractViolation(
                f"init params shape {theta.logits.shape} does not fit "
                f"{num_contexts} contexts x {len(vocab)} tokens"
            )
    ref = theta.copy()
    rng = np.random.default_rng(config.seed)
    trace = TrainTrace(config=asdict(config))

    for it in range(config.iterations):
        old = theta.copy()
        totals, accs, fmts = [], [], []
        losses, norms, kls = [], [], []
        clamped = 0
        for sample in dataset:
            group = rollout_group(old, sample.context, sample.gt_labels, wheel, config, rng, vocab, ref)
            for ro in group.rollouts:
                totals.append(ro.reward.total)
                accs.append(ro.reward.accuracy)
                fmts.append(ro.reward.format)
            for _ in range(config.inner_epochs):
                try:
                    terms = _grpo_terms(group, theta, old, ref, config)
                except NonFiniteError as exc:
                    exc.trace, exc.params = trace, theta
                    raise
                losses.append(terms.loss)
                kls.append(terms.mean_kl)
                norms.append(float(np.linalg.norm(terms.grad)))
                clamped += terms.kl_clamped
                theta.logits -= config.learning_rate * terms.grad
        if not np.all(np.isfinite(theta.logits)):
            exc = NonFiniteError(f"parameters became non-finite at iteration {it}")
            exc.trace, exc.params = trace, old
            raise exc
        trace.records.append(
            IterationRecord(
                iteration=it,
                mean_reward=float(np.mean(totals)),
                mean_accuracy=float(np.mean(accs)),
                format_rate=float(np.mean(fmts)),
                mean_kl=float(np.mean(kls)),
                loss=float(np.mean(losses)),
                grad_norm=float(np.mean(norms)),
                kl_clamped=clamped,
            )
        )
        if clamped:
            log.warning("iteration %d: %d KL log-ratio(s) clamped to +/-%g", it, clamped, KL_CLAMP)
        if on_iteration is not None:
            on_iteration(it, theta, trace)
    return theta, trace
