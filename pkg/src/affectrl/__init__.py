"""Emotion-wheel rewards and group-relative policy optimization on a toy sequence policy."""

from .dataset import Sample, demo_samples, read_samples, write_samples
from .emotion_wheel import EmotionWheel, cluster_of, default_wheel, dump_wheel, load_wheel, normalize_label
from .grpo_engine import (
    RolloutGroup,
    TrainConfig,
    TrainTrace,
    compute_advantages,
    evaluate_greedy,
    grpo_loss_and_grad,
    kl_estimate,
    rollout_group,
    train,
)
from .ov_metric import LabelSet, MetricReport, batch_evaluate, ew_score
from .rewards import check_format, combined_reward, extract_answer, format_cold_start_target
from .toy_policy import (
    PolicyParams,
    TokenSeq,
    Vocab,
    format_warm_start,
    grad_sequence_logprob,
    greedy_decode,
    load_checkpoint,
    sample_sequence,
    save_checkpoint,
    sequence_logprob,
)

__version__ = "0.1.0"
