import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from affectrl.dataset import Sample, demo_samples
from affectrl.errors import ConfigError, ContractViolation, NonFiniteError
from affectrl.grpo_engine import (
    Rollout,
    RolloutGroup,
    TrainConfig,
    clipped_surrogate,
    compute_advantages,
    evaluate_greedy,
    grpo_loss_and_grad,
    kl_estimate,
    rollout_group,
    train,
)
from affectrl.ov_metric import LabelSet
from affectrl.rewards import RewardBreakdown
from affectrl.toy_policy import (
    PolicyParams,
    TokenSeq,
    Vocab,
    format_warm_start,
    sample_sequence,
    sequence_logprob,
)

from fd import central_difference, relative_error

DUMMY_REWARD = RewardBreakdown(0, 0.0, 0.0, 0.5)


def make_group(seqs, advantages, theta, ref=None):
    ref = ref or theta
    rollouts = [
        Rollout(s, "", DUMMY_REWARD, sequence_logprob(theta, s), sequence_logprob(theta, s),
                sequence_logprob(ref, s), float(a))
        for s, a in zip(seqs, advantages)
    ]
    return RolloutGroup(seqs[0].context, rollouts)


def random_instance(rng, eps=0.2, beta_kl=None):
    """Random (group, theta, old, ref, config) with V<=6, max_len<=4, G<=4."""
    V = int(rng.integers(2, 7))
    L = int(rng.integers(1, 5))
    G = int(rng.integers(2, 5))
    C = int(rng.integers(1, 3))
    old = PolicyParams(rng.normal(size=(C, L, V)), L)
    theta = PolicyParams(old.logits + rng.normal(scale=0.1, size=old.logits.shape), L)
    ref = PolicyParams(old.logits + rng.normal(scale=0.5, size=old.logits.shape), L)
    ctx = int(rng.integers(C))
    seqs = [sample_sequence(old, ctx, rng, eos_id=0) for _ in range(G)]
    adv = compute_advantages(rng.normal(size=G))
    group = make_group(seqs, adv, old, ref)
    cfg = TrainConfig(group_size=G, clip_eps=eps,
                      beta_kl=float(rng.uniform(0, 1)) if beta_kl is None else beta_kl)
    return group, theta, old, ref, cfg


# -- advantages ---------------------------------------------------------------

def test_advantages_degenerate():
    assert np.array_equal(compute_advantages([1, 1, 1]), [0.0, 0.0, 0.0])


def test_advantages_two():
    # mean 0.5, population std 0.5
    assert np.array_equal(compute_advantages([0, 1]), [-1.0, 1.0])


def test_advantages_moments():
    a = compute_advantages([0.2, 0.4, 0.9, 0.9])
    assert abs(a.mean()) < 1e-12
    assert abs(a.std() - 1.0) < 1e-9


def test_advantages_contract():
    with pytest.raises(ContractViolation):
        compute_advantages([1.0])
    with pytest.raises(ContractViolation):
        compute_advantages([1.0, float("nan")])


rewards = st.lists(st.floats(0, 1.5), min_size=2, max_size=16)


@given(rewards, st.floats(-5, 5), st.floats(0.1, 10))
def test_advantages_affine_invariant(r, shift, scale):
    r = np.array(r)
    assume(r.std() > 1e-3)
    base = compute_advantages(r)
    np.testing.assert_allclose(compute_advantages(r + shift), base, atol=1e-9)
    np.testing.assert_allclose(compute_advantages(r * scale), base, atol=1e-9)


@given(rewards)
def test_advantages_order_preserving(r):
    a = compute_advantages(r)
    if np.all(a == 0):
        return
    for i in range(len(r)):
        for j in range(len(r)):
            # gaps near the subnormal range (e.g. 1e-248) vanish once centred on
            # the mean, so strictness is only checked for representable gaps
            if r[i] - r[j] > 1e-9:
                assert a[i] > a[j]
            elif r[i] > r[j]:
                assert a[i] >= a[j]


# -- KL estimator ---------------------------------------------------------------

def test_kl_zero_at_equality():
    assert kl_estimate(-3.7, -3.7) == 0.0


def test_kl_at_log_two():
    expected = 2 - math.log(2) - 1
    assert kl_estimate(-1.0, -1.0 + math.log(2)) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.306853, abs=1e-6)


@given(st.floats(-200, 0), st.floats(-200, 0))
def test_kl_nonnegative(a, b):
    v = kl_estimate(a, b)
    assert math.isfinite(v) and v >= 0


def test_kl_clamped_for_extreme_gap():
    assert math.isfinite(kl_estimate(-1000.0, 0.0))
    assert math.isfinite(kl_estimate(0.0, -1000.0))


# -- clipped surrogate ----------------------------------------------------------

@pytest.mark.parametrize(
    "ratio, adv, value, active",
    [
        (1.0, 2.0, 2.0, True),
        (1.5, 1.0, 1.2, False),
        (0.5, 1.0, 0.5, True),
        (0.5, -1.0, -0.8, False),
        (1.5, -1.0, -1.5, True),
        (1.2, 1.0, 1.2, True),
    ],
)
def test_clipped_surrogate(ratio, adv, value, active):
    v, a = clipped_surrogate(ratio, adv, 0.2)
    assert v == pytest.approx(value, abs=1e-15)
    assert a is active


# -- rollouts -------------------------------------------------------------------

def perfect_policy(vocab, labels, num_contexts=1, max_len=10):
    p = PolicyParams.zeros(num_contexts, len(vocab), max_len)
    text_ids = vocab.encode("<think></think><answer>" + ", ".join(labels) + "</answer>") + [vocab.eos_id]
    for pos, tok in enumerate(text_ids):
        p.logits[:, pos, tok] = 1000.0
    return p


def test_rollout_group_deterministic(wheel):
    vocab = Vocab.from_wheel(wheel)
    p = format_warm_start(1, wheel, vocab, steps=20)
    gt = LabelSet.of("happy")
    cfg = TrainConfig()
    g1 = rollout_group(p, 0, gt, wheel, cfg, np.random.default_rng(5), vocab)
    g2 = rollout_group(p, 0, gt, wheel, cfg, np.random.default_rng(5), vocab)
    assert [r.seq for r in g1.rollouts] == [r.seq for r in g2.rollouts]
    assert np.array_equal(g1.advantages, g2.advantages)


def test_rollout_group_perfect_policy(wheel):
    vocab = Vocab.from_wheel(wheel)
    p = perfect_policy(vocab, ["happy"])
    cfg = TrainConfig(beta_format=0.5)
    g = rollout_group(p, 0, LabelSet.of("joyful"), wheel, cfg, np.random.default_rng(0), vocab)
    assert len(g) == cfg.group_size
    assert np.all(g.rewards == 1.5)
    assert np.all(g.advantages == 0.0)
    assert all(r.text == "<think></think><answer>happy</answer>" for r in g.rollouts)


def test_rollout_group_invariants(wheel):
    vocab = Vocab.from_wheel(wheel)
    p = format_warm_start(2, wheel, vocab, steps=30)
    cfg = TrainConfig(group_size=6)
    rng = np.random.default_rng(1)
    for _ in range(20):
        g = rollout_group(p, 1, LabelSet.of("sad", "angry"), wheel, cfg, rng, vocab)
        assert np.all((g.rewards >= 0) & (g.rewards <= 1 + cfg.beta_format))
        for r in g.rollouts:
            assert math.isfinite(r.logprob_old) and r.logprob_old <= 0
            assert r.logprob_theta == r.logprob_old
        a = g.advantages
        assert np.all(a == 0) or (abs(a.mean()) < 1e-9 and abs(a.std() - 1) < 1e-6)


def test_rollout_group_requires_labels(wheel):
    with pytest.raises(ContractViolation):
        rollout_group(PolicyParams.zeros(1, len(Vocab.from_wheel(wheel))), 0, LabelSet(),
                      wheel, TrainConfig(), np.random.default_rng(0))


# -- loss and gradient ------------------------------------------------------------

def test_on_policy_loss_is_zero():
    rng = np.random.default_rng(0)
    for _ in range(20):
        group, _, old, _, cfg = random_instance(rng)
        group = make_group([r.seq for r in group.rollouts], group.advantages, old)
        loss, _ = grpo_loss_and_grad(group, old, old, old, cfg)
        assert abs(loss + group.advantages.mean()) <= 1e-12
        assert abs(loss) <= 1e-9


def _with_ratio(old, seq, ratio):
    """Theta differing from ``old`` only in the first token's logit so pi/pi_old == ratio."""
    theta = old.copy()
    c, tok = seq.context, seq.tokens[0]
    V = old.vocab_size
    p_old = 1.0 / V
    p_new = ratio * p_old
    theta.logits[c, 0, tok] = math.log(p_new * (V - 1) / (1 - p_new))
    return theta


def test_clipping_constant_loss_and_zero_gradient():
    V, L, eps = 6, 3, 0.2
    old = PolicyParams.zeros(1, V, L)
    seqs = [TokenSeq(0, (1, 2, 0)), TokenSeq(0, (3, 0))]
    cfg = TrainConfig(group_size=2, clip_eps=eps, beta_kl=0.0)
    for adv, ratios in [(1.0, (1 + eps + 0.1, 1 + eps + 1.0)), (-1.0, (1 - eps - 0.1, 1 - eps - 0.5))]:
        group = make_group(seqs, [adv, 0.0], old)
        losses = []
        for r in ratios:
            theta = _with_ratio(old, seqs[0], r)
            assert math.exp(sequence_logprob(theta, seqs[0]) - sequence_logprob(old, seqs[0])) == pytest.approx(r)
            loss, grad = grpo_loss_and_grad(group, theta, old, old, cfg)
            losses.append(loss)
            assert np.all(grad == 0.0)
        assert abs(losses[0] - losses[1]) <= 1e-12
        assert losses[0] == pytest.approx(-(1 + eps * adv) * adv / 2, abs=1e-15)


def test_grpo_gradient_matches_finite_differences():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 25:
        group, theta, old, ref, cfg = random_instance(rng)
        ratios = [math.exp(sequence_logprob(theta, r.seq) - sequence_logprob(old, r.seq)) for r in group.rollouts]
        # keep clear of the clip kinks so central differences stay on one branch
        if any(min(abs(q - 1 - cfg.clip_eps), abs(q - 1 + cfg.clip_eps)) < 1e-3 for q in ratios):
            continue

        def f(x):
            return grpo_loss_and_grad(group, PolicyParams(x, theta.max_len), old, ref, cfg)[0]

        _, grad = grpo_loss_and_grad(group, theta, old, ref, cfg)
        numeric = central_difference(f, theta.logits, h=1e-5)
        if np.linalg.norm(numeric) == 0:
            assert np.all(grad == 0)
        else:
            assert relative_error(grad, numeric) < 1e-5
        checked += 1


def test_loss_rejects_nonfinite():
    old = PolicyParams.zeros(1, 3, 2)
    seqs = [TokenSeq(0, (1, 0)), TokenSeq(0, (2, 0))]
    group = make_group(seqs, [float("inf"), 0.0], old)
    with pytest.raises(NonFiniteError) as err:
        grpo_loss_and_grad(group, old, old, old, TrainConfig(group_size=2))
    assert err.value.index == 0


# -- config -------------------------------------------------------------------------

@pytest.mark.parametrize(
    "field, value",
    [("group_size", 1), ("clip_eps", 0.0), ("clip_eps", 1.0), ("beta_kl", -1.0),
     ("beta_format", -0.1), ("inner_epochs", 0), ("std_floor", 0.0), ("learning_rate", float("nan"))],
)
def test_config_validation(field, value):
    with pytest.raises(ConfigError) as err:
        TrainConfig(**{field: value})
    assert err.value.field == field
    assert field in str(err.value)


# -- training -----------------------------------------------------------------------

def single_context_task():
    s = demo_samples()[0]
    return [Sample(s.id, 0, s.query, s.gt_labels)]


def test_zero_learning_rate_is_noop(wheel):
    ds = demo_samples()
    init = format_warm_start(4, wheel, seed=1, steps=30)
    params, trace = train(ds, wheel, TrainConfig(learning_rate=0.0, iterations=20), init_params=init)
    assert np.array_equal(params.logits, init.logits)
    assert len(trace.records) == 20
    params0, _ = train(ds, wheel, TrainConfig(learning_rate=0.0, iterations=5))
    assert np.array_equal(params0.logits, np.zeros_like(params0.logits))


def test_train_deterministic(wheel):
    ds = demo_samples()
    init = format_warm_start(4, wheel, seed=0)
    cfg = TrainConfig(iterations=30, seed=3)
    p1, t1 = train(ds, wheel, cfg, init_params=init)
    p2, t2 = train(ds, wheel, cfg, init_params=init)
    assert np.array_equal(p1.logits, p2.logits)
    assert t1.to_csv() == t2.to_csv()


def test_trace_records(wheel):
    _, trace = train(single_context_task(), wheel, TrainConfig(iterations=7))
    assert len(trace.records) == 7
    header = trace.to_csv().splitlines()[0]
    assert header == "iteration,mean_reward,mean_accuracy,format_rate,mean_kl,loss,grad_norm"
    for r in trace.records:
        assert all(math.isfinite(getattr(r, k)) for k in ("mean_reward", "loss", "grad_norm", "mean_kl"))


def test_single_context_task_from_uniform(wheel):
    """Single context, G=8, eps=0.2, beta_format=0.5, beta_kl=0.01, lr=0.5, 500 iterations, uniform start."""
    ds = single_context_task()
    cfg = TrainConfig(group_size=8, clip_eps=0.2, beta_format=0.5, beta_kl=0.01, learning_rate=0.5, iterations=500)
    params, trace = train(ds, wheel, cfg)
    rewards = trace.column("mean_reward")
    windows = rewards.reshape(-1, 50).mean(axis=1)
    assert np.all(np.diff(windows) >= 0)
    assert rewards[-50:].mean() >= 0.9 * (1 + cfg.beta_format)
    greedy = evaluate_greedy(params, ds, wheel)[0]
    assert greedy.well_formed and greedy.accuracy == 1.0


def test_single_context_task_from_format_warm_start(wheel):
    ds = single_context_task()
    cfg = TrainConfig(group_size=8, clip_eps=0.2, beta_format=0.5, beta_kl=0.01, learning_rate=0.5, iterations=500)
    init = format_warm_start(1, wheel, seed=cfg.seed)
    params, trace = train(ds, wheel, cfg, init_params=init)
    rewards = trace.column("mean_reward")
    windows = rewards.reshape(-1, 50).mean(axis=1)
    assert windows[-1] > windows[0]
    assert rewards[-50:].mean() >= 0.9 * (1 + cfg.beta_format)
    greedy = evaluate_greedy(params, ds, wheel)[0]
    assert greedy.well_formed and greedy.accuracy == 1.0


def _max_tv(a, b):
    def softmax(x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    return 0.5 * np.abs(softmax(a.logits) - softmax(b.logits)).sum(axis=-1).max()


def test_kl_weight_anchors_policy(wheel):
    ds = demo_samples()
    init = format_warm_start(4, wheel, seed=0)
    drift = []
    for beta_kl in (0.0, 1.0, 5.0):
        params, _ = train(ds, wheel, TrainConfig(beta_kl=beta_kl, iterations=200), init_params=init)
        drift.append(_max_tv(params, init))
    assert drift[0] > drift[1] > drift[2]


def test_train_aborts_with_trace_on_nonfinite(wheel, monkeypatch):
    import affectrl.grpo_engine as eng

    real = eng._grpo_terms
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 4:
            raise NonFiniteError("boom", index=0)
        return real(*args, **kwargs)

    monkeypatch.setattr(eng, "_grpo_terms", flaky)
    with pytest.raises(NonFiniteError) as err:
        train(single_context_task(), wheel, TrainConfig(iterations=10))
    assert len(err.value.trace.records) == 3
