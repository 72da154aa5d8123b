"""
A tabular sequence policy and its exact gradients
=================================================

The toy policy keeps one logit vector per (context, position). A sequence's
log-probability is the sum of per-position log-softmax terms, and its gradient
on every visited row is ``onehot - probs``. A central-difference check confirms this.
"""

import numpy as np

from affectrl import PolicyParams, grad_sequence_logprob, sample_sequence, sequence_logprob

rng = np.random.default_rng(0)
params = PolicyParams(rng.normal(size=(2, 4, 5)), max_len=4)
seq = sample_sequence(params, context=1, rng_seed=rng, eos_id=0)
print("sampled tokens:", seq.tokens, "log-prob:", round(sequence_logprob(params, seq), 4))

# %%
analytic = grad_sequence_logprob(params, seq)
numeric = np.zeros_like(params.logits)
h = 1e-5
for idx in np.ndindex(params.logits.shape):
    bump = np.zeros_like(params.logits)
    bump[idx] = h
    up = sequence_logprob(PolicyParams(params.logits + bump, 4), seq)
    down = sequence_logprob(PolicyParams(params.logits - bump, 4), seq)
    numeric[idx] = (up - down) / (2 * h)
print("max abs difference:", np.abs(analytic - numeric).max())
