"""
Format and accuracy rewards for structured outputs
==================================================

A response earns the format reward only when it is exactly a think block,
optional whitespace, then an answer block. The accuracy reward is the wheel
score of the labels found inside the answer block.
"""

from affectrl import LabelSet, check_format, combined_reward, default_wheel, format_cold_start_target

wheel = default_wheel()
gt = LabelSet.of("sad", "lonely")

responses = [
    "<think>quiet voice, looks away</think>\n<answer>sad, isolated</answer>",
    "<think>quiet voice</think><answer>sad and angry</answer>",
    "<answer>sad</answer>",
    "<think>quiet voice</think><answer>sad</answer> trailing text",
]
for raw in responses:
    r = combined_reward(raw, gt, wheel, beta_format=0.5)
    print(f"format={r.format} accuracy={r.accuracy:.3f} total={r.total:.3f}  {raw!r}")

# %%
# Cold-start targets are rendered in the same template, so they always pass the check.
target = format_cold_start_target("trembling voice, wide eyes", ["fearful", "surprised"])
print(target, check_format(target).well_formed)
