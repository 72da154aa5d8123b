"""
Scoring open-vocabulary emotion labels with an emotion wheel
============================================================

Free-form labels rarely match a reference word for word. The wheel groups
related words into clusters, and a predicted label counts as correct when its
cluster also shows up among the reference labels.
"""

from affectrl import LabelSet, cluster_of, default_wheel, ew_score

wheel = default_wheel()
for cluster in wheel.clusters[:3]:
    print(cluster.name, cluster.labels)

# %%
# Synonyms map surface words onto canonical labels; unknown words have no cluster.
for word in ("Happy", "glad", "furious", "wistful"):
    print(f"{word!r:>10} -> cluster {cluster_of(wheel, word)}")

# %%
# Precision asks how many predictions land in a reference cluster, recall how
# many reference labels are covered. The score is their average.
gt = LabelSet.of("happy", "surprised")
for pred in (LabelSet.of("cheerful", "amazed"), LabelSet.of("cheerful"), LabelSet.of("cheerful", "wistful"), LabelSet()):
    rep = ew_score(pred, gt, wheel)
    print(f"{str(list(pred.labels)):28s} P={rep.precision:.2f} R={rep.recall:.2f} score={rep.score:.3f}"
          f" unmatched={rep.unmatched_labels}")
