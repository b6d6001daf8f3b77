# Train a small decision tree on rule-region data, read it back as rules,
# and combine it with the indicator rule sets by vote.
import numpy as np

from octabio.phantom import table_region_dataset
from octabio.whitebox import (
    DL_RULES,
    DT_RULES,
    SVM_RULES,
    accuracy,
    apply_cuts,
    discretize_supervised,
    ensemble_votes,
    extract_dt_rules,
    train_decision_tree,
    train_test_split,
)

print("published decision-tree rules:")
for r in DT_RULES:
    print("  ", r)
print("indicator rules:")
for r in list(SVM_RULES) + list(DL_RULES):
    print("  ", r)

records, labels = table_region_dataset(60, 40, seed=0)
ids = [r.image_id for r in records]
by_id = dict(zip(ids, records))
truth = dict(zip(ids, labels))
train, test = train_test_split(ids, labels, ratio=0.8, seed=0)
print(f"\n{len(train)} train / {len(test)} test")

tree = train_decision_tree([by_id[i] for i in train], [truth[i] for i in train], max_depth=3)
learned = extract_dt_rules(tree)
print(f"learned tree: depth {tree.depth}, {tree.n_leaves} leaves")
for r in learned:
    print("  ", r)

cuts = discretize_supervised([by_id[i] for i in train], [truth[i] for i in train])
print("discretization cuts (mm^2):", {k: round(v, 5) for k, v in cuts.__dict__.items()})

votes = [ensemble_votes(by_id[i], apply_cuts(by_id[i], cuts), learned) for i in test]
y = [truth[i] for i in test]
for key in ("DT", "SVM", "DL", "ensemble"):
    preds = [v[key] for v in votes]
    cover = np.mean([p is not None for p in preds])
    print(f"{key:>8}: accuracy {accuracy(preds, y):.3f}  coverage {cover:.2f}")
