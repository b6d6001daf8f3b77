"""Interpretable classification of biomarker records into Sick / NotSick.

Three rule systems are provided: numeric decision-tree rules on the mCNV and
vessel areas, and two rule sets over discretized small/medium/big indicators.
A CART-style tree can be trained and flattened into rules, and the three
systems are combined by majority vote.
"""

from __future__ import annotations

import enum
import json
import math
import operator
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np


class Label(str, enum.Enum):
    SICK = "Sick"
    NOT_SICK = "NotSick"

    def __str__(self):
        return self.value


def parse_label(value) -> Label:
    if isinstance(value, Label):
        return value
    key = str(value).strip().lower().replace("_", "").replace("-", "").replace(" ", "")
    if key in ("sick", "namd", "1"):
        return Label.SICK
    if key in ("notsick", "¬sick", "healthy", "0"):
        return Label.NOT_SICK
    raise ValueError(f"unknown label {value!r}")


_OPS = {
    "<=": operator.le,
    "<": operator.lt,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
}

NUMERIC_FEATURES = ("mcnv", "vessel")
INDICATOR_FEATURES = ("m_small", "m_medium", "m_big", "v_small", "v_medium", "v_big")


@dataclass(frozen=True)
class Condition:
    feature: str
    op: str
    value: float

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown comparator {self.op!r}")
        if self.feature not in NUMERIC_FEATURES + INDICATOR_FEATURES:
            raise ValueError(f"unknown feature {self.feature!r}")

    def holds(self, features: dict) -> bool:
        return _OPS[self.op](features[self.feature], self.value)

    def __str__(self):
        return f"{self.feature} {self.op} {self.value:g}"


@dataclass(frozen=True)
class Rule:
    conditions: tuple
    label: Label
    source: str = ""
    name: str = ""

    def __post_init__(self):
        if not self.conditions:
            raise ValueError("a rule needs at least one condition")
        object.__setattr__(self, "conditions", tuple(self.conditions))
        object.__setattr__(self, "label", parse_label(self.label))

    def fires(self, features: dict) -> bool:
        return all(c.holds(features) for c in self.conditions)

    def __str__(self):
        body = " AND ".join(str(c) for c in self.conditions)
        return f"{self.name}: {body} -> {self.label}"


@dataclass(frozen=True)
class RuleSet:
    """Ordered rules; the first one that fires decides."""

    rules: tuple
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))

    def __iter__(self):
        return iter(self.rules)

    def __len__(self):
        return len(self.rules)

    def match(self, features: dict):
        for r in self.rules:
            if r.fires(features):
                return r
        return None

    def classify(self, features: dict):
        r = self.match(features)
        return None if r is None else r.label

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "rules": [
                {
                    "name": r.name,
                    "label": r.label.value,
                    "conditions": [
                        {"feature": c.feature, "op": c.op, "value": c.value} for c in r.conditions
                    ],
                }
                for r in self.rules
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuleSet":
        src = d.get("source", "")
        rules = [
            Rule(
                tuple(Condition(c["feature"], c["op"], c["value"]) for c in r["conditions"]),
                r["label"],
                src,
                r.get("name", ""),
            )
            for r in d["rules"]
        ]
        return cls(tuple(rules), src)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RuleSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _rule(name, source, label, *conds):
    return Rule(tuple(Condition(*c) for c in conds), label, source, name)


S, N = Label.SICK, Label.NOT_SICK

DT_RULES = RuleSet((
    _rule("R1", "DT", N, ("mcnv", "<=", 0.01)),
    _rule("R2", "DT", S, ("mcnv", ">", 0.01), ("vessel", "<=", 0.02)),
    _rule("R3", "DT", N, ("mcnv", ">", 0.01), ("vessel", ">", 0.02), ("mcnv", "<=", 0.03)),
    _rule("R4", "DT", S, ("mcnv", ">", 0.01), ("vessel", ">", 0.02), ("mcnv", ">", 0.03)),
), "DT")

# The published third SVM rule repeats the second verbatim; it is kept once.
SVM_RULES = RuleSet((
    _rule("R1", "SVM", S, ("m_small", "<=", 0.5), ("m_medium", "<=", 0.5)),
    _rule("R2", "SVM", N, ("m_small", "<=", 0.5), ("m_medium", ">", 0.5),
          ("v_medium", "<", 0.5), ("v_small", "<", 0.5)),
), "SVM")

# Redefined description-logic rules for the Sick class, duplicates dropped.
# DL1 and DL4 pair two bins of the same feature and cannot fire on one-hot bins.
DL_RULES = RuleSet((
    _rule("DL1", "DL", S, ("v_big", "==", 1), ("v_medium", "==", 1)),
    _rule("DL2", "DL", S, ("m_big", "==", 1), ("v_medium", "==", 1)),
    _rule("DL3", "DL", S, ("m_small", "==", 1), ("v_medium", "==", 1)),
    _rule("DL4", "DL", S, ("v_medium", "==", 1), ("v_small", "==", 1)),
), "DL")
UNSATISFIABLE_DL_RULES = ("DL1", "DL4")


# -- discretization -------------------------------------------------------------

@dataclass(frozen=True)
class Cuts:
    m_cut1: float
    m_cut2: float
    v_cut1: float
    v_cut2: float

    def __post_init__(self):
        vals = (self.m_cut1, self.m_cut2, self.v_cut1, self.v_cut2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("cuts must be finite")
        if not (self.m_cut1 < self.m_cut2 and self.v_cut1 < self.v_cut2):
            raise ValueError("cuts must be strictly increasing")


@dataclass(frozen=True)
class DiscretizedFeatures:
    m_small: int
    m_medium: int
    m_big: int
    v_small: int
    v_medium: int
    v_big: int

    def __post_init__(self):
        if self.m_small + self.m_medium + self.m_big != 1 or self.v_small + self.v_medium + self.v_big != 1:
            raise ValueError("exactly one bin per feature must be set")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in INDICATOR_FEATURES}

    @classmethod
    def from_bins(cls, m_bin: int, v_bin: int) -> "DiscretizedFeatures":
        m = [int(m_bin == k) for k in range(3)]
        v = [int(v_bin == k) for k in range(3)]
        return cls(*m, *v)


def record_features(record) -> dict:
    """Numeric rule features of a biomarker record (areas in mm^2)."""
    return {"mcnv": record.mcnv_area_mm2, "vessel": record.total_area_mm2}


def _entropy_terms(counts: np.ndarray, sick: np.ndarray) -> np.ndarray:
    """n * H(bin) for arrays of bin sizes and Sick counts."""
    out = np.zeros(np.broadcast(counts, sick).shape)
    for k in (sick, counts - sick):
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(counts > 0, k / np.maximum(counts, 1), 0.0)
            out -= np.where(k > 0, k * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return out


def best_three_bin_cuts(values, is_sick):
    """Cut pair minimising the size-weighted class entropy of three bins.

    Candidates are midpoints between consecutive distinct values. Among
    equally good pairs, the one sitting in the widest value gaps wins (sum of
    the two gaps), then the lexicographically smallest.
    """
    values = np.asarray(values, dtype=np.float64)
    is_sick = np.asarray(is_sick, dtype=bool)
    u, inv = np.unique(values, return_inverse=True)
    if len(u) < 3:
        warnings.warn(
            f"only {len(u)} distinct feature values; falling back to tertile cuts",
            stacklevel=3,
        )
        c1, c2 = (float(q) for q in np.quantile(values, [1 / 3, 2 / 3]))
        if not c2 > c1:
            c2 = float(np.nextafter(c1, np.inf))
        return c1, c2
    n_le = np.cumsum(np.bincount(inv, minlength=len(u)))
    s_le = np.cumsum(np.bincount(inv, weights=is_sick.astype(float), minlength=len(u)))
    mids = (u[:-1] + u[1:]) / 2.0
    k = len(mids)
    i, j = np.triu_indices(k, 1)  # row-major: lexicographic in (i, j)
    n, s = n_le[-1], s_le[-1]
    ent = (
        _entropy_terms(n_le[i], s_le[i])
        + _entropy_terms(n_le[j] - n_le[i], s_le[j] - s_le[i])
        + _entropy_terms(n - n_le[j], s - s_le[j])
    ) / n
    tied = np.flatnonzero(ent <= ent.min() + 1e-12)
    gap = np.diff(u)
    width = gap[i[tied]] + gap[j[tied]]
    best = int(tied[np.flatnonzero(width == width.max())[0]])
    return float(mids[i[best]]), float(mids[j[best]])


def discretize_supervised(records, labels) -> Cuts:
    """Learn small/medium/big cut points for mCNV and vessel area, using the
    Sick/NotSick labels as the target."""
    labels = [parse_label(l) for l in labels]
    if len(records) != len(labels):
        raise ValueError("records and labels differ in length")
    if len(records) < 3:
        raise ValueError("need at least 3 records to discretize")
    if len(set(labels)) < 2:
        raise ValueError("both classes must be present")
    sick = [l is Label.SICK for l in labels]
    m1, m2 = best_three_bin_cuts([r.mcnv_area_mm2 for r in records], sick)
    v1, v2 = best_three_bin_cuts([r.total_area_mm2 for r in records], sick)
    return Cuts(m1, m2, v1, v2)


def _bin(x: float, c1: float, c2: float) -> int:
    if x <= c1:
        return 0
    if x <= c2:
        return 1
    return 2


def apply_cuts(record, cuts: Cuts) -> DiscretizedFeatures:
    return DiscretizedFeatures.from_bins(
        _bin(record.mcnv_area_mm2, cuts.m_cut1, cuts.m_cut2),
        _bin(record.total_area_mm2, cuts.v_cut1, cuts.v_cut2),
    )


# -- fixed rule systems ---------------------------------------------------------

def dt_rules_classify(record, rules: RuleSet = DT_RULES) -> Label:
    label = rules.classify(record_features(record))
    if label is None:
        raise ValueError("decision-tree rules do not cover this record")
    return label


def svm_rules_classify(f: DiscretizedFeatures, rules: RuleSet = SVM_RULES):
    """Label from the SVM-derived rules, or None when no rule covers ``f``."""
    return rules.classify(f.as_dict())


def dl_rules_classify(f: DiscretizedFeatures, rules: RuleSet = DL_RULES):
    """Sick when any description-logic rule holds, else None (abstain)."""
    return rules.classify(f.as_dict())


def ensemble_votes(record, f: DiscretizedFeatures, dt_rules=DT_RULES, svm_rules=SVM_RULES, dl_rules=DL_RULES) -> dict:
    dt = dt_rules_classify(record, dt_rules)
    svm = svm_rules_classify(f, svm_rules)
    dl = dl_rules_classify(f, dl_rules)
    votes = [v for v in (dt, svm, dl) if v is not None]
    n_sick = sum(v is Label.SICK for v in votes)
    n_not = len(votes) - n_sick
    if n_sick > n_not:
        ens = Label.SICK
    elif n_not > n_sick:
        ens = Label.NOT_SICK
    else:
        ens = dt
    return {"DT": dt, "SVM": svm, "DL": dl, "ensemble": ens}


def ensemble_classify(record, f: DiscretizedFeatures, dt_rules=DT_RULES, svm_rules=SVM_RULES, dl_rules=DL_RULES) -> Label:
    """Majority vote of the three rule systems.

    Abstentions do not vote; a tie (including all-but-DT abstaining) is
    settled by the decision-tree verdict.
    """
    return ensemble_votes(record, f, dt_rules, svm_rules, dl_rules)["ensemble"]


# -- decision tree --------------------------------------------------------------

@dataclass
class Node:
    label: Label | None = None
    feature: str | None = None
    threshold: float | None = None
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self):
        return self.feature is None


@dataclass
class DecisionTree:
    root: Node
    max_depth: int = 3
    feature_names: tuple = field(default=NUMERIC_FEATURES)

    def predict_features(self, features: dict) -> Label:
        node = self.root
        while not node.is_leaf:
            node = node.left if features[node.feature] <= node.threshold else node.right
        return node.label

    def predict(self, record) -> Label:
        return self.predict_features(record_features(record))

    @property
    def depth(self) -> int:
        def d(n):
            return 0 if n.is_leaf else 1 + max(d(n.left), d(n.right))
        return d(self.root)

    @property
    def n_leaves(self) -> int:
        def c(n):
            return 1 if n.is_leaf else c(n.left) + c(n.right)
        return c(self.root)


def _majority(y: np.ndarray) -> Label:
    n_sick = int(np.count_nonzero(y))
    return Label.SICK if 2 * n_sick >= len(y) else Label.NOT_SICK


def _gini_key(y_left: np.ndarray, y_right: np.ndarray) -> Fraction:
    """Negated sum of n_ck^2 / n_c over children: smaller means purer.

    Weighted Gini = 1 - key_sum / N, so ordering by this key is exact.
    """
    total = Fraction(0)
    for y in (y_left, y_right):
        n = len(y)
        s = int(np.count_nonzero(y))
        total += Fraction(s * s + (n - s) * (n - s), n)
    return -total


def _best_split(X: np.ndarray, y: np.ndarray):
    best = None
    for f in range(X.shape[1]):
        u = np.unique(X[:, f])
        for t in (u[:-1] + u[1:]) / 2.0:
            left = X[:, f] <= t
            key = (_gini_key(y[left], y[~left]), float(t), f)
            if best is None or key < best:
                best = key
    return best


def train_decision_tree(records, labels, max_depth: int = 3) -> DecisionTree:
    """Greedy binary tree on (mCNV area, vessel area) minimising Gini impurity.

    Thresholds are midpoints of sorted distinct values. Equal impurity is
    broken by the smaller threshold, then mCNV before vessel area. Leaves take
    the majority class, Sick on a tie.
    """
    labels = [parse_label(l) for l in labels]
    if len(records) != len(labels):
        raise ValueError("records and labels differ in length")
    if len(records) < 2:
        raise ValueError("need at least 2 records")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if len(set(labels)) < 2:
        warnings.warn("only one class present; tree is a single leaf", stacklevel=2)
    X = np.array([[r.mcnv_area_mm2, r.total_area_mm2] for r in records], dtype=np.float64)
    y = np.array([l is Label.SICK for l in labels])

    def build(idx, depth):
        ys = y[idx]
        node = Node(label=_majority(ys))
        if depth >= max_depth or ys.all() or not ys.any():
            return node
        split = _best_split(X[idx], ys)
        if split is None:
            return node
        key, t, f = split
        n = len(ys)
        s = int(np.count_nonzero(ys))
        parent_key = -Fraction(s * s + (n - s) * (n - s), n)
        if not key < parent_key:
            return node
        left = X[idx, f] <= t
        node.feature = NUMERIC_FEATURES[f]
        node.threshold = t
        node.left = build(idx[left], depth + 1)
        node.right = build(idx[~left], depth + 1)
        node.label = None
        return node

    return DecisionTree(build(np.arange(len(records)), 0), max_depth)


def extract_dt_rules(tree: DecisionTree) -> RuleSet:
    """One rule per leaf, conditions taken along the root-to-leaf path."""
    rules = []

    def walk(node, path):
        if node.is_leaf:
            name = f"R{len(rules) + 1}"
            conds = path or (Condition(tree.feature_names[0], ">=", -math.inf),)
            rules.append(Rule(tuple(conds), node.label, "DT", name))
            return
        walk(node.left, path + (Condition(node.feature, "<=", node.threshold),))
        walk(node.right, path + (Condition(node.feature, ">", node.threshold),))

    walk(tree.root, ())
    return RuleSet(tuple(rules), "DT")


def table_tree() -> DecisionTree:
    """The published decision-tree rules as a tree (splits 0.01, 0.02, 0.03)."""
    leaf = lambda lab: Node(label=lab)  # noqa: E731
    right = Node(feature="vessel", threshold=0.02, left=leaf(S),
                 right=Node(feature="mcnv", threshold=0.03, left=leaf(N), right=leaf(S)))
    return DecisionTree(Node(feature="mcnv", threshold=0.01, left=leaf(N), right=right), 3)


# -- evaluation helpers ---------------------------------------------------------

def train_test_split(ids, labels=None, ratio: float = 0.8, seed: int = 0):
    """Seeded split of ``ids`` into train/test lists, stratified by label.

    Each stratum contributes ``round(ratio * size)`` items to the training
    side. Both lists keep the input order.
    """
    ids = list(ids)
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must be in [0, 1]")
    if labels is None:
        strata = {None: list(range(len(ids)))}
    else:
        labels = [parse_label(l) for l in labels]
        if len(labels) != len(ids):
            raise ValueError("ids and labels differ in length")
        strata = {}
        for i, l in enumerate(labels):
            strata.setdefault(l.value, []).append(i)
    rng = np.random.default_rng(seed)
    train_idx = set()
    for key in sorted(strata, key=str):
        members = strata[key]
        perm = rng.permutation(len(members))
        n_train = int(math.floor(ratio * len(members) + 0.5))
        train_idx.update(members[p] for p in perm[:n_train])
        if labels is not None and (n_train == 0 or n_train == len(members)):
            warnings.warn(f"class {key} absent from the {'train' if n_train == 0 else 'test'} split", stacklevel=2)
    train = [x for i, x in enumerate(ids) if i in train_idx]
    test = [x for i, x in enumerate(ids) if i not in train_idx]
    if not test:
        warnings.warn("empty test split", stacklevel=2)
    return train, test


def accuracy(preds, truth) -> float:
    preds, truth = list(preds), list(truth)
    if len(preds) != len(truth):
        raise ValueError("prediction and truth lengths differ")
    if not truth:
        raise ValueError("nothing to score")
    return sum(p == t for p, t in zip(preds, truth)) / len(truth)
