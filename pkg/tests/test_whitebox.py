import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octabio.biomarkers import BiomarkerRecord
from octabio.phantom import separable_dataset, table_region_dataset
from octabio.whitebox import (
    DL_RULES,
    DT_RULES,
    SVM_RULES,
    UNSATISFIABLE_DL_RULES,
    Condition,
    Cuts,
    DiscretizedFeatures,
    Label,
    Rule,
    RuleSet,
    accuracy,
    apply_cuts,
    best_three_bin_cuts,
    discretize_supervised,
    dl_rules_classify,
    dt_rules_classify,
    ensemble_votes,
    extract_dt_rules,
    parse_label,
    record_features,
    svm_rules_classify,
    table_tree,
    train_decision_tree,
    train_test_split,
)

S, N = Label.SICK, Label.NOT_SICK


def rec(m, t, rid="r"):
    return BiomarkerRecord(rid, m, t, m / t if t else 0.0, 0, 0)


def hand_dt(m, v):
    """Decision-tree table evaluated by hand."""
    if m <= 0.01:
        return N
    if v <= 0.02:
        return S
    return N if m <= 0.03 else S


# -- decision-tree rules ---------------------------------------------------------------

@pytest.mark.parametrize("m, v, label, rule", [
    (0.005, 0.05, N, "R1"), (0.02, 0.015, S, "R2"), (0.04, 0.03, S, "R4"), (0.02, 0.03, N, "R3"),
])
def test_dt_examples(m, v, label, rule):
    assert dt_rules_classify(rec(m, v)) is label
    assert DT_RULES.match(record_features(rec(m, v))).name == rule


def test_dt_grid_exhaustive_and_exclusive():
    grid = np.linspace(0.0, 0.05, 11)  # hits 0.01, 0.02, 0.03 exactly
    regions = set()
    for m, v in itertools.product(grid, grid):
        f = {"mcnv": m, "vessel": v}
        fired = [r for r in DT_RULES if r.fires(f)]
        assert len(fired) == 1
        assert fired[0].label is hand_dt(m, v)
        regions.add(fired[0].name)
    assert regions == {"R1", "R2", "R3", "R4"}


def test_dt_boundaries_closed_on_left():
    assert dt_rules_classify(rec(0.01, 0.01)) is N
    assert dt_rules_classify(rec(0.015, 0.02)) is S
    assert dt_rules_classify(rec(0.03, 0.05)) is N


# -- indicator rules ---------------------------------------------------------------------

# (m_bin, v_bin) -> expected SVM and DL verdicts, enumerated by hand; None abstains
SVM_TABLE = {
    (0, 0): None, (0, 1): None, (0, 2): None,
    (1, 0): None, (1, 1): None, (1, 2): N,
    (2, 0): S, (2, 1): S, (2, 2): S,
}
DL_TABLE = {
    (0, 0): None, (0, 1): S, (0, 2): None,
    (1, 0): None, (1, 1): None, (1, 2): None,
    (2, 0): None, (2, 1): S, (2, 2): None,
}


@pytest.mark.parametrize("bins", sorted(SVM_TABLE))
def test_indicator_rules_enumeration(bins):
    f = DiscretizedFeatures.from_bins(*bins)
    assert svm_rules_classify(f) is SVM_TABLE[bins]
    assert dl_rules_classify(f) is DL_TABLE[bins]
    fired = {r.name for r in DL_RULES if r.fires(f.as_dict())}
    assert not fired & set(UNSATISFIABLE_DL_RULES)


def test_rule_examples():
    assert svm_rules_classify(DiscretizedFeatures(0, 0, 1, 1, 0, 0)) is S
    assert svm_rules_classify(DiscretizedFeatures(0, 1, 0, 0, 0, 1)) is N
    assert svm_rules_classify(DiscretizedFeatures(1, 0, 0, 0, 1, 0)) is None
    assert dl_rules_classify(DiscretizedFeatures(1, 0, 0, 0, 1, 0)) is S
    assert dl_rules_classify(DiscretizedFeatures(0, 0, 1, 0, 1, 0)) is S
    assert dl_rules_classify(DiscretizedFeatures(0, 1, 0, 0, 0, 1)) is None


def test_one_hot_enforced():
    with pytest.raises(ValueError):
        DiscretizedFeatures(1, 1, 0, 0, 1, 0)
    with pytest.raises(ValueError):
        DiscretizedFeatures(0, 0, 0, 0, 1, 0)


# -- discretization -----------------------------------------------------------------------

def entropy_oracle(values, sick):
    """Score every pair of midpoint cuts in plain Python. Among the minimal
    pairs prefer the widest value gaps, then the first in lexicographic order."""
    u = sorted(set(values))
    mids = [(a + b) / 2 for a, b in zip(u, u[1:])]
    gaps = [b - a for a, b in zip(u, u[1:])]
    n = len(values)

    def h(idx):
        if not idx:
            return 0.0
        p = sum(sick[i] for i in idx) / len(idx)
        return -sum(q * math.log2(q) for q in (p, 1 - p) if q > 0)

    scored = []
    for i in range(len(mids)):
        for j in range(i + 1, len(mids)):
            c1, c2 = mids[i], mids[j]
            bins = [[k for k, v in enumerate(values) if v <= c1],
                    [k for k, v in enumerate(values) if c1 < v <= c2],
                    [k for k, v in enumerate(values) if v > c2]]
            e = sum(len(b) * h(b) for b in bins) / n
            scored.append((e, gaps[i] + gaps[j], c1, c2))
    low = min(s[0] for s in scored)
    tied = [s for s in scored if s[0] <= low + 1e-12]
    wide = max(s[1] for s in tied)
    c1, c2 = next((s[2], s[3]) for s in tied if s[1] == wide)
    return c1, c2


def test_three_clusters():
    vals = [0.005, 0.006, 0.02, 0.021, 0.04, 0.041]
    sick = [False, False, True, True, True, True]
    c1, c2 = best_three_bin_cuts(vals, sick)
    assert 0.006 < c1 < 0.02 < 0.021 < c2 < 0.04
    assert (c1, c2) == entropy_oracle(vals, sick)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 12), st.booleans()), min_size=3, max_size=25))
def test_cuts_match_oracle(pairs):
    vals = [v / 100 for v, _ in pairs]
    sick = [s for _, s in pairs]
    if len(set(vals)) < 3:
        return
    assert best_three_bin_cuts(vals, sick) == pytest.approx(entropy_oracle(vals, sick))


def test_separable_reaches_zero_entropy():
    recs, labels = separable_dataset(30)
    cuts = discretize_supervised(recs, labels)
    bins = {}
    for r, l in zip(recs, labels):
        f = apply_cuts(r, cuts)
        key = (f.m_small, f.m_medium, f.m_big)
        bins.setdefault(key, set()).add(l)
    assert all(len(v) == 1 for v in bins.values())


def test_identical_values_fall_back():
    recs = [rec(0.01, 0.02, str(i)) for i in range(5)]
    labels = [S, N, S, N, S]
    with pytest.warns(UserWarning, match="tertile"):
        cuts = discretize_supervised(recs, labels)
    assert cuts.m_cut1 < cuts.m_cut2


def test_apply_cuts():
    cuts = Cuts(0.01, 0.02, 0.015, 0.03)
    assert apply_cuts(rec(0.01, 0.05), cuts) == DiscretizedFeatures(1, 0, 0, 0, 0, 1)
    assert apply_cuts(rec(0.005, 0.031), cuts) == DiscretizedFeatures(1, 0, 0, 0, 0, 1)
    assert apply_cuts(rec(0.015, 0.02), cuts) == DiscretizedFeatures(0, 1, 0, 0, 1, 0)


@settings(max_examples=100)
@given(st.floats(0, 1), st.floats(0, 1))
def test_apply_cuts_one_hot(m, v):
    f = apply_cuts(rec(m, max(m, v)), Cuts(0.2, 0.5, 0.3, 0.6))
    assert f.m_small + f.m_medium + f.m_big == 1 and f.v_small + f.v_medium + f.v_big == 1


def test_cuts_validation():
    with pytest.raises(ValueError):
        Cuts(0.2, 0.1, 0.1, 0.2)
    with pytest.raises(ValueError):
        Cuts(0.1, math.inf, 0.1, 0.2)


# -- ensemble ------------------------------------------------------------------------------

def test_ensemble_examples():
    v = ensemble_votes(rec(0.04, 0.05), DiscretizedFeatures(0, 0, 1, 0, 0, 1))
    assert (v["DT"], v["SVM"], v["DL"], v["ensemble"]) == (S, S, None, S)
    v = ensemble_votes(rec(0.005, 0.05), DiscretizedFeatures(0, 0, 1, 0, 1, 0))
    assert (v["DT"], v["SVM"], v["DL"], v["ensemble"]) == (N, S, S, S)
    v = ensemble_votes(rec(0.005, 0.05), DiscretizedFeatures(1, 0, 0, 1, 0, 0))
    assert (v["DT"], v["SVM"], v["DL"], v["ensemble"]) == (N, None, None, N)


def test_ensemble_tie_goes_to_dt():
    # DT NotSick, SVM Sick, DL abstains: one vote each
    v = ensemble_votes(rec(0.005, 0.05), DiscretizedFeatures(0, 0, 1, 0, 0, 1))
    assert (v["SVM"], v["DL"], v["ensemble"]) == (S, None, N)


# -- tree training ------------------------------------------------------------------------

def gini_split_oracle(records, labels):
    """Best single split by plain weighted Gini over both features."""
    best = None
    for fi, key in enumerate(("mcnv_area_mm2", "total_area_mm2")):
        xs = sorted({getattr(r, key) for r in records})
        for t in [(a + b) / 2 for a, b in zip(xs, xs[1:])]:
            g = 0.0
            for side in (True, False):
                ys = [l for r, l in zip(records, labels) if (getattr(r, key) <= t) is side]
                p = sum(y is S for y in ys) / len(ys)
                g += len(ys) / len(records) * (1 - p * p - (1 - p) ** 2)
            cand = (round(g, 12), t, fi)
            if best is None or cand < best:
                best = cand
    return best


def test_separable_depth_one():
    recs, labels = separable_dataset(40)
    tree = train_decision_tree(recs, labels, 3)
    assert tree.depth == 1
    hi_not = max(r.mcnv_area_mm2 for r, l in zip(recs, labels) if l is N)
    lo_sick = min(r.mcnv_area_mm2 for r, l in zip(recs, labels) if l is S)
    assert tree.root.feature == "mcnv" and hi_not < tree.root.threshold < lo_sick
    g, t, f = gini_split_oracle(recs, labels)
    assert g == 0 and tree.root.threshold == t and f == 0
    assert len(extract_dt_rules(tree)) == 2


@pytest.mark.parametrize("seed", range(3))
def test_root_split_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    recs = [rec(float(m), float(m + d)) for m, d in rng.uniform(0, 0.04, (30, 2))]
    labels = [S if rng.random() < 0.5 else N for _ in recs]
    tree = train_decision_tree(recs, labels, 1)
    _, t, f = gini_split_oracle(recs, labels)
    assert tree.root.threshold == pytest.approx(t) and tree.root.feature == ("mcnv", "vessel")[f]


def test_region_dataset_recovers_table():
    recs, labels = table_region_dataset(60, 40, seed=0)
    tree = train_decision_tree(recs, labels, 3)
    assert accuracy([tree.predict(r) for r in recs], labels) == 1.0
    rules = extract_dt_rules(tree)
    assert len(rules) == 4
    assert tree.root.feature == "mcnv" and 0.008 < tree.root.threshold < 0.0105
    thresholds = sorted(c.value for r in rules for c in r.conditions)
    assert any(0.0185 <= t <= 0.022 for t in thresholds)
    assert any(0.028 <= t <= 0.032 for t in thresholds)


def test_single_label_is_leaf():
    recs = [rec(0.01 * k, 0.02 * k + 0.01) for k in range(1, 5)]
    with pytest.warns(UserWarning):
        tree = train_decision_tree(recs, [S] * 4)
    assert tree.root.is_leaf and tree.root.label is S
    rules = extract_dt_rules(tree)
    assert len(rules) == 1 and rules.classify({"mcnv": 0.5, "vessel": 0.5}) is S


def test_leaf_tie_is_sick():
    tree = train_decision_tree([rec(0.01, 0.02), rec(0.01, 0.02)], [S, N])
    assert tree.root.is_leaf and tree.root.label is S


def test_table_tree_rules():
    rules = extract_dt_rules(table_tree())
    assert len(rules) == 4
    for m, v in itertools.product(np.linspace(0, 0.05, 11), repeat=2):
        f = {"mcnv": m, "vessel": v}
        assert sum(r.fires(f) for r in rules) == 1
        assert rules.classify(f) is hand_dt(m, v)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_extracted_rules_agree_with_tree(seed, depth):
    rng = np.random.default_rng(seed)
    recs = [rec(float(m), float(m + d)) for m, d in rng.uniform(0, 0.04, (20, 2))]
    labels = [S if x else N for x in rng.random(20) < 0.5]
    tree = train_decision_tree(recs, labels, depth)
    rules = extract_dt_rules(tree)
    assert len(rules) == tree.n_leaves and tree.depth <= depth
    for r in recs:
        f = record_features(r)
        assert sum(x.fires(f) for x in rules) == 1
        assert rules.classify(f) is tree.predict(r)


# -- split and scoring ---------------------------------------------------------------------

def test_split_counts():
    ids = [f"i{k}" for k in range(185)]
    labels = [N] * 65 + [S] * 120
    train, test = train_test_split(ids, labels, 0.8, seed=1)
    assert (len(train), len(test)) == (148, 37)
    lab = dict(zip(ids, labels))
    n_train_healthy = sum(lab[i] is N for i in train)
    assert abs(n_train_healthy - 0.8 * 65) <= 1
    assert set(train).isdisjoint(test) and set(train) | set(test) == set(ids)
    assert train_test_split(ids, labels, 0.8, seed=1) == (train, test)
    assert train_test_split(ids, labels, 0.8, seed=2) != (train, test)


def test_split_full_ratio_warns():
    with pytest.warns(UserWarning, match="empty test"):
        train, test = train_test_split(list(range(10)), ratio=1.0)
    assert test == []


def test_accuracy():
    assert accuracy([S, N], [S, N]) == 1.0
    assert accuracy([S, S], [S, N]) == 0.5
    assert round(accuracy([S] * 25 + [N] * 12, [S] * 37), 4) == 0.6757
    with pytest.raises(ValueError):
        accuracy([S], [S, N])


# -- serialization ---------------------------------------------------------------------

@pytest.mark.parametrize("rs", [DT_RULES, SVM_RULES, DL_RULES, extract_dt_rules(table_tree())])
def test_rules_json_roundtrip(tmp_path, rs):
    rs.save(tmp_path / "r.json")
    assert RuleSet.load(tmp_path / "r.json") == rs


def test_rule_validation():
    with pytest.raises(ValueError):
        Condition("mcnv", "=>", 1)
    with pytest.raises(ValueError):
        Condition("area", "<=", 1)
    with pytest.raises(ValueError):
        Rule((), S)


def test_parse_label():
    assert parse_label("Sick") is S and parse_label("not_sick") is N and parse_label(N) is N
    with pytest.raises(ValueError):
        parse_label("maybe")


def test_dt_coverage_error():
    partial = RuleSet((Rule((Condition("mcnv", "<=", 0.01),), N, "DT", "R1"),), "DT")
    with pytest.raises(ValueError):
        dt_rules_classify(rec(0.5, 0.6), partial)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert dt_rules_classify(rec(0.005, 0.6), partial) is N
