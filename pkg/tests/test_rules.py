import itertools
import logging
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _gen import random_tree
from treecert.data_io import Dataset, Example
from treecert.fixtures import TREE_B_L1, TREE_B_L2, TREE_B_L3, stump_pair, tree_b
from treecert.model import CLASSIFIER, INF, ModelModeError, Node, Tree
from treecert.rules import Predicate, Rule, Schema, extract_rules, render, rules_to_dicts, simplify

CODES = list(range(0, 11))


def coded_tree(seed, d=3, depth=4):
    """Classifier tree whose thresholds sit between integer codes 0..10."""
    t = random_tree(np.random.default_rng(seed), d, depth, mode=CLASSIFIER)
    nodes = [n if n.is_leaf else replace(n, threshold=round(n.threshold * 10) + 0.5) for n in t.nodes.values()]
    return Tree(nodes, mode=CLASSIFIER)


class TestExtract:
    def test_tree_b_target_1(self):
        rules = extract_rules(tree_b(), 1)
        assert [r.leaf for r in rules] == [TREE_B_L2, TREE_B_L3]
        assert rules[0].antecedent == (Predicate(0, upper=0.5), Predicate(1, lower=0.3))
        assert rules[1].antecedent == (Predicate(0, lower=0.5),)
        assert all(r.consequent == 1 for r in rules)

    def test_tree_b_target_0(self):
        (rule,) = extract_rules(tree_b(), 0)
        assert rule.leaf == TREE_B_L1
        assert rule.antecedent == (Predicate(0, upper=0.5), Predicate(1, upper=0.3))

    def test_absent_target(self):
        assert extract_rules(tree_b(), 7) == []

    def test_single_leaf(self):
        (rule,) = extract_rules(Tree([Node(0, label=1)], mode=CLASSIFIER), 1)
        assert rule.antecedent == ()
        assert render(rule) == "true ⇒ (label⇒label_yes)"

    def test_additive_rejected(self):
        with pytest.raises(ModelModeError, match="classifier mode"):
            extract_rules(stump_pair(), 1)

    def test_support_and_confidence(self):
        data = Dataset(
            [Example({0: 0.9}, 1), Example({0: 0.8}, 0), Example({0: 0.7}, 1), Example({0: 0.1, 1: 0.9}, 1)], 2
        )
        r2, r3 = extract_rules(tree_b(), 1, data)
        assert (r2.support, r2.confidence) == (1, 1.0)
        assert (r3.support, r3.confidence) == (3, pytest.approx(2 / 3))

    def test_to_dicts(self):
        (d,) = rules_to_dicts(extract_rules(tree_b(), 0))
        assert d["antecedent"] == [
            {"feature": 0, "relation": "<=", "upper": 0.5},
            {"feature": 1, "relation": "<=", "upper": 0.3},
        ]
        assert d["rendered"] == "((f0 ≤ 0.5) ∧ (f1 ≤ 0.3)) ⇒ (label⇒label_no)"


class TestSimplify:
    def test_merge_upper(self):
        r = simplify(Rule((Predicate(0, upper=5), Predicate(0, upper=3)), 1))
        assert r.antecedent == (Predicate(0, upper=3),)

    def test_contradiction_dropped(self):
        assert simplify(Rule((Predicate(0, lower=1), Predicate(0, upper=1)), 1)) is None

    def test_codebook(self):
        cb = {0: [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 99]}
        r = simplify(Rule((Predicate(0, upper=2.5),), 1), cb)
        assert r.antecedent == (Predicate(0, codes=frozenset({1, 2})),)

    def test_codebook_empty(self):
        assert simplify(Rule((Predicate(0, lower=99),), 1), {0: [1, 2, 99]}) is None

    def test_distinct_features(self):
        r = simplify(Rule((Predicate(0, upper=5), Predicate(1, lower=2), Predicate(0, lower=1)), 1))
        assert [p.feature for p in r.antecedent] == [0, 1]
        assert r.antecedent[0] == Predicate(0, 1, 5)


class TestRender:
    def test_rule_one_codeset(self):
        schema = Schema.from_mapping({"pba": {str(c): f"action {c}" for c in range(9)}})
        rule = Rule((Predicate(0, codes=frozenset(range(5))),), 1)
        assert render(rule, schema) == (
            "((pba⇒pba_0) ∨ (pba⇒pba_1) ∨ (pba⇒pba_2) ∨ (pba⇒pba_3) ∨ (pba⇒pba_4)) ⇒ (label⇒label_yes)"
        )

    def test_integer_lower(self):
        schema = Schema.from_mapping({"vno": "integer"})
        assert render(Rule((Predicate(0, lower=1.5),), 1), schema) == "(vno ≥ 2) ⇒ (label⇒label_yes)"

    def test_conjunction(self):
        schema = Schema.from_mapping({"vno": "integer", "speed": "real"})
        rule = Rule((Predicate(0, lower=1.5), Predicate(1, upper=45.5)), 0)
        assert render(rule, schema) == "((vno ≥ 2) ∧ (speed ≤ 45.5)) ⇒ (label⇒label_no)"

    def test_missing_feature_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="treecert.rules"):
            text = render(Rule((Predicate(3, upper=1.0),), 1), Schema.from_mapping({"a": "real"}))
        assert text == "(f3 ≤ 1) ⇒ (label⇒label_yes)"
        assert "missing from schema" in caplog.text

    def test_schema_round_trip(self):
        doc = {"c": {"1": "single", "99": "other"}, "n": "integer", "r": "real"}
        assert Schema.from_mapping(doc).to_mapping() == doc

    def test_bad_schema(self):
        with pytest.raises(ValueError):
            Schema.from_mapping({"c": 3})


grid_points = list(itertools.product(CODES, repeat=3))


@given(st.integers(0, 2**32 - 1))
def test_rules_sound_and_complete(seed):
    tree = coded_tree(seed)
    rules = extract_rules(tree, 0) + extract_rules(tree, 1)
    for x in grid_points[::7]:
        hits = [r for r in rules if r.holds(x)]
        assert len(hits) == 1
        assert hits[0].leaf == tree.traverse(x)


@given(st.integers(0, 2**32 - 1))
def test_simplify_preserves_semantics(seed):
    tree = coded_tree(seed)
    cb = {f: CODES for f in range(3)}
    for rule in extract_rules(tree, 1) + extract_rules(tree, 0):
        simple = simplify(rule, cb)
        for x in grid_points[::5]:
            assert rule.holds(x) == (simple is not None and simple.holds(x))
        if simple is not None:
            feats = [p.feature for p in simple.antecedent]
            assert len(feats) == len(set(feats))
            assert all(p.codes for p in simple.antecedent)


@given(st.integers(0, 2**32 - 1))
def test_simplify_without_codebook_keeps_intervals(seed):
    tree = coded_tree(seed)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 12, size=(40, 3))
    for rule in extract_rules(tree, 1):
        simple = simplify(rule)
        if simple is None:
            # unreachable leaf: the path is contradictory
            assert tree.leaf_boxes(3)[rule.leaf].is_empty
            continue
        for p in simple.antecedent:
            assert p.lower < p.upper and (p.lower > -INF or p.upper < INF)
        for x in pts:
            assert rule.holds(x) == simple.holds(x)
