"""Root-to-leaf rules of classifier trees, rendered as implication logic."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from .data_io import Dataset
from .model import CLASSIFIER, INF, Ensemble, ModelModeError, Tree

logger = logging.getLogger(__name__)

AND, OR, IMPLIES = "∧", "∨", "⇒"


@dataclass(frozen=True)
class Predicate:
    """``lower < x[feature] <= upper``, or ``x[feature]`` in ``codes``.

    A single path edge sets only one side of the interval.
    """

    feature: int
    lower: float = -INF
    upper: float = INF
    codes: frozenset[int] | None = None

    @property
    def relation(self) -> str:
        if self.codes is not None:
            return "in"
        if self.lower == -INF:
            return "<="
        if self.upper == INF:
            return ">"
        return "range"

    def holds(self, value: float) -> bool:
        if self.codes is not None:
            return value in self.codes
        return self.lower < value <= self.upper

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"feature": self.feature, "relation": self.relation}
        if self.codes is not None:
            out["codes"] = sorted(self.codes)
        else:
            if self.lower != -INF:
                out["lower"] = self.lower
            if self.upper != INF:
                out["upper"] = self.upper
        return out


@dataclass(frozen=True)
class Rule:
    antecedent: tuple[Predicate, ...]
    consequent: int
    support: int = 0
    confidence: float = 0.0
    leaf: int | None = None

    def holds(self, x: Sequence[float]) -> bool:
        return all(p.holds(x[p.feature]) for p in self.antecedent)


def _paths(tree: Tree):
    stack = [(tree.root, ())]
    while stack:
        nid, preds = stack.pop()
        node = tree.nodes[nid]
        if node.is_leaf:
            yield nid, preds
            continue
        stack.append((node.right, preds + (Predicate(node.feature, lower=node.threshold),)))
        stack.append((node.left, preds + (Predicate(node.feature, upper=node.threshold),)))


def extract_rules(tree: Tree | Ensemble, target: int, data: Dataset | None = None) -> list[Rule]:
    """One rule per leaf labelled ``target``, in left-to-right leaf order.

    With ``data`` given, support counts the rows reaching the leaf and
    confidence is the share of them carrying ``target``.
    """
    if isinstance(tree, Ensemble):
        if tree.mode != CLASSIFIER or len(tree.trees) != 1:
            raise ModelModeError("rules require classifier mode")
        tree = tree.trees[0]
    if tree.mode != CLASSIFIER:
        raise ModelModeError("rules require classifier mode")

    reach: dict[int, list[int]] = {}
    if data is not None:
        d = max(data.n_features, tree.n_features)
        for ex in data:
            reach.setdefault(tree.traverse(ex.dense(d)), []).append(ex.label)

    rules = []
    for leaf, preds in _paths(tree):
        if tree.nodes[leaf].label != target:
            continue
        labels = reach.get(leaf, [])
        support = len(labels)
        confidence = sum(1 for y in labels if y == target) / support if support else 0.0
        rules.append(Rule(preds, target, support, confidence, leaf))
    return rules


def simplify(rule: Rule, codebooks: Mapping[int, Sequence[int]] | None = None) -> Rule | None:
    """Merge predicates per feature into one interval.

    Features with a codebook are rewritten as code sets. Returns None when the
    antecedent is unsatisfiable.
    """
    codebooks = codebooks or {}
    bounds: dict[int, list] = {}  # feature -> [lower, upper, codes], in first-seen order
    for p in rule.antecedent:
        cur = bounds.setdefault(p.feature, [-INF, INF, None])
        if p.codes is not None:
            cur[2] = p.codes if cur[2] is None else cur[2] & p.codes
        else:
            cur[0], cur[1] = max(cur[0], p.lower), min(cur[1], p.upper)

    out = []
    for feat, (lower, upper, codes) in bounds.items():
        if codes is None and feat in codebooks:
            codes = codebooks[feat]
        if codes is not None:
            codes = frozenset(c for c in codes if lower < c <= upper)
            if not codes:
                return None
            out.append(Predicate(feat, codes=codes))
        elif lower >= upper:
            return None
        else:
            out.append(Predicate(feat, lower, upper))
    return replace(rule, antecedent=tuple(out))


@dataclass
class FeatureInfo:
    name: str
    codes: dict[int, str] | None = None  # code -> category description
    integer: bool = False


@dataclass
class Schema:
    """Feature names and code dictionaries, indexed by feature position."""

    features: list[FeatureInfo] = field(default_factory=list)
    label_name: str = "label"

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any]) -> Schema:
        """Build from ``{name: {code: description}}``; key order gives the index.

        A value of ``"integer"`` or ``"real"`` marks a numeric feature.
        """
        feats = []
        for name, spec in doc.items():
            if spec == "integer":
                feats.append(FeatureInfo(name, integer=True))
            elif spec == "real" or spec is None:
                feats.append(FeatureInfo(name))
            elif isinstance(spec, Mapping):
                feats.append(FeatureInfo(name, {int(k): str(v) for k, v in spec.items()}, integer=True))
            else:
                raise ValueError(f"schema entry for {name!r} must be a code map, 'integer' or 'real'")
        return cls(feats)

    @classmethod
    def loads(cls, text: str) -> Schema:
        return cls.from_mapping(json.loads(text))

    def to_mapping(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in self.features:
            if f.codes is not None:
                out[f.name] = {str(k): v for k, v in sorted(f.codes.items())}
            else:
                out[f.name] = "integer" if f.integer else "real"
        return out

    def info(self, feature: int) -> FeatureInfo | None:
        return self.features[feature] if feature < len(self.features) else None

    def codebooks(self) -> dict[int, list[int]]:
        return {i: sorted(f.codes) for i, f in enumerate(self.features) if f.codes}


def _fmt(v: float) -> str:
    return repr(int(v)) if float(v).is_integer() else repr(float(v))


def _render_predicate(p: Predicate, schema: Schema | None) -> str:
    info = schema.info(p.feature) if schema else None
    if info is None:
        if schema is not None:
            logger.warning("feature %d missing from schema; rendering by index", p.feature)
        name, integer = f"f{p.feature}", False
    else:
        name, integer = info.name, info.integer
    if p.codes is not None:
        atoms = [f"({name}{IMPLIES}{name}_{c})" for c in sorted(p.codes)]
        return atoms[0] if len(atoms) == 1 else "(" + f" {OR} ".join(atoms) + ")"
    parts = []
    if p.lower != -INF:
        parts.append(f"{name} ≥ {_fmt(math.floor(p.lower) + 1)}" if integer else f"{name} > {_fmt(p.lower)}")
    if p.upper != INF:
        parts.append(f"{name} ≤ {_fmt(math.floor(p.upper))}" if integer else f"{name} ≤ {_fmt(p.upper)}")
    return "(" + f" {AND} ".join(parts) + ")"


def render(rule: Rule, schema: Schema | None = None) -> str:
    """Implication string such as ``((pba⇒pba_0) ∨ (pba⇒pba_1)) ⇒ (label⇒label_yes)``."""
    label = schema.label_name if schema else "label"
    outcome = "yes" if rule.consequent == 1 else "no" if rule.consequent == 0 else str(rule.consequent)
    rhs = f"({label}{IMPLIES}{label}_{outcome})"
    atoms = [_render_predicate(p, schema) for p in rule.antecedent]
    if not atoms:
        lhs = "true"
    elif len(atoms) == 1:
        lhs = atoms[0]
    else:
        lhs = "(" + f" {AND} ".join(atoms) + ")"
    return f"{lhs} {IMPLIES} {rhs}"


def rules_to_dicts(rules: Sequence[Rule], schema: Schema | None = None) -> list[dict[str, Any]]:
    return [
        {
            "antecedent": [p.to_dict() for p in r.antecedent],
            "consequent": r.consequent,
            "support": r.support,
            "confidence": r.confidence,
            "leaf": r.leaf,
            "rendered": render(r, schema),
        }
        for r in rules
    ]
