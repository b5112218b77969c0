"""Tree and ensemble representations, model documents, prediction and leaf boxes.

Boxes are products of half-open intervals ``(lower, upper]``. A sample goes
left at an internal node iff ``x[feature] <= threshold``, so every tie in
traversal, box construction and intersection follows from that one rule.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

INF = math.inf

CLASSIFIER = "classifier"
ADDITIVE = "additive"
MODES = (CLASSIFIER, ADDITIVE)


class ModelError(ValueError):
    """Base class for invalid model documents or structures."""


class ModelFormatError(ModelError):
    """The document does not follow the model schema."""


class ModelStructureError(ModelError):
    """Dangling, duplicate or cyclic node references."""


class ModelModeError(ModelError):
    """Leaf kinds disagree with the declared mode, or the mode is unsupported."""


class UnreachableLeafWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Node:
    node_id: int
    feature: int | None = None
    threshold: float | None = None
    left: int | None = None
    right: int | None = None
    label: int | None = None
    value: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``(lower[t], upper[t]]`` for every dimension ``t``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @classmethod
    def full(cls, n_features: int) -> Box:
        return cls((-INF,) * n_features, (INF,) * n_features)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def is_empty(self) -> bool:
        return any(lo >= hi for lo, hi in zip(self.lower, self.upper))

    def contains(self, x: Sequence[float]) -> bool:
        return all(lo < v <= hi for lo, v, hi in zip(self.lower, x, self.upper))

    def clip(self, feature: int, go_left: bool, threshold: float) -> Box:
        """Child box of a split on ``feature`` at ``threshold``."""
        lower, upper = list(self.lower), list(self.upper)
        if go_left:
            upper[feature] = min(upper[feature], threshold)
        else:
            lower[feature] = max(lower[feature], threshold)
        return Box(tuple(lower), tuple(upper))

    def intersect(self, other: Box) -> Box:
        return box_intersect(self, other)

    def is_subset(self, other: Box) -> bool:
        return all(
            a_lo >= b_lo and a_hi <= b_hi
            for a_lo, a_hi, b_lo, b_hi in zip(self.lower, self.upper, other.lower, other.upper)
        )


def box_intersect(a: Box, b: Box) -> Box:
    """Per-dimension ``(max(l), min(r)]``; check ``is_empty`` on the result."""
    if a.dim != b.dim:
        raise ValueError(f"box dimension mismatch: {a.dim} != {b.dim}")
    return Box(
        tuple(max(p, q) for p, q in zip(a.lower, b.lower)),
        tuple(min(p, q) for p, q in zip(a.upper, b.upper)),
    )


def boxes_intersect(a: Box, b: Box) -> bool:
    """Emptiness test without building the intersection."""
    for a_lo, a_hi, b_lo, b_hi in zip(a.lower, a.upper, b.lower, b.upper):
        if max(a_lo, b_lo) >= min(a_hi, b_hi):
            return False
    return True


class Tree:
    """Binary decision tree; immutable after construction."""

    def __init__(self, nodes: Mapping[int, Node] | Iterable[Node], root: int = 0, mode: str = CLASSIFIER):
        if mode not in MODES:
            raise ModelModeError(f"unknown mode {mode!r}")
        if not isinstance(nodes, Mapping):
            node_list = list(nodes)
            nodes = {n.node_id: n for n in node_list}
            if len(nodes) != len(node_list):
                raise ModelStructureError("duplicate node id")
        self._nodes: dict[int, Node] = dict(nodes)
        self.root = root
        self.mode = mode
        self._validate()
        self._boxes: dict[int, dict[int, Box]] = {}

    @property
    def nodes(self) -> Mapping[int, Node]:
        return self._nodes

    def _validate(self) -> None:
        if self.root not in self._nodes:
            raise ModelStructureError(f"root {self.root} is not a node")
        seen: set[int] = set()
        stack = [self.root]
        while stack:
            nid = stack.pop()
            if nid in seen:
                raise ModelStructureError(f"node {nid} reached twice (cycle or shared child)")
            seen.add(nid)
            node = self._nodes[nid]
            if node.is_leaf:
                if self.mode == CLASSIFIER and node.label is None:
                    raise ModelModeError(f"leaf {nid} has no label in classifier mode")
                if self.mode == ADDITIVE and node.value is None:
                    raise ModelModeError(f"leaf {nid} has no value in additive mode")
                continue
            if node.feature < 0:
                raise ModelStructureError(f"node {nid} has negative feature index")
            if node.left == node.right:
                raise ModelStructureError(f"node {nid} has identical children")
            for child in (node.left, node.right):
                if child not in self._nodes:
                    raise ModelStructureError(f"node {nid} references missing child {child}")
                stack.append(child)
        if len(seen) != len(self._nodes):
            orphans = sorted(set(self._nodes) - seen)
            raise ModelStructureError(f"nodes unreachable from root: {orphans}")

    def __len__(self) -> int:
        return len(self._nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tree):
            return NotImplemented
        return self.root == other.root and self.mode == other.mode and self._nodes == other._nodes

    def __repr__(self) -> str:
        return f"Tree(mode={self.mode!r}, nodes={len(self)}, leaves={len(self.leaf_ids())})"

    def leaf_ids(self) -> list[int]:
        return [nid for nid, n in sorted(self._nodes.items()) if n.is_leaf]

    def internal_ids(self) -> list[int]:
        return [nid for nid, n in sorted(self._nodes.items()) if not n.is_leaf]

    @property
    def n_features(self) -> int:
        """Smallest dimension that covers every split feature."""
        feats = [n.feature for n in self._nodes.values() if not n.is_leaf]
        return max(feats) + 1 if feats else 0

    def depth(self) -> int:
        def walk(nid: int) -> int:
            node = self._nodes[nid]
            if node.is_leaf:
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def traverse(self, x: Sequence[float]) -> int:
        node = self._nodes[self.root]
        while not node.is_leaf:
            nxt = node.left if x[node.feature] <= node.threshold else node.right
            node = self._nodes[nxt]
        return node.node_id

    def leaf_boxes(self, n_features: int | None = None) -> dict[int, Box]:
        d = self.n_features if n_features is None else n_features
        if d not in self._boxes:
            self._boxes[d] = compute_leaf_boxes(self, d)
        return self._boxes[d]


@dataclass(frozen=True)
class Ensemble:
    """Additive ensemble, or a single classifier tree wrapped as one.

    The raw score is ``base_score + sum(leaf values)``; label 1 iff score >= 0.
    """

    trees: tuple[Tree, ...]
    n_features: int
    base_score: float = 0.0
    mode: str = ADDITIVE

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if self.mode not in MODES:
            raise ModelModeError(f"unknown mode {self.mode!r}")
        for i, tree in enumerate(self.trees):
            if tree.mode != self.mode:
                raise ModelModeError(f"tree {i} is {tree.mode}, ensemble is {self.mode}")
            if tree.n_features > self.n_features:
                raise ModelStructureError(
                    f"tree {i} splits on feature {tree.n_features - 1} but n_features={self.n_features}"
                )

    def __len__(self) -> int:
        return len(self.trees)



def as_ensemble(model: Tree | Ensemble, n_features: int | None = None) -> Ensemble:
    if isinstance(model, Ensemble):
        return model
    d = model.n_features if n_features is None else max(n_features, model.n_features)
    return Ensemble((model,), n_features=d, mode=model.mode)


def predict(model: Tree | Ensemble, x: Sequence[float]) -> tuple[int, float]:
    """Return ``(label, score)`` for a dense sample ``x``.

    For a classifier tree the score is the label itself.
    """
    ens = as_ensemble(model)
    if ens.mode == CLASSIFIER:
        if len(ens.trees) != 1:
            raise ModelModeError("classifier mode supports exactly one tree")
        tree = ens.trees[0]
        label = tree.nodes[tree.traverse(x)].label
        return label, float(label)
    score = ens.base_score
    for tree in ens.trees:
        score += tree.nodes[tree.traverse(x)].value
    return (1 if score >= 0 else 0), score


def compute_leaf_boxes(tree: Tree, n_features: int | None = None) -> dict[int, Box]:
    """Box of every leaf, keyed by leaf id.

    Leaves behind a split whose threshold lies outside the parent interval get
    an empty box and are reported with an ``UnreachableLeafWarning``.
    """
    d = tree.n_features if n_features is None else n_features
    if d < tree.n_features:
        raise ValueError(f"n_features={d} is smaller than the tree's feature range {tree.n_features}")
    boxes: dict[int, Box] = {}
    stack = [(tree.root, Box.full(d))]
    while stack:
        nid, box = stack.pop()
        node = tree.nodes[nid]
        if node.is_leaf:
            boxes[nid] = box
            continue
        stack.append((node.right, box.clip(node.feature, False, node.threshold)))
        stack.append((node.left, box.clip(node.feature, True, node.threshold)))
    empty = sorted(nid for nid, b in boxes.items() if b.is_empty)
    if empty:
        warnings.warn(f"unreachable leaves (empty boxes): {empty}", UnreachableLeafWarning, stacklevel=2)
    return dict(sorted(boxes.items()))


# ---------------------------------------------------------------------------
# model documents

_TOP_KEYS = {"mode", "n_features", "base_score", "trees"}
_TREE_KEYS = {"nodes", "root"}
_INTERNAL_KEYS = {"id", "feature", "threshold", "left", "right"}


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _parse_node(raw: Any, path: str) -> Node:
    if not isinstance(raw, dict):
        raise ModelFormatError(f"{path}: node must be an object")
    keys = set(raw)
    if "id" not in raw or not _is_int(raw["id"]):
        raise ModelFormatError(f"{path}: missing or non-integer 'id'")
    if keys == _INTERNAL_KEYS:
        for k in ("feature", "left", "right"):
            if not _is_int(raw[k]):
                raise ModelFormatError(f"{path}.{k}: expected integer")
        if not _is_num(raw["threshold"]) or not math.isfinite(raw["threshold"]):
            raise ModelFormatError(f"{path}.threshold: expected finite number")
        return Node(raw["id"], raw["feature"], float(raw["threshold"]), raw["left"], raw["right"])
    if keys == {"id", "label"}:
        if not _is_int(raw["label"]):
            raise ModelFormatError(f"{path}.label: expected integer")
        return Node(raw["id"], label=raw["label"])
    if keys == {"id", "value"}:
        if not _is_num(raw["value"]):
            raise ModelFormatError(f"{path}.value: expected number")
        return Node(raw["id"], value=float(raw["value"]))
    raise ModelFormatError(f"{path}: unexpected node fields {sorted(keys)}")


def load_ensemble(document: str | bytes | Mapping[str, Any]) -> Ensemble:
    """Parse and validate a model document (JSON text or an already-decoded mapping)."""
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"$: invalid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise ModelFormatError("$: top level must be an object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ModelFormatError(f"$: unknown fields {sorted(unknown)}")
    for key in ("mode", "n_features", "trees"):
        if key not in doc:
            raise ModelFormatError(f"$.{key}: missing")
    mode = doc["mode"]
    if mode not in MODES:
        raise ModelFormatError(f"$.mode: expected one of {MODES}, got {mode!r}")
    if not _is_int(doc["n_features"]) or doc["n_features"] < 0:
        raise ModelFormatError("$.n_features: expected non-negative integer")
    base = doc.get("base_score", 0.0)
    if not _is_num(base):
        raise ModelFormatError("$.base_score: expected number")
    if not isinstance(doc["trees"], list):
        raise ModelFormatError("$.trees: expected list")

    trees = []
    for ti, raw_tree in enumerate(doc["trees"]):
        path = f"$.trees[{ti}]"
        if not isinstance(raw_tree, dict):
            raise ModelFormatError(f"{path}: tree must be an object")
        unknown = set(raw_tree) - _TREE_KEYS
        if unknown:
            raise ModelFormatError(f"{path}: unknown fields {sorted(unknown)}")
        if not isinstance(raw_tree.get("nodes"), list) or not _is_int(raw_tree.get("root")):
            raise ModelFormatError(f"{path}: needs 'nodes' list and integer 'root'")
        nodes = [_parse_node(n, f"{path}.nodes[{ni}]") for ni, n in enumerate(raw_tree["nodes"])]
        kinds = {"label" if n.label is not None else "value" for n in nodes if n.is_leaf}
        if len(kinds) > 1:
            raise ModelModeError(f"{path}: mixes label and value leaves")
        if kinds and kinds != {"label" if mode == CLASSIFIER else "value"}:
            raise ModelModeError(f"{path}: {kinds.pop()} leaves in {mode} mode")
        try:
            trees.append(Tree(nodes, root=raw_tree["root"], mode=mode))
        except ModelStructureError as exc:
            raise ModelStructureError(f"{path}: {exc}") from exc
    return Ensemble(tuple(trees), n_features=doc["n_features"], base_score=float(base), mode=mode)


def _node_doc(node: Node) -> dict[str, Any]:
    if not node.is_leaf:
        return {
            "id": node.node_id,
            "feature": node.feature,
            "threshold": node.threshold,
            "left": node.left,
            "right": node.right,
        }
    if node.label is not None:
        return {"id": node.node_id, "label": node.label}
    return {"id": node.node_id, "value": node.value}


def ensemble_to_dict(model: Tree | Ensemble) -> dict[str, Any]:
    ens = as_ensemble(model)
    return {
        "mode": ens.mode,
        "n_features": ens.n_features,
        "base_score": ens.base_score,
        "trees": [
            {"nodes": [_node_doc(t.nodes[nid]) for nid in sorted(t.nodes)], "root": t.root}
            for t in ens.trees
        ],
    }


def dump_ensemble(model: Tree | Ensemble) -> str:
    return json.dumps(ensemble_to_dict(model), sort_keys=True, indent=2) + "\n"
