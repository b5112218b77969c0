"""Certified L-infinity robustness of decision trees and additive tree ensembles.

A leaf is reachable from ``x`` within radius ``eps`` when the infimum distance
from ``x`` to its box is at most ``eps``. Single classifier trees are verified
exactly by enumerating leaves. Ensembles get a sound lower bound on the worst
margin inside the ball: reachable leaves of consecutive trees are merged into
cliques (tuples with a common box) level by level, and the last level is
aggregated either by summing per-part minima or by a chain dynamic program.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Callable, Mapping, Sequence

import jsonschema

from .data_io import Dataset
from .model import (
    CLASSIFIER,
    INF,
    Box,
    Ensemble,
    Tree,
    as_ensemble,
    box_intersect,
    boxes_intersect,
    predict,
)

logger = logging.getLogger(__name__)

DEFAULT_NUM_POINTS = 1000
ORACLE_CAP = 10**6


class VerificationError(RuntimeError):
    pass


class OracleCapExceeded(VerificationError):
    pass


@dataclass(frozen=True)
class VerifyParams:
    eps_init: float = 0.3
    max_search: int = 10
    max_level: int = 1
    max_clique: int = 2
    dp: int = 0

    def __post_init__(self):
        if not (self.eps_init > 0 and math.isfinite(self.eps_init)):
            raise ValueError(f"eps_init must be a positive finite number, got {self.eps_init}")
        if self.max_search < 1:
            raise ValueError("max_search must be >= 1")
        if self.max_level < 1:
            raise ValueError("max_level must be >= 1")
        if self.max_clique < 2:
            raise ValueError("max_clique must be >= 2")
        if self.dp not in (0, 1):
            raise ValueError("dp must be 0 or 1")


# ---------------------------------------------------------------------------
# per-leaf perturbation


def leaf_perturbation(x: Sequence[float], box: Box) -> tuple[float, ...]:
    """Smallest per-dimension move that brings ``x`` into ``box``.

    Zero inside ``(l, r]``, ``x - r`` above it and ``l - x`` at or below ``l``.
    """
    if box.is_empty:
        raise ValueError("perturbation towards an empty box")
    out = []
    for v, lo, hi in zip(x, box.lower, box.upper):
        if v > hi:
            out.append(v - hi)
        elif v <= lo:
            out.append(lo - v)
        else:
            out.append(0.0)
    return tuple(out)


def perturbation_norm(x: Sequence[float], box: Box) -> float:
    """``max`` of :func:`leaf_perturbation`, without the emptiness check."""
    worst = 0.0
    for v, lo, hi in zip(x, box.lower, box.upper):
        if v > hi:
            d = v - hi
        elif v <= lo:
            d = lo - v
        else:
            continue
        if d > worst:
            worst = d
    return worst


def verify_tree_exact(tree: Tree, x: Sequence[float], y0: int, n_features: int | None = None) -> float:
    """Minimal L-infinity perturbation that moves ``x`` to a leaf not labelled ``y0``.

    ``0`` when ``x`` is already misclassified, ``inf`` when no such leaf exists.
    """
    if tree.mode != CLASSIFIER:
        raise ValueError("exact single-tree verification needs a classifier tree")
    d = len(x) if n_features is None else n_features
    if tree.nodes[tree.traverse(x)].label != y0:
        return 0.0
    best = INF
    for leaf, box in tree.leaf_boxes(d).items():
        if tree.nodes[leaf].label != y0 and not box.is_empty:
            best = min(best, perturbation_norm(x, box))
    return best


# ---------------------------------------------------------------------------
# clique bound for additive ensembles


@dataclass(frozen=True)
class PseudoNode:
    value: float  # margin contribution, oriented so smaller is worse for the true class
    box: Box
    members: tuple[tuple[int, int], ...]  # (tree index, leaf id)


def _orientation(y0: int) -> float:
    return 1.0 if y0 == 1 else -1.0


def reachable_leaves(
    tree: Tree, x: Sequence[float], eps: float, y0: int = 1, *, tree_index: int = 0, n_features: int | None = None
) -> list[PseudoNode]:
    """Leaves of an additive tree whose box lies within ``eps`` of ``x``."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    d = len(x) if n_features is None else n_features
    sign = _orientation(y0)
    return [
        PseudoNode(sign * tree.nodes[leaf].value, box, ((tree_index, leaf),))
        for leaf, box in tree.leaf_boxes(d).items()
        if not box.is_empty and perturbation_norm(x, box) <= eps
    ]


def _cliques(group: Sequence[Sequence[PseudoNode]], x: Sequence[float], eps: float) -> list[PseudoNode]:
    """All tuples, one node per part, whose boxes share a point within ``eps`` of ``x``."""
    out: list[PseudoNode] = []

    def extend(i: int, value: float, box: Box | None, members: tuple) -> None:
        if i == len(group):
            out.append(PseudoNode(value, box, members))
            return
        for node in group[i]:
            merged = node.box if box is None else box_intersect(box, node.box)
            if merged.is_empty or perturbation_norm(x, merged) > eps:
                continue
            extend(i + 1, value + node.value, merged, members + node.members)

    extend(0, 0.0, None, ())
    return out


def _chain_min(parts: Sequence[Sequence[PseudoNode]]) -> float:
    """Minimum total value over one node per part, adjacent parts' boxes intersecting."""
    prev = [(n, n.value) for n in parts[0]]
    for part in parts[1:]:
        cur = []
        for n in part:
            best = min((v for m, v in prev if boxes_intersect(m.box, n.box)), default=INF)
            cur.append((n, n.value + best))
        prev = cur
    return min(v for _, v in prev)


def clique_parts(
    ensemble: Ensemble, x: Sequence[float], y0: int, eps: float, params: VerifyParams
) -> list[list[PseudoNode]]:
    """Reachable leaves per tree, merged ``max_level`` times in groups of ``max_clique``."""
    parts = [
        reachable_leaves(t, x, eps, y0, tree_index=i, n_features=ensemble.n_features)
        for i, t in enumerate(ensemble.trees)
    ]
    for _ in range(params.max_level):
        if len(parts) <= 1:
            break
        parts = [_cliques(parts[i : i + params.max_clique], x, eps) for i in range(0, len(parts), params.max_clique)]
    if any(not p for p in parts):
        # the leaves x itself reaches always form a clique
        raise VerificationError("a part has no reachable node")
    return parts


def ensemble_margin_bound(
    ensemble: Ensemble, x: Sequence[float], y0: int, eps: float, params: VerifyParams
) -> float:
    """Lower bound on the worst margin over the closed ball of radius ``eps``.

    The margin is the raw score when ``y0 == 1`` and its negation otherwise.
    """
    if ensemble.mode != "additive":
        raise ValueError("margin bounds need an additive ensemble")
    if len(x) != ensemble.n_features:
        raise ValueError(f"sample has {len(x)} features, model expects {ensemble.n_features}")
    base = _orientation(y0) * ensemble.base_score
    if not ensemble.trees:
        return base
    parts = clique_parts(ensemble, x, y0, eps, params)
    if params.dp:
        return base + _chain_min(parts)
    total = 0.0
    for part in parts:
        total += min(n.value for n in part)
    return base + total


def _probe(model: Tree | Ensemble, x: Sequence[float], y0: int, params: VerifyParams) -> Callable[[float], bool]:
    ens = as_ensemble(model, len(x))
    if ens.mode == CLASSIFIER:
        rstar = verify_tree_exact(ens.trees[0], x, y0, ens.n_features)
        return lambda eps: rstar > eps
    return lambda eps: ensemble_margin_bound(ens, x, y0, eps, params) > 0


def verify_at(model: Tree | Ensemble, x: Sequence[float], y0: int, eps: float, params: VerifyParams) -> bool:
    """Whether no sample within ``eps`` of ``x`` can be misclassified.

    Zero margin counts as not robust.
    """
    return _probe(model, x, y0, params)(eps)


@dataclass(frozen=True)
class Certificate:
    index: int
    correct: bool
    lower_bound: float
    verified_at_eps_init: bool
    searches_used: int = 0


def certify_example(
    model: Tree | Ensemble, x: Sequence[float], y0: int, params: VerifyParams, index: int = 0
) -> Certificate:
    """Largest radius verified within ``max_search`` probes.

    Starts at ``eps_init``, doubles after successes or halves after failures
    until the other outcome appears, then bisects the bracket.
    """
    if predict(model, x)[0] != y0:
        return Certificate(index, False, 0.0, False, 0)
    probe = _probe(model, x, y0, params)
    eps = params.eps_init
    ok = probe(eps)
    at_init = ok
    good = eps if ok else None
    bad = None if ok else eps
    calls = 1
    while calls < params.max_search:
        if bad is None:
            eps = good * 2.0
        elif good is None:
            eps = bad / 2.0
        else:
            eps = (good + bad) / 2.0
        if probe(eps):
            good = eps
        else:
            bad = eps
        calls += 1
    return Certificate(index, True, good if good is not None else 0.0, at_init, calls)


@dataclass
class Report:
    certificates: list[Certificate]
    params: VerifyParams
    model: str | None = None
    data: str | None = None
    average_bound: float = field(init=False)
    verified_error: float = field(init=False)

    def __post_init__(self):
        n = len(self.certificates)
        if n == 0:
            raise VerificationError("report over zero points")
        self.average_bound = math.fsum(c.lower_bound for c in self.certificates) / n
        failed = sum(1 for c in self.certificates if not (c.correct and c.verified_at_eps_init))
        self.verified_error = failed / n

    @property
    def num_points(self) -> int:
        return len(self.certificates)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "params": asdict(self.params),
            "num_points": self.num_points,
            "average_bound": self.average_bound,
            "verified_error": self.verified_error,
            "certificates": [
                {
                    "index": c.index,
                    "correct": c.correct,
                    "lower_bound": c.lower_bound,
                    "verified_at_eps_init": c.verified_at_eps_init,
                }
                for c in self.certificates
            ],
        }
        if self.model is not None:
            out["model"] = self.model
        if self.data is not None:
            out["data"] = self.data
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def summary(self) -> str:
        return f"avg bound = {self.average_bound:.6g}, verified error = {self.verified_error:.6g}"


@lru_cache(maxsize=1)
def report_schema() -> dict[str, Any]:
    """JSON schema that every serialized :class:`Report` satisfies."""
    return json.loads(resources.files("treecert.data").joinpath("report.schema.json").read_text())


def validate_report(doc: Mapping[str, Any]) -> None:
    """Raise :class:`VerificationError` if ``doc`` does not match the report schema."""
    try:
        jsonschema.validate(doc, report_schema())
    except jsonschema.ValidationError as exc:
        path = "$" + "".join(f"[{p!r}]" for p in exc.absolute_path)
        raise VerificationError(f"report fails its schema at {path}: {exc.message}") from None


def run_verification(
    model: Tree | Ensemble,
    dataset: Dataset,
    params: VerifyParams,
    num_points: int = DEFAULT_NUM_POINTS,
    *,
    model_id: str | None = None,
    data_id: str | None = None,
) -> Report:
    """Certify the first ``num_points`` examples in file order."""
    if len(dataset) == 0:
        raise VerificationError("empty dataset")
    if num_points < 1:
        raise ValueError("num_points must be >= 1")
    d = max(dataset.n_features, as_ensemble(model).n_features)
    model = as_ensemble(model, d)
    if model.n_features < d:
        model = Ensemble(model.trees, d, model.base_score, model.mode)
    certs = []
    for i, ex in enumerate(dataset.examples[:num_points]):
        cert = certify_example(model, ex.dense(d), ex.label, params, index=i)
        logger.debug("point %d: correct=%s bound=%g", i, cert.correct, cert.lower_bound)
        certs.append(cert)
    return Report(certs, params, model_id, data_id)


# ---------------------------------------------------------------------------
# exhaustive oracle (small models only)


def feasible_tuples(ensemble: Ensemble, cap: int = ORACLE_CAP) -> list[tuple[float, Box]]:
    """Every cross-tree leaf tuple with a nonempty common box, as ``(score, box)``."""
    d = ensemble.n_features
    leaf_lists = []
    size = 1
    for t in ensemble.trees:
        leaves = [(t.nodes[i].value if t.nodes[i].value is not None else t.nodes[i].label, b)
                  for i, b in t.leaf_boxes(d).items() if not b.is_empty]
        leaf_lists.append(leaves)
        size *= max(1, len(leaves))
    if size > cap:
        raise OracleCapExceeded(f"{size} leaf tuples exceed the oracle cap {cap}")
    out = []
    stack = [(0, ensemble.base_score, Box.full(d))]
    while stack:
        i, score, box = stack.pop()
        if i == len(leaf_lists):
            out.append((score, box))
            continue
        for value, leaf_box in leaf_lists[i]:
            merged = box_intersect(box, leaf_box)
            if not merged.is_empty:
                stack.append((i + 1, score + value, merged))
    return out


def _tuple_label(ensemble: Ensemble, score: float) -> int:
    if ensemble.mode == CLASSIFIER:
        return int(score)
    return 1 if score >= 0 else 0


def brute_force_rstar(model: Tree | Ensemble, x: Sequence[float], y0: int, cap: int = ORACLE_CAP) -> float:
    """Exact minimal perturbation by enumerating all consistent leaf tuples."""
    ens = as_ensemble(model, len(x))
    best = INF
    for score, box in feasible_tuples(ens, cap):
        if _tuple_label(ens, score) != y0:
            best = min(best, perturbation_norm(x, box))
    return best


def exact_min_margin(
    ensemble: Ensemble, x: Sequence[float], y0: int, eps: float, cap: int = ORACLE_CAP
) -> float:
    """True worst margin over the closed ball of radius ``eps``."""
    sign = _orientation(y0)
    return min(
        sign * score for score, box in feasible_tuples(ensemble, cap) if perturbation_norm(x, box) <= eps
    )
