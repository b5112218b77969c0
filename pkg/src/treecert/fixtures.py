"""Canonical small models and a synthetic crash-record generator.

``tree_a`` is a single stump and ``tree_b`` a depth-2 tree over two features::

    f0 <= 0.5 ?
      yes: f1 <= 0.3 ?
             yes: L1 (label 0)
             no:  L2 (label 1)
      no:  L3 (label 1)

``stump_pair`` (S1 + S2) has exact minimal perturbation 0.1 at ``x = 0.6``.
"""

from __future__ import annotations

import csv
import io
from importlib import resources

import numpy as np

from .model import ADDITIVE, CLASSIFIER, Ensemble, Node, Tree

TREE_B_L1, TREE_B_L2, TREE_B_L3 = 2, 3, 4


def tree_a() -> Tree:
    return Tree([Node(0, 0, 0.5, 1, 2), Node(1, label=0), Node(2, label=1)], mode=CLASSIFIER)


def tree_b() -> Tree:
    return Tree(
        [
            Node(0, 0, 0.5, 1, TREE_B_L3),
            Node(1, 1, 0.3, TREE_B_L1, TREE_B_L2),
            Node(TREE_B_L1, label=0),
            Node(TREE_B_L2, label=1),
            Node(TREE_B_L3, label=1),
        ],
        mode=CLASSIFIER,
    )


def stump(feature: int, threshold: float, left: float, right: float) -> Tree:
    return Tree([Node(0, feature, threshold, 1, 2), Node(1, value=left), Node(2, value=right)], mode=ADDITIVE)


def stump_pair() -> Ensemble:
    """S1 (f0 at 0.5: -0.5 / +1.0) and S2 (f0 at 0.7: -0.3 / +0.8)."""
    return Ensemble((stump(0, 0.5, -0.5, 1.0), stump(0, 0.7, -0.3, 0.8)), n_features=1)


def three_stumps(order: str = "S1,S3,S2") -> Ensemble:
    """Unit stumps S1 (f0), S2 (f1) and S3 (f0, flipped); S1 and S3 always cancel."""
    named = {
        "S1": stump(0, 0.5, -1.0, 1.0),
        "S2": stump(1, 0.5, -1.0, 1.0),
        "S3": stump(0, 0.5, 1.0, -1.0),
    }
    return Ensemble(tuple(named[k] for k in order.split(",")), n_features=2)


# ---------------------------------------------------------------------------
# synthetic Arizona-style crash records

SYNTHETIC_COLUMNS = (
    "CollisionManner",
    "LightCondition",
    "Weather",
    "SurfaceCondition",
    "JunctionRelation",
    "NumVehicles",
    "PedestrianInvolved",
    "InjurySeverity",
)

_COLLISION = {
    "Single Vehicle": 0.8,
    "Rear End": 0.0,
    "ANGLE (Front To Side)-(Other Than Left Turn)": 0.5,
    "Left Turn": 0.7,
    "U Turn": 0.2,
    "Sideswipe Same Direction": -0.6,
    "Sideswipe Opposite Direction": 0.3,
    "Head On": 1.6,
    "Rear To Rear": -0.8,
    "Rear To Side": -0.3,
    "Other": 0.0,
    "Unknown": -0.2,
    "NULL": -0.2,
}
_COLLISION_P = (0.12, 0.30, 0.14, 0.10, 0.02, 0.08, 0.03, 0.05, 0.01, 0.03, 0.05, 0.04, 0.03)
_LIGHT = {"Daylight": 0.0, "Dark Lighted": 0.4, "Dark Not Lighted": 0.9, "Dawn Or Dusk": 0.2}
_LIGHT_P = (0.65, 0.18, 0.10, 0.07)
_WEATHER = {"Clear": 0.0, "Cloudy": 0.1, "Rain": 0.3, "Fog Smog Smoke": 0.5}
_WEATHER_P = (0.70, 0.18, 0.09, 0.03)
_SURFACE = {"Dry": 0.0, "Wet": 0.3, "Ice Frost": 0.4, "Sand Mud Dirt": 0.2}
_SURFACE_P = (0.82, 0.13, 0.02, 0.03)
_JUNCTION = {"Not Junction Related": 0.0, "Intersection": 0.5, "Driveway Access": 0.1, "Ramp": 0.2}
_JUNCTION_P = (0.45, 0.38, 0.10, 0.07)
_SEVERE = ("Fatal", "Suspected Serious Injury", "Suspected Minor Injury", "Possible Injury")
_NOT_SEVERE = "No Injury"


def synthetic_crash_records(n: int = 2400, seed: int = 2023) -> list[dict[str, str]]:
    """Arizona-style raw rows whose severity depends on the recorded conditions."""
    rng = np.random.default_rng(seed)

    def draw(table: dict[str, float], probs) -> tuple[list[str], np.ndarray]:
        keys = list(table)
        picks = rng.choice(len(keys), size=n, p=np.asarray(probs) / np.sum(probs))
        return [keys[i] for i in picks], np.array([table[keys[i]] for i in picks])

    coll, w_coll = draw(_COLLISION, _COLLISION_P)
    light, w_light = draw(_LIGHT, _LIGHT_P)
    weather, w_weather = draw(_WEATHER, _WEATHER_P)
    surface, w_surface = draw(_SURFACE, _SURFACE_P)
    junction, w_junction = draw(_JUNCTION, _JUNCTION_P)
    vehicles = np.where(np.array(coll) == "Single Vehicle", 1, 2 + rng.poisson(0.35, size=n))
    ped = (rng.random(n) < np.where(vehicles == 1, 0.25, 0.03)).astype(int)

    logit = -1.3 + w_coll + w_light + w_weather + w_surface + w_junction + 0.5 * (vehicles - 2).clip(0) + 2.2 * ped
    severe = rng.random(n) < 1.0 / (1.0 + np.exp(-logit))
    sev_pick = rng.integers(0, len(_SEVERE), size=n)

    rows = []
    for i in range(n):
        rows.append(
            {
                "CollisionManner": coll[i],
                "LightCondition": light[i],
                "Weather": weather[i],
                "SurfaceCondition": surface[i],
                "JunctionRelation": junction[i],
                "NumVehicles": str(int(vehicles[i])),
                "PedestrianInvolved": str(int(ped[i])),
                "InjurySeverity": _SEVERE[sev_pick[i]] if severe[i] else _NOT_SEVERE,
            }
        )
    return rows


def records_to_csv(rows: list[dict[str, str]], columns=SYNTHETIC_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _data_path(name: str):
    return resources.files("treecert.data").joinpath(name)


def synthetic_csv_path():
    """Bundled 2,400-row synthetic crash CSV (``synthetic_crash_records()`` output)."""
    return _data_path("synthetic_arizona.csv")


def synthetic_maps_path():
    """Mapping spec covering every categorical column of the synthetic CSV."""
    return _data_path("synthetic_arizona_maps.json")


SYNTHETIC_FEATURES = (
    "collision_manner",
    "light_condition",
    "weather",
    "surface_condition",
    "junction_relation",
    "NumVehicles",
    "PedestrianInvolved",
)
SYNTHETIC_LABEL_COLUMN = "InjurySeverity"
SYNTHETIC_POSITIVE = _SEVERE
