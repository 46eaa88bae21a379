"""Cost-based ordering of validated handles.

Each handle gets three features in [0, 1]: non-parallelism of its boundary
lines, skew between closing axis and lines, and normalized distance from
the camera. The cost is their weighted sum; lower is better.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CostWeights:
    w1: float = 0.4
    w2: float = 0.3
    w3: float = 0.3

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("weights must be non-negative")
        if self.w1 + self.w2 + self.w3 <= 0:
            raise ValueError("weights must not all be zero")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3])


@dataclass
class RankedHandle:
    handle: object
    a_b: float
    a_axis: float
    c_z: float
    f_c: float
    rank: int


def compute_features(a_b_raw, a_axis_raw, center_z) -> np.ndarray:
    """Feature rows (a_b, a_axis, c_z) from raw dot products and centre depths."""
    a_b_raw = np.asarray(a_b_raw, dtype=np.float64)
    a_axis_raw = np.asarray(a_axis_raw, dtype=np.float64)
    z = np.asarray(center_z, dtype=np.float64)
    a_b = np.clip(1.0 - np.clip(a_b_raw, 0.0, 1.0), 0.0, 1.0)
    a_axis = np.clip(a_axis_raw, 0.0, 1.0)
    if len(z) == 0:
        return np.zeros((0, 3))
    lo, hi = z.min(), z.max()
    c_z = (z - lo) / (hi - lo) if hi > lo else np.zeros_like(z)
    return np.stack([a_b, a_axis, c_z], axis=1)


def handle_features(handles) -> np.ndarray:
    return compute_features(
        [h.a_b_raw for h in handles],
        [h.a_axis_raw for h in handles],
        [h.hypothesis.c[2] for h in handles],
    )


def score(features, weights: CostWeights = CostWeights()) -> np.ndarray | float:
    f = np.asarray(features, dtype=np.float64)
    out = f @ weights.as_array()
    return float(out) if f.ndim == 1 else out


def order(costs, center_z, ids) -> list[int]:
    """Indices by ascending cost, then nearer centre, then id."""
    return sorted(range(len(costs)), key=lambda i: (costs[i], center_z[i], ids[i]))


def rank(handles, weights: CostWeights = CostWeights(), top_k: int | None = 5) -> list[RankedHandle]:
    handles = list(handles)
    if not handles:
        return []
    feats = handle_features(handles)
    costs = score(feats, weights)
    costs = np.atleast_1d(costs)
    idx = order(costs.tolist(), feats[:, 2].tolist(), [h.key for h in handles])
    if top_k is not None:
        idx = idx[:top_k]
    return [
        RankedHandle(handle=handles[i], a_b=float(feats[i, 0]), a_axis=float(feats[i, 1]),
                     c_z=float(feats[i, 2]), f_c=float(costs[i]), rank=k + 1)
        for k, i in enumerate(idx)
    ]
