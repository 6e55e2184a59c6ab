"""Geometric relation predicates and exact oracle score tensors.

All predicates operate on oriented boxes: each object carries a centroid, a
horizontal unit facing vector, and half extents expressed in the box frame
(axis 0 along facing, axis 1 to its side, axis 2 vertical).  Log-space truth
uses 0.0 for "holds" and -HARD_FALSE for "does not hold".
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import Vocabulary

# Engine-wide hard-false log constant.
HARD_FALSE = 30.0

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class RelationThresholds:
    """Decision thresholds for the geometric predicates.

    `near_max` / `far_min`: centroid distance bounds.
    `vertical_gap`: minimum clearance between stacked boxes for above/below.
    `overlap_scale`: multiplier on the horizontal half-extent sum that gates
    the above/below horizontal overlap test.
    `between_dist` / `between_t`: max distance to the reference segment and
    the interior margin of the projection parameter.
    `anchor_dot`: minimum displacement along the view axis.
    """

    near_max: float = 1.5
    far_min: float = 3.5
    vertical_gap: float = 0.05
    overlap_scale: float = 1.0
    between_dist: float = 0.5
    between_t: float = 0.1
    anchor_dot: float = 0.1


DEFAULT_THRESHOLDS = RelationThresholds()

# Tightened / loosened threshold sets used to demand a margin around every
# decision when selecting task instances.  A fact is "strong" when the narrow
# predicate agrees with the wide one; facts in the gray band are never used
# as supervision.
NARROW_THRESHOLDS = RelationThresholds(
    near_max=1.38,
    far_min=3.62,
    vertical_gap=0.12,
    overlap_scale=0.85,
    between_dist=0.40,
    between_t=0.15,
    anchor_dot=0.20,
)
WIDE_THRESHOLDS = RelationThresholds(
    near_max=1.62,
    far_min=3.38,
    vertical_gap=0.02,
    overlap_scale=1.15,
    between_dist=0.60,
    between_t=0.05,
    anchor_dot=0.04,
)


def view_frame(facing: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-handed orthonormal viewer frame for an object facing direction.

    The viewer stands in front of the object looking at it, so the view
    direction is the reversed facing vector; the frame is
    (right, view, up) with right = view x up and up = world z.
    """
    facing = np.asarray(facing, dtype=np.float64)
    if facing.shape != (3,):
        raise ValueError(f"facing must be a 3-vector, got shape {facing.shape}")
    if abs(facing[2]) > 1e-9:
        raise ValueError("facing must be horizontal (zero z component)")
    norm = np.linalg.norm(facing)
    if not np.isclose(norm, 1.0, atol=1e-6):
        raise ValueError("facing must be a unit vector")
    y_axis = -facing
    x_axis = np.cross(y_axis, WORLD_UP)
    return x_axis, y_axis, WORLD_UP.copy()


def box_axes(facing: np.ndarray) -> np.ndarray:
    """Box frame rows (axis0 along facing, axis1 side, axis2 up)."""
    facing = np.asarray(facing, dtype=np.float64)
    side = np.cross(WORLD_UP, facing)
    return np.stack([facing, side, WORLD_UP])


@dataclass(frozen=True)
class SceneArrays:
    """Dense per-object geometry used by the predicates."""

    centroids: np.ndarray      # (M, 3)
    half_extents: np.ndarray   # (M, 3) in the box frame
    facings: np.ndarray        # (M, 3) horizontal unit vectors

    def __post_init__(self) -> None:
        m = self.centroids.shape[0]
        if self.centroids.shape != (m, 3) or self.half_extents.shape != (m, 3) \
                or self.facings.shape != (m, 3):
            raise ValueError("geometry arrays must all be (M, 3)")

    @property
    def m(self) -> int:
        return self.centroids.shape[0]


def _pairwise_distances(c: np.ndarray) -> np.ndarray:
    diff = c[:, None, :] - c[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def _above_matrix(arrays: SceneArrays, th: RelationThresholds) -> np.ndarray:
    """above[i, j] is True when object i sits over object j with clearance."""
    c, h = arrays.centroids, arrays.half_extents
    m = arrays.m
    hdist = np.linalg.norm((c[:, None, :2] - c[None, :, :2]), axis=-1)
    # Horizontal footprint gate: centroid offset within the larger of the two
    # half-extent sums.  Uses box-frame extents, so it is invariant under
    # rotations of the whole scene about the vertical axis.
    sum0 = h[:, None, 0] + h[None, :, 0]
    sum1 = h[:, None, 1] + h[None, :, 1]
    gate = np.maximum(sum0, sum1) * th.overlap_scale
    bottom = c[:, 2] - h[:, 2]
    top = c[:, 2] + h[:, 2]
    gap = bottom[:, None] - top[None, :]
    out = (hdist <= gate) & (gap > th.vertical_gap)
    np.fill_diagonal(out, False)
    return out


def binary_truth(arrays: SceneArrays, relation: str,
                 th: RelationThresholds = DEFAULT_THRESHOLDS) -> np.ndarray:
    """Boolean (M, M) matrix; entry (i, j) says relation(i, j) holds, i != j."""
    m = arrays.m
    if relation == "above":
        return _above_matrix(arrays, th)
    if relation == "below":
        return _above_matrix(arrays, th).T.copy()
    dist = _pairwise_distances(arrays.centroids)
    if relation == "near":
        out = dist <= th.near_max
    elif relation == "far":
        out = dist >= th.far_min
    else:
        raise ValueError(f"unknown binary relation: {relation!r}")
    np.fill_diagonal(out, False)
    return out


def _between_truth(arrays: SceneArrays, th: RelationThresholds) -> np.ndarray:
    """between[i, j, k]: i lies within `between_dist` of segment (j, k) and
    projects onto its interior.  Degenerate segments (j == k) are False."""
    c = arrays.centroids
    a = c[None, :, None, :]          # (1, j, 1, 3)
    b = c[None, None, :, :]          # (1, 1, k, 3)
    p = c[:, None, None, :]          # (i, 1, 1, 3)
    ab = b - a                       # (1, j, k, 3)
    denom = np.sum(ab * ab, axis=-1)  # (1, j, k)
    safe = np.where(denom > 1e-12, denom, 1.0)
    t = np.sum((p - a) * ab, axis=-1) / safe          # (i, j, k)
    closest = a + t[..., None] * ab                   # (i, j, k, 3)
    dist = np.linalg.norm(p - closest, axis=-1)       # (i, j, k)
    interior = (t > th.between_t) & (t < 1.0 - th.between_t)
    out = interior & (dist <= th.between_dist) & (denom > 1e-12)
    return out


def _anchor_truth(arrays: SceneArrays, direction: str,
                  th: RelationThresholds) -> np.ndarray:
    """anchor-<dir>[i, j, k]: displacement of i from j, projected on the view
    frame of anchor k, exceeds the threshold in the named direction."""
    c, f = arrays.centroids, arrays.facings
    m = arrays.m
    y_axes = -f                                   # (k, 3) view direction
    x_axes = np.cross(y_axes, WORLD_UP[None, :])  # (k, 3) viewer right
    diff = c[:, None, :] - c[None, :, :]          # (i, j, 3)
    dot_x = np.einsum("ijd,kd->ijk", diff, x_axes)
    dot_y = np.einsum("ijd,kd->ijk", diff, y_axes)
    if direction == "right":
        out = dot_x > th.anchor_dot
    elif direction == "left":
        out = dot_x < -th.anchor_dot
    elif direction == "behind":
        out = dot_y > th.anchor_dot
    elif direction == "front":
        out = dot_y < -th.anchor_dot
    else:
        raise ValueError(f"unknown anchor direction: {direction!r}")
    return out


def ternary_truth(arrays: SceneArrays, relation: str,
                  th: RelationThresholds = DEFAULT_THRESHOLDS) -> np.ndarray:
    """Boolean (M, M, M) tensor for relation(i; j, k).

    The target index never coincides with a reference (entries with i == j or
    i == k are False).  j == k is allowed: for anchor relations the spatial
    reference and the anchor are frequently the same object; `between`
    excludes it inside the predicate because the segment degenerates.
    """
    if relation == "between":
        out = _between_truth(arrays, th)
    elif relation.startswith("anchor-"):
        out = _anchor_truth(arrays, relation.removeprefix("anchor-"), th)
    else:
        raise ValueError(f"unknown ternary relation: {relation!r}")
    m = arrays.m
    idx = np.arange(m)
    out[idx, idx, :] = False  # i == j
    out[idx, :, idx] = False  # i == k
    return out


def _log_truth(mask: np.ndarray) -> np.ndarray:
    return np.where(mask, 0.0, -HARD_FALSE)


def oracle_category(arrays_or_labels, vocabulary: Vocabulary) -> np.ndarray:
    """(M, C) log-truth matrix from a category label sequence."""
    labels = list(arrays_or_labels)
    m, c = len(labels), len(vocabulary.categories)
    out = np.full((m, c), -HARD_FALSE, dtype=np.float64)
    for i, label in enumerate(labels):
        out[i, vocabulary.category_id(label)] = 0.0
    return out


def oracle_binary(arrays: SceneArrays, relation: str,
                  th: RelationThresholds = DEFAULT_THRESHOLDS) -> np.ndarray:
    """(M, M) log-truth matrix; the diagonal is hard-false."""
    return _log_truth(binary_truth(arrays, relation, th))


def oracle_ternary(arrays: SceneArrays, relation: str,
                   th: RelationThresholds = DEFAULT_THRESHOLDS) -> np.ndarray:
    """(M, M, M) log-truth tensor; repeated target indices are hard-false."""
    return _log_truth(ternary_truth(arrays, relation, th))


def strong_binary(arrays: SceneArrays, relation: str) -> tuple[np.ndarray, np.ndarray]:
    """(strong_true, strong_false) boolean matrices with a decision margin."""
    narrow = binary_truth(arrays, relation, NARROW_THRESHOLDS)
    wide = binary_truth(arrays, relation, WIDE_THRESHOLDS)
    return narrow, ~wide


def strong_ternary(arrays: SceneArrays, relation: str) -> tuple[np.ndarray, np.ndarray]:
    narrow = ternary_truth(arrays, relation, NARROW_THRESHOLDS)
    wide = ternary_truth(arrays, relation, WIDE_THRESHOLDS)
    return narrow, ~wide
