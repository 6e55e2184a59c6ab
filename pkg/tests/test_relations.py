import numpy as np
import pytest

from refexec.relations import (DEFAULT_THRESHOLDS, HARD_FALSE, NARROW_THRESHOLDS,
                               WIDE_THRESHOLDS, SceneArrays, binary_truth,
                               box_axes, oracle_binary, oracle_category,
                               oracle_ternary, strong_binary, strong_ternary,
                               ternary_truth, view_frame)
from refexec.vocab import Vocabulary

import reference


def arrays_of(scene) -> SceneArrays:
    return scene.arrays()


def micro_arrays(centroids, facings=None, half=0.4) -> SceneArrays:
    c = np.asarray(centroids, dtype=np.float64)
    m = c.shape[0]
    if facings is None:
        facings = np.tile([1.0, 0.0, 0.0], (m, 1))
    return SceneArrays(
        centroids=c,
        half_extents=np.full((m, 3), half),
        facings=np.asarray(facings, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# hand-derived micro cases
# ---------------------------------------------------------------------------

def test_near_far_hand_cases():
    a = micro_arrays([[0, 0, 0], [1.0, 0, 0], [4.0, 0, 0]])
    near = binary_truth(a, "near")
    far = binary_truth(a, "far")
    assert near[0, 1] and near[1, 0]
    assert not near[0, 2]
    assert far[0, 2] and far[2, 0]
    assert not far[0, 1]
    assert not near.diagonal().any() and not far.diagonal().any()


def test_near_boundary_inclusive():
    a = micro_arrays([[0, 0, 0], [1.5, 0, 0]])
    assert binary_truth(a, "near")[0, 1]
    a = micro_arrays([[0, 0, 0], [3.5, 0, 0]])
    assert binary_truth(a, "far")[0, 1]


def test_above_below_hand_case():
    a = SceneArrays(
        centroids=np.array([[0.1, 0.0, 1.2], [0.0, 0.0, 0.0]]),
        half_extents=np.array([[0.4, 0.4, 0.4], [0.5, 0.5, 0.5]]),
        facings=np.tile([1.0, 0.0, 0.0], (2, 1)),
    )
    above = binary_truth(a, "above")
    below = binary_truth(a, "below")
    # clearance = (1.2 - 0.4) - (0.0 + 0.5) = 0.3 > 0.05; offset 0.1 <= 0.9
    assert above[0, 1] and not above[1, 0]
    assert below[1, 0] and not below[0, 1]


def test_above_requires_clearance_and_overlap():
    # touching boxes: clearance exactly 0 fails the gap test
    a = micro_arrays([[0, 0, 0.8], [0, 0, 0]])
    assert not binary_truth(a, "above")[0, 1]
    # far to the side: clearance fine, overlap gate fails
    a = micro_arrays([[2.0, 0, 2.0], [0, 0, 0]])
    assert not binary_truth(a, "above")[0, 1]


def test_between_hand_cases():
    a = micro_arrays([[1.0, 0.3, 0], [0, 0, 0], [2.0, 0, 0]])
    t = ternary_truth(a, "between")
    assert t[0, 1, 2] and t[0, 2, 1]
    a = micro_arrays([[1.0, 0.6, 0], [0, 0, 0], [2.0, 0, 0]])
    assert not ternary_truth(a, "between")[0, 1, 2]
    a = micro_arrays([[0.1, 0.0, 0], [0, 0, 0], [2.0, 0, 0]])
    assert not ternary_truth(a, "between")[0, 1, 2]  # projection t = 0.05


def test_between_degenerate_segment_false():
    a = micro_arrays([[1.0, 0.0, 0], [0, 0, 0], [2.0, 0, 0]])
    t = ternary_truth(a, "between")
    assert not t[0, 1, 1] and not t[0, 2, 2]


def test_anchor_hand_case():
    # anchor 2 faces +x, so the viewer's right axis is +y
    a = micro_arrays([[0, 2.0, 0], [0, 0, 0], [5, 5, 0]],
                     facings=[[1, 0, 0], [1, 0, 0], [1, 0, 0]])
    assert ternary_truth(a, "anchor-right")[0, 1, 2]
    assert not ternary_truth(a, "anchor-left")[0, 1, 2]
    assert ternary_truth(a, "anchor-left")[1, 0, 2]
    # displacement along the right axis only: neither front nor behind
    assert not ternary_truth(a, "anchor-front")[0, 1, 2]
    assert not ternary_truth(a, "anchor-behind")[0, 1, 2]


def test_anchor_threshold_band_excluded():
    # |dot| = 0.05 <= 0.1 threshold on both sides -> no direction holds
    a = micro_arrays([[0, 0.05, 0], [0, 0, 0], [5, 5, 0]])
    for name in ("anchor-left", "anchor-right"):
        assert not ternary_truth(a, name)[0, 1, 2]


def test_ternary_masks_target_reference_coincidence():
    a = micro_arrays([[0, 2, 0], [0, 0, 0], [5, 5, 0]])
    for name in ("between", "anchor-right"):
        t = ternary_truth(a, name)
        idx = np.arange(3)
        assert not t[idx, idx, :].any()
        assert not t[idx, :, idx].any()


def test_anchor_same_reference_and_anchor_allowed():
    # j == k is legal for anchor relations (reference doubles as anchor)
    a = micro_arrays([[0, 2.0, 0], [0, 0, 0]], facings=[[1, 0, 0], [1, 0, 0]])
    assert ternary_truth(a, "anchor-right")[0, 1, 1]


# ---------------------------------------------------------------------------
# brute-force agreement on generated scenes
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("thresholds", [DEFAULT_THRESHOLDS, NARROW_THRESHOLDS,
                                        WIDE_THRESHOLDS])
def test_truth_tables_match_reference(scenes_small, vocab, thresholds):
    kw = {
        "near": {"near_max": thresholds.near_max},
        "far": {"far_min": thresholds.far_min},
        "above": {"overlap_scale": thresholds.overlap_scale,
                  "vertical_gap": thresholds.vertical_gap},
        "between": {"between_dist": thresholds.between_dist,
                    "between_t": thresholds.between_t},
        "anchor": {"anchor_dot": thresholds.anchor_dot},
    }
    for scene in scenes_small.values():
        arrays = arrays_of(scene)
        for name in vocab.binary_relations:
            got = binary_truth(arrays, name, thresholds)
            want = np.zeros_like(got)
            c = arrays.centroids
            h = arrays.half_extents
            for i in range(arrays.m):
                for j in range(arrays.m):
                    if i == j:
                        continue
                    if name == "near":
                        want[i, j] = reference.ref_near(c[i], c[j], **kw["near"])
                    elif name == "far":
                        want[i, j] = reference.ref_far(c[i], c[j], **kw["far"])
                    elif name == "above":
                        want[i, j] = reference.ref_above(c[i], c[j], h[i], h[j],
                                                         **kw["above"])
                    else:
                        want[i, j] = reference.ref_above(c[j], c[i], h[j], h[i],
                                                         **kw["above"])
            np.testing.assert_array_equal(got, want, err_msg=f"{name}")
        for name in vocab.ternary_relations:
            got = ternary_truth(arrays, name, thresholds)
            want = np.zeros_like(got)
            c, f = arrays.centroids, arrays.facings
            for i in range(arrays.m):
                for j in range(arrays.m):
                    for k in range(arrays.m):
                        if i == j or i == k:
                            continue
                        if name == "between":
                            want[i, j, k] = reference.ref_between(
                                c[i], c[j], c[k], **kw["between"])
                        else:
                            want[i, j, k] = reference.ref_anchor(
                                c[i], c[j], f[k],
                                name.removeprefix("anchor-"), **kw["anchor"])
            np.testing.assert_array_equal(got, want, err_msg=f"{name}")


def test_reference_truth_tables_helper_agrees(scene10, vocab):
    binary, ternary = reference.truth_tables(scene10, vocab)
    arrays = arrays_of(scene10)
    for name, table in binary.items():
        np.testing.assert_array_equal(table, binary_truth(arrays, name))
    for name, table in ternary.items():
        np.testing.assert_array_equal(table, ternary_truth(arrays, name))


# ---------------------------------------------------------------------------
# structural properties
# ---------------------------------------------------------------------------

def test_near_far_symmetric_and_exclusive(scenes_small):
    for scene in scenes_small.values():
        arrays = arrays_of(scene)
        near = binary_truth(arrays, "near")
        far = binary_truth(arrays, "far")
        np.testing.assert_array_equal(near, near.T)
        np.testing.assert_array_equal(far, far.T)
        assert not (near & far).any()


def test_above_below_transpose(scenes_small):
    for scene in scenes_small.values():
        arrays = arrays_of(scene)
        np.testing.assert_array_equal(
            binary_truth(arrays, "above"), binary_truth(arrays, "below").T)


def _rotate_arrays(arrays: SceneArrays, angle: float) -> SceneArrays:
    rot = np.array([[np.cos(angle), -np.sin(angle), 0],
                    [np.sin(angle), np.cos(angle), 0],
                    [0, 0, 1.0]])
    return SceneArrays(
        centroids=arrays.centroids @ rot.T,
        half_extents=arrays.half_extents.copy(),
        facings=arrays.facings @ rot.T,
    )


def test_rotation_equivariance(scene10, vocab):
    """Rotating the whole scene (objects and facings) about the vertical axis
    preserves every relation."""
    arrays = arrays_of(scene10)
    rotated = _rotate_arrays(arrays, 2 * np.pi / 7)
    for name in vocab.binary_relations:
        np.testing.assert_array_equal(
            binary_truth(arrays, name), binary_truth(rotated, name))
    for name in vocab.ternary_relations:
        np.testing.assert_array_equal(
            ternary_truth(arrays, name), ternary_truth(rotated, name))


def test_threshold_nesting(scenes_small, vocab):
    """narrow-true implies default-true implies wide-true, every relation."""
    for scene in scenes_small.values():
        arrays = arrays_of(scene)
        for name in vocab.binary_relations:
            narrow = binary_truth(arrays, name, NARROW_THRESHOLDS)
            default = binary_truth(arrays, name, DEFAULT_THRESHOLDS)
            wide = binary_truth(arrays, name, WIDE_THRESHOLDS)
            assert not (narrow & ~default).any()
            assert not (default & ~wide).any()
        for name in vocab.ternary_relations:
            narrow = ternary_truth(arrays, name, NARROW_THRESHOLDS)
            default = ternary_truth(arrays, name, DEFAULT_THRESHOLDS)
            wide = ternary_truth(arrays, name, WIDE_THRESHOLDS)
            assert not (narrow & ~default).any()
            assert not (default & ~wide).any()


def test_strong_sets_are_margins(scene10, vocab):
    arrays = arrays_of(scene10)
    for name in vocab.binary_relations:
        strong_true, strong_false = strong_binary(arrays, name)
        default = binary_truth(arrays, name)
        assert not (strong_true & strong_false).any()
        assert not (strong_true & ~default).any()
        assert not (strong_false & default).any()
    for name in vocab.ternary_relations:
        strong_true, strong_false = strong_ternary(arrays, name)
        default = ternary_truth(arrays, name)
        assert not (strong_true & strong_false).any()
        assert not (strong_true & ~default).any()
        assert not (strong_false & default).any()


# ---------------------------------------------------------------------------
# frames and log-space oracles
# ---------------------------------------------------------------------------

def test_view_frame_orthonormal_right_handed():
    for theta in np.linspace(0, 2 * np.pi, 9, endpoint=False):
        facing = np.array([np.cos(theta), np.sin(theta), 0.0])
        x, y, z = view_frame(facing)
        np.testing.assert_allclose(np.cross(x, y), z, atol=1e-12)
        assert abs(x @ y) < 1e-12
        np.testing.assert_allclose([np.linalg.norm(v) for v in (x, y, z)],
                                   1.0, atol=1e-12)
        np.testing.assert_allclose(y, -facing, atol=1e-12)


@pytest.mark.parametrize("bad", [
    np.array([0.0, 0.0, 1.0]),       # vertical
    np.array([1.0, 1.0, 0.0]),       # not unit
    np.array([1.0, 0.0]),            # wrong shape
])
def test_view_frame_rejects_bad_facing(bad):
    with pytest.raises(ValueError):
        view_frame(bad)


def test_box_axes_rows_are_frame():
    facing = np.array([0.0, 1.0, 0.0])
    axes = box_axes(facing)
    np.testing.assert_allclose(axes[0], facing)
    np.testing.assert_allclose(axes[1], np.cross([0, 0, 1.0], facing))
    np.testing.assert_allclose(axes[2], [0, 0, 1.0])


def test_oracle_log_values(scene10, vocab):
    arrays = arrays_of(scene10)
    cat = oracle_category(scene10.categories, vocab)
    assert set(np.unique(cat)) <= {0.0, -HARD_FALSE}
    for i, label in enumerate(scene10.categories):
        assert cat[i, vocab.category_id(label)] == 0.0
        assert (cat[i] == 0.0).sum() == 1
    for name in vocab.binary_relations:
        log = oracle_binary(arrays, name)
        np.testing.assert_array_equal(
            log == 0.0, binary_truth(arrays, name))
        assert (np.diag(log) == -HARD_FALSE).all()
    for name in vocab.ternary_relations:
        log = oracle_ternary(arrays, name)
        np.testing.assert_array_equal(log == 0.0, ternary_truth(arrays, name))


def test_unknown_relation_raises(scene10):
    arrays = arrays_of(scene10)
    with pytest.raises(ValueError):
        binary_truth(arrays, "inside")
    with pytest.raises(ValueError):
        ternary_truth(arrays, "anchor-up")
    with pytest.raises(ValueError):
        ternary_truth(arrays, "around")
