import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from raremix.dataset_io import NucleusInstance
from raremix.patching import Patch
from raremix.placement import (GeometryFailure, LocationRecord, OverlapRejection, RuleViolation,
                               apply_placement, nucleus_mask_in_patch, plan_placement)

S = 64


def instance(mask_small, origin=(0, 0), cls="miscellaneous", iid=1, image=0):
    rr, cc = np.nonzero(mask_small)
    j = int(np.argmin((rr - rr.mean()) ** 2 + (cc - cc.mean()) ** 2))
    r0, c0 = origin
    h, w = mask_small.shape
    return NucleusInstance(image, iid, cls, (r0 + int(rr[j]), c0 + int(cc[j])), mask_small.astype(bool),
                           (r0, c0, r0 + h, c0 + w))


def source_patch(seed=0):
    return Patch(np.random.default_rng(seed).integers(0, 256, (S, S, 3), dtype=np.uint8), (0, 0), (S // 2, S // 2))


def background_target():
    return LocationRecord("b:0", "background", 0, (32, 32))


def major_target(labels, iid=5):
    m = labels == iid
    rr, cc = np.nonzero(m)
    inst = NucleusInstance(0, iid, "epithelial", (int(rr[0]), int(cc[0])), m[rr.min():rr.max() + 1, cc.min():cc.max() + 1],
                           (rr.min(), cc.min(), rr.max() + 1, cc.max() + 1))
    return LocationRecord("m:0", "major", 0, (32, 32), instance=inst)


def test_single_pixel_rings():
    rare = instance(np.ones((1, 1)))
    plan = plan_placement(rare, source_patch(), background_target(), np.zeros((S, S), int))
    assert plan.op_kind == "paste"
    assert plan.nucleus_mask.sum() == 1 and plan.nucleus_mask[32, 32]
    assert plan.preserved_ring.sum() == 8
    assert plan.transition_zone.sum() == 16 + 24
    assert not plan.erase_mask.any()


def test_paste_only_rule():
    labels = np.zeros((S, S), int)
    labels[28:37, 28:37] = 5
    rare = instance(np.ones((3, 3)))
    with pytest.raises(RuleViolation):
        plan_placement(rare, source_patch(), major_target(labels), labels,
                       class_rules={"miscellaneous": {"paste_only": True}})
    # the rule does not block pastes
    plan_placement(rare, source_patch(), background_target(), np.zeros((S, S), int),
                   class_rules={"miscellaneous": {"paste_only": True}})


def test_replace_erases_major_and_masks_disjoint():
    labels = np.zeros((S, S), int)
    labels[26:39, 26:39] = 5
    labels[2:6, 2:6] = 9
    rare = instance(np.ones((5, 5)))
    plan = plan_placement(rare, source_patch(), major_target(labels), labels)
    assert plan.op_kind == "replace"
    np.testing.assert_array_equal(plan.erase_mask, labels == 5)
    parts = [plan.nucleus_mask, plan.preserved_ring, plan.transition_zone]
    for i in range(3):
        for j in range(i + 1, 3):
            assert not (parts[i] & parts[j]).any()


def test_rings_exclude_other_instances():
    labels = np.zeros((S, S), int)
    labels[26:39, 26:39] = 5
    labels[36:40, 30:34] = 9  # neighbour touching the planned zone
    rare = instance(np.ones((5, 5)))
    plan = plan_placement(rare, source_patch(), major_target(labels), labels)
    assert not (plan.transition_zone & (labels == 9)).any()
    assert not (plan.preserved_ring & (labels == 9)).any()


def test_replace_nucleus_overlapping_neighbour_rejected():
    labels = np.zeros((S, S), int)
    labels[30:35, 30:35] = 5
    labels[30:35, 35:38] = 9
    rare = instance(np.ones((7, 9)))
    with pytest.raises(OverlapRejection):
        plan_placement(rare, source_patch(), major_target(labels), labels)


def test_paste_near_instance_rejected_and_tolerance():
    labels = np.zeros((S, S), int)
    labels[32, 36] = 3  # two pixels beyond a 1-px ring of a 3x3 nucleus: inside ring 3
    rare = instance(np.ones((3, 3)))
    with pytest.raises(OverlapRejection):
        plan_placement(rare, source_patch(), background_target(), labels)
    plan = plan_placement(rare, source_patch(), background_target(), labels, overlap_tol=1)
    assert not plan.transition_zone[32, 36]


def test_nucleus_too_large_for_patch():
    with pytest.raises(GeometryFailure):
        nucleus_mask_in_patch(instance(np.ones((70, 3))), S)


def test_nucleus_outside_image():
    inside = np.zeros((S, S), bool)
    inside[:, :33] = True
    with pytest.raises(GeometryFailure):
        plan_placement(instance(np.ones((3, 3))), source_patch(), background_target(), np.zeros((S, S), int),
                       target_inside=inside)


def test_centroid_alignment():
    m = np.zeros((5, 7), bool)
    m[1:4, 2:6] = True
    rare = instance(m, origin=(100, 200))
    nm = nucleus_mask_in_patch(rare, S)
    assert nm.sum() == m.sum()
    assert nm[32, 32]
    rr, cc = np.nonzero(nm)
    # centroid was the nearest pixel to the mean; shift is an integer translation
    assert (rr.min(), cc.min()) == (32 - (rare.centroid[0] - 101), 32 - (rare.centroid[1] - 202))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_apply_placement_touches_only_plan(seed):
    rng = np.random.default_rng(seed)
    m = rng.random((7, 7)) > 0.4
    m[3, 3] = True
    rare = instance(m)
    src, tgt = source_patch(seed), source_patch(seed + 1)
    plan = plan_placement(rare, src, background_target(), np.zeros((S, S), int))
    out, nm = apply_placement(tgt, plan)
    outside = ~plan.touched
    np.testing.assert_array_equal(out.pixels[outside], tgt.pixels[outside])
    copy = plan.nucleus_mask | plan.preserved_ring
    np.testing.assert_array_equal(out.pixels[copy], src.pixels[copy])
    np.testing.assert_array_equal(~out.known_mask, plan.transition_zone)
    np.testing.assert_array_equal(nm, plan.nucleus_mask)
    assert tgt.known_mask.all()  # input untouched
