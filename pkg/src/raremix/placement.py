"""Copy-and-Replace / Copy-and-Paste geometry around a target patch center."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from .dataset_io import NucleusInstance
from .patching import Patch, contour_layers


class PlacementError(ValueError):
    reason = "placement"


class GeometryFailure(PlacementError):
    reason = "geometry"


class OverlapRejection(PlacementError):
    reason = "overlap"


class RuleViolation(PlacementError):
    reason = "paste-only-rule"


@dataclass(frozen=True)
class LocationRecord:
    key: Hashable
    kind: str  # "major" or "background"
    image_index: int
    center: tuple[int, int]
    features: np.ndarray | None = None
    instance: NucleusInstance | None = None  # the major nucleus, for kind == "major"


@dataclass
class PlacementPlan:
    op_kind: str  # "replace" or "paste"
    rare_key: Hashable
    rare_class: str
    source_pixels: np.ndarray  # source patch pixels, same geometry as the target patch
    target: LocationRecord
    nucleus_mask: np.ndarray
    preserved_ring: np.ndarray
    transition_zone: np.ndarray
    erase_mask: np.ndarray
    notes: list[str] = field(default_factory=list)

    @property
    def touched(self) -> np.ndarray:
        """Every pixel the plan may modify."""
        return self.erase_mask | self.nucleus_mask | self.preserved_ring | self.transition_zone


def nucleus_mask_in_patch(rare: NucleusInstance, size: int) -> np.ndarray:
    """The rare mask with its centroid on the patch center (integer shift, no resampling)."""
    half = size // 2
    r0, c0, r1, c1 = rare.bbox
    pr0, pc0 = r0 - rare.centroid[0] + half, c0 - rare.centroid[1] + half
    pr1, pc1 = pr0 + (r1 - r0), pc0 + (c1 - c0)
    if pr0 < 0 or pc0 < 0 or pr1 > size or pc1 > size:
        raise GeometryFailure(f"rare nucleus {rare.key} ({r1 - r0}x{c1 - c0}) does not fit a {size} patch")
    out = np.zeros((size, size), dtype=bool)
    out[pr0:pr1, pc0:pc1] = rare.mask
    return out


def plan_placement(rare: NucleusInstance, source_patch: Patch, target: LocationRecord,
                   target_labels: np.ndarray, target_inside: np.ndarray | None = None,
                   class_rules: dict | None = None, overlap_tol: int = 0) -> PlacementPlan:
    """Build the masks for inserting ``rare`` at the center of the target patch.

    ``target_labels`` is the instance raster cropped on the target window (0 outside the
    image) and ``target_inside`` flags window pixels that lie inside the image.
    Pixels of other instances are never part of the preserved ring or transition zone.
    """
    rules = (class_rules or {}).get(rare.class_label, {})
    if rules.get("paste_only") and target.kind == "major":
        raise RuleViolation(f"class {rare.class_label!r} is paste-only; target {target.key} is a major nucleus")
    size = source_patch.size
    if target_labels.shape != (size, size):
        raise GeometryFailure("target label window does not match patch size")
    nucleus = nucleus_mask_in_patch(rare, size)
    if target_inside is not None and (nucleus & ~target_inside).any():
        raise GeometryFailure(f"nucleus would cross the image border at target {target.key}")
    ring1, ring2, ring3 = contour_layers(nucleus, 3)
    zone = ring2 | ring3

    if target.kind == "major":
        if target.instance is None:
            raise GeometryFailure("major target without its instance")
        major_id = target.instance.instance_id
        erase = target_labels == major_id
        if int(erase.sum()) != target.instance.area:
            raise GeometryFailure(f"major nucleus {target.key} not contained in its patch window")
        others = (target_labels != 0) & ~erase
        overlap = int((nucleus & others).sum())
        op_kind = "replace"
    elif target.kind == "background":
        erase = np.zeros_like(nucleus)
        others = target_labels != 0
        overlap = int(((nucleus | ring1 | zone) & others).sum())
        op_kind = "paste"
    else:
        raise ValueError(f"unknown target kind {target.kind!r}")
    if overlap > overlap_tol:
        raise OverlapRejection(f"{op_kind} at {target.key} overlaps existing instances by {overlap} px")
    return PlacementPlan(op_kind=op_kind, rare_key=rare.key, rare_class=rare.class_label,
                         source_pixels=source_patch.pixels, target=target, nucleus_mask=nucleus,
                         preserved_ring=ring1 & ~others & ~nucleus, transition_zone=zone & ~others,
                         erase_mask=erase)


def apply_placement(target_patch: Patch, plan: PlacementPlan, include_erase: bool = True) -> tuple[Patch, np.ndarray]:
    """Stage the patch for inpainting: copy nucleus + ring 1, mark the zone unknown.

    With ``include_erase`` the erased major region (outside the copied pixels) is also
    marked unknown, i.e. the single-shot staging; progressive blending cleans it first.
    """
    out = target_patch.copy()
    copy = plan.nucleus_mask | plan.preserved_ring
    out.pixels[copy] = plan.source_pixels[copy]
    hole = plan.transition_zone.copy()
    if include_erase:
        hole |= plan.erase_mask & ~copy
    out.known_mask &= ~hole
    out.pixels[hole] = 0
    return out, plan.nucleus_mask.copy()
