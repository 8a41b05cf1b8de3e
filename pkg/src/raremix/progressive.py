"""Two-stage blending: clean the target region, then place the nucleus and inpaint the
transition zone."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import torch

from . import diffusion as dm
from .patching import Patch, classical_inpaint, crop_window, inside_mask, window_slices
from .placement import PlacementPlan, apply_placement


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class Inpainter(Protocol):
    name: str

    def __call__(self, pixels: np.ndarray, known: np.ndarray, seed: int = 0) -> np.ndarray: ...


class ClassicalInpainter:
    name = "classical"

    def __init__(self, method: str = "harmonic"):
        self.method = method

    def __call__(self, pixels, known, seed=0):
        return classical_inpaint(Patch(pixels, (0, 0), (0, 0), known), method=self.method).pixels


class DiffusionInpainter:
    """Guided DDIM inpainting on the bounding box of the unknown region plus a margin."""

    name = "diffusion"

    def __init__(self, model, schedule: dm.DiffusionSchedule, n_steps: int = 250,
                 guidance_scale: float = 1.0, hard_consistency: bool = True, margin: int = 12):
        self.model = model
        self.schedule = schedule
        self.n_steps = n_steps
        self.guidance_scale = guidance_scale
        self.hard_consistency = hard_consistency
        self.margin = margin

    def __call__(self, pixels, known, seed=0):
        unknown = ~known
        if not unknown.any():
            return pixels.copy()
        rr, cc = np.nonzero(unknown)
        h, w = known.shape
        r0, r1 = max(rr.min() - self.margin, 0), min(rr.max() + 1 + self.margin, h)
        c0, c1 = max(cc.min() - self.margin, 0), min(cc.max() + 1 + self.margin, w)
        tile = pixels[r0:r1, c0:c1]
        tile_known = torch.from_numpy(known[r0:r1, c0:c1].copy())
        meas = dm.Measurement.from_image(dm.to_model_space(tile), tile_known)
        g = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            x = dm.guided_inpaint(self.schedule, self.model, meas, n_steps=self.n_steps,
                                  guidance_scale=self.guidance_scale,
                                  hard_consistency=self.hard_consistency, generator=g)
        out = pixels.copy()
        filled = dm.to_pixels(x)
        sub = ~known[r0:r1, c0:c1]
        out[r0:r1, c0:c1][sub] = filled[sub]
        return out


def _fill(inpainter, pixels, known, region, seed) -> np.ndarray:
    """Run the inpainter and keep its output only on ``region``."""
    filled = inpainter(pixels, known, seed=seed)
    out = pixels.copy()
    out[region] = filled[region]
    return out


def digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


def stage1_clean(patch: Patch, erase_mask: np.ndarray, inpainter, seed: int = 0) -> Patch:
    out = patch.copy()
    if not erase_mask.any():
        return out
    known = patch.known_mask & ~erase_mask
    staged = patch.pixels.copy()
    staged[~known] = 0
    try:
        out.pixels = _fill(inpainter, staged, known, erase_mask, seed)
        out.pixels[~erase_mask] = patch.pixels[~erase_mask]
    except Exception as exc:  # noqa: BLE001 - tagged and re-raised
        raise StageError("stage1", exc) from exc
    out.known_mask[:] = True
    return out


def stage2_blend(patch: Patch, plan: PlacementPlan, inpainter, seed: int = 0) -> Patch:
    staged, _ = apply_placement(patch, plan, include_erase=False)
    zone = plan.transition_zone
    if not zone.any():
        staged.known_mask[:] = True
        return staged
    try:
        staged.pixels = _fill(inpainter, staged.pixels, staged.known_mask, zone, seed)
    except Exception as exc:  # noqa: BLE001
        raise StageError("stage2", exc) from exc
    staged.known_mask[:] = True
    return staged


@dataclass
class OpOutcome:
    ok: bool
    record: dict
    patch: Patch | None = None
    label_patch: np.ndarray | None = None
    new_mask: np.ndarray | None = None
    erased_id: int | None = None
    new_id: int | None = None
    extras: dict = field(default_factory=dict)

    def commit(self, image: np.ndarray, labelmap: np.ndarray) -> None:
        """Write the in-image part of the patched window back; a failed op writes nothing."""
        if not self.ok:
            return
        img_sl, pat_sl = window_slices(self.patch.origin, self.patch.size, image.shape)
        image[img_sl] = self.patch.pixels[pat_sl]
        labelmap[img_sl] = self.label_patch[pat_sl]


def augment_one(image: np.ndarray, labelmap: np.ndarray, plan: PlacementPlan, inpainter,
                new_id: int, seed: int = 0, size: int | None = None) -> OpOutcome:
    """Run stage 1 (replace only) and stage 2 on the target window; never mutates inputs."""
    size = size or plan.nucleus_mask.shape[0]
    center = plan.target.center
    record = {"kind": plan.op_kind, "target": list(center), "target_kind": plan.target.kind,
              "target_key": str(plan.target.key), "rare": str(plan.rare_key), "rare_class": plan.rare_class,
              "stage1": "skipped" if plan.op_kind == "paste" else "pending"}
    try:
        pixels, origin = crop_window(image, center, size, mode="reflect")
        patch = Patch(pixels, origin, (size // 2, size // 2))
        labels, _ = crop_window(labelmap, center, size, mode="constant")
        inside = inside_mask(origin, size, image.shape)
        if plan.op_kind == "replace":
            cleaned = stage1_clean(patch, plan.erase_mask, inpainter, seed=seed)
            record["stage1"] = "done"
        else:
            cleaned = patch
        record["stage1_out"] = digest(cleaned.pixels)
        record["stage2_in"] = digest(cleaned.pixels)
        blended = stage2_blend(cleaned, plan, inpainter, seed=seed + 1)
        new_labels = labels.copy()
        erased = None
        if plan.op_kind == "replace":
            erased = plan.target.instance.instance_id
            new_labels[new_labels == erased] = 0
        new_labels[plan.nucleus_mask] = new_id
        # out-of-image pixels are never written back; keep them as in the source crop
        blended.pixels[~inside] = patch.pixels[~inside]
    except StageError as exc:
        record.update(status="failed", reason=f"inpaint-{exc.stage}", detail=str(exc.cause))
        return OpOutcome(ok=False, record=record)
    except Exception as exc:  # noqa: BLE001 - any failure is a failed op, inputs untouched
        record.update(status="failed", reason="error", detail=f"{type(exc).__name__}: {exc}")
        return OpOutcome(ok=False, record=record)
    record.update(status="ok", new_id=int(new_id), area=int(plan.nucleus_mask.sum()))
    if erased is not None:
        record["erased_id"] = int(erased)
    return OpOutcome(ok=True, record=record, patch=blended, label_patch=new_labels,
                     new_mask=plan.nucleus_mask, erased_id=erased, new_id=new_id)
