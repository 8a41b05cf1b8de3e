"""Instance-mask datasets on disk, rarity partition, background locations, reports.

Directory layout::

    <root>/images/<name>.png   8-bit RGB
    <root>/labels/<name>.png   16-bit single channel, instance ids, 0 = background
    <root>/classes.json        {"<name>/<id>": "<class>", ..., "_class_names": [...]}

``_class_names`` is optional and fixes the class order (classes with no instances
survive a round trip); without it the sorted set of labels is used.
"""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import cv2
import numpy as np
from scipy import ndimage

CLASS_NAMES_KEY = "_class_names"
REPORT_FORMAT = "raremix-report"
REPORT_VERSION = 1


class DatasetError(IOError):
    pass


class SchemaError(ValueError):
    pass


class RarityConfigError(ValueError):
    pass


@dataclass
class Dataset:
    names: list[str]
    images: list[np.ndarray]
    labelmaps: list[np.ndarray]
    class_table: dict[tuple[str, int], str]
    class_names: list[str]

    def __len__(self) -> int:
        return len(self.names)

    def validate(self) -> None:
        if not (len(self.names) == len(self.images) == len(self.labelmaps)):
            raise SchemaError("names/images/labelmaps length mismatch")
        for name, img, lab in zip(self.names, self.images, self.labelmaps):
            if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
                raise SchemaError(f"{name}: image must be HxWx3 uint8, got {img.shape} {img.dtype}")
            if lab.shape != img.shape[:2]:
                raise SchemaError(f"{name}: labelmap {lab.shape} does not match image {img.shape[:2]}")
            for iid in np.unique(lab):
                if iid and (name, int(iid)) not in self.class_table:
                    raise SchemaError(f"{name}: instance id {int(iid)} has no class entry")
        unknown = set(self.class_table.values()) - set(self.class_names)
        if unknown:
            raise SchemaError(f"class labels not in class_names: {sorted(unknown)}")

    def copy(self) -> "Dataset":
        return Dataset(list(self.names), [im.copy() for im in self.images],
                       [lab.copy() for lab in self.labelmaps], dict(self.class_table), list(self.class_names))

    def class_counts(self) -> dict[str, int]:
        """Instances per class, recounted from the labelmaps."""
        counts = {c: 0 for c in self.class_names}
        for name, lab in zip(self.names, self.labelmaps):
            for iid in np.unique(lab):
                if iid:
                    counts[self.class_table[(name, int(iid))]] += 1
        return counts


@dataclass(frozen=True)
class NucleusInstance:
    image_index: int
    instance_id: int
    class_label: str
    centroid: tuple[int, int]
    mask: np.ndarray  # cropped to bbox
    bbox: tuple[int, int, int, int]  # r0, c0, r1, c1 (exclusive end)

    @property
    def key(self) -> tuple[int, int]:
        return (self.image_index, self.instance_id)

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def full_mask(self, shape) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        r0, c0, r1, c1 = self.bbox
        out[r0:r1, c0:c1] = self.mask
        return out


@dataclass
class RarityPartition:
    rare: list[NucleusInstance]
    major: list[NucleusInstance]
    background: list[tuple[int, int, int]] = field(default_factory=list)  # (image index, row, col)
    rare_classes: frozenset = frozenset()
    warnings: list[str] = field(default_factory=list)


def _read_png(path: Path, flags: int) -> np.ndarray:
    arr = cv2.imread(str(path), flags)
    if arr is None:
        raise DatasetError(f"cannot read {path}")
    return arr


def load_dataset(root_path: str | os.PathLike) -> Dataset:
    root = Path(root_path)
    img_dir, lab_dir = root / "images", root / "labels"
    imgs = {p.stem: p for p in img_dir.glob("*.png")} if img_dir.is_dir() else {}
    labs = {p.stem: p for p in lab_dir.glob("*.png")} if lab_dir.is_dir() else {}
    for stem in sorted(set(imgs) ^ set(labs)):
        missing = (lab_dir if stem in imgs else img_dir) / f"{stem}.png"
        raise DatasetError(f"missing pair for {stem}: {missing} not found")
    side = root / "classes.json"
    raw = json.loads(side.read_text()) if side.exists() else {}
    if imgs and not side.exists():
        raise DatasetError(f"missing class table {side}")
    order = raw.pop(CLASS_NAMES_KEY, None)
    table = {}
    for key, label in raw.items():
        name, _, iid = key.rpartition("/")
        if not name or not iid.isdigit():
            raise SchemaError(f"bad class-table key {key!r}; expected '<name>/<id>'")
        table[(name, int(iid))] = str(label)
    names = sorted(imgs)
    images, labelmaps = [], []
    for name in names:
        bgr = _read_png(imgs[name], cv2.IMREAD_COLOR)
        images.append(np.ascontiguousarray(bgr[..., ::-1]))
        lab = _read_png(labs[name], cv2.IMREAD_UNCHANGED)
        if lab.ndim != 2:
            raise SchemaError(f"{labs[name]}: labelmap must be single channel")
        labelmaps.append(lab.astype(np.int64))
    class_names = list(order) if order is not None else sorted(set(table.values()))
    ds = Dataset(names, images, labelmaps, table, class_names)
    ds.validate()
    return ds


def save_dataset(ds: Dataset, out_path: str | os.PathLike) -> None:
    out = Path(out_path)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "labels").mkdir(parents=True, exist_ok=True)
        for name, img, lab in zip(ds.names, ds.images, ds.labelmaps):
            if lab.max(initial=0) > np.iinfo(np.uint16).max:
                raise SchemaError(f"{name}: instance id exceeds 16 bits")
            if not cv2.imwrite(str(out / "images" / f"{name}.png"), np.ascontiguousarray(img[..., ::-1])):
                raise DatasetError(f"failed to write {out / 'images' / (name + '.png')}")
            if not cv2.imwrite(str(out / "labels" / f"{name}.png"), lab.astype(np.uint16)):
                raise DatasetError(f"failed to write {out / 'labels' / (name + '.png')}")
        present = {(n, int(i)) for n, lab in zip(ds.names, ds.labelmaps) for i in np.unique(lab) if i}
        table = {f"{n}/{i}": ds.class_table[(n, i)] for n, i in sorted(present)}
        table[CLASS_NAMES_KEY] = list(ds.class_names)
        (out / "classes.json").write_text(json.dumps(table, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise DatasetError(f"writing dataset to {out}: {exc}") from exc


def enumerate_instances(ds: Dataset, index: int) -> list[NucleusInstance]:
    name, lab = ds.names[index], ds.labelmaps[index]
    out = []
    for iid, sl in enumerate(ndimage.find_objects(lab), start=1):
        if sl is None:
            continue
        mask = lab[sl] == iid
        rr, cc = np.nonzero(mask)
        r0, c0 = sl[0].start, sl[1].start
        # nearest mask pixel to the mean, so the centroid is always on the nucleus
        mr, mc = rr.mean(), cc.mean()
        j = int(np.argmin((rr - mr) ** 2 + (cc - mc) ** 2))
        out.append(NucleusInstance(
            image_index=index, instance_id=iid, class_label=ds.class_table[(name, iid)],
            centroid=(r0 + int(rr[j]), c0 + int(cc[j])), mask=mask,
            bbox=(r0, c0, sl[0].stop, sl[1].stop)))
    return out


def rare_classes_from_counts(counts: dict[str, int], freq_threshold: float = 0.05,
                             misc_labels: Iterable[str] = ("miscellaneous",)) -> set[str]:
    if not 0.0 < freq_threshold < 1.0:
        raise RarityConfigError(f"freq_threshold must be in (0, 1), got {freq_threshold}")
    misc = {m.lower() for m in misc_labels}
    total = sum(counts.values())
    return {c for c, n in counts.items()
            if (total > 0 and n / total < freq_threshold) or c.lower() in misc}


def classify_rarity(ds: Dataset, freq_threshold: float = 0.05,
                    misc_labels: Iterable[str] = ("miscellaneous",),
                    rare_classes: Iterable[str] | None = None) -> RarityPartition:
    """Split instances into rare and major pools.

    A class is rare if its share of all instances is below ``freq_threshold`` or it is a
    miscellaneous label; ``rare_classes`` overrides the rule.
    """
    counts = ds.class_counts()
    rare = set(rare_classes) if rare_classes is not None else rare_classes_from_counts(counts, freq_threshold, misc_labels)
    unknown = rare - set(ds.class_names)
    if unknown:
        raise RarityConfigError(f"unknown rare classes: {sorted(unknown)}")
    present = {c for c, n in counts.items() if n > 0}
    if present and present <= rare:
        raise RarityConfigError("every class is rare: no major pool to replace")
    part = RarityPartition(rare=[], major=[], rare_classes=frozenset(rare))
    for i in range(len(ds)):
        for inst in enumerate_instances(ds, i):
            (part.rare if inst.class_label in rare else part.major).append(inst)
    if not part.rare:
        part.warnings.append("no rare-class instances: nothing to augment")
    return part


def clearance_map(labelmap: np.ndarray) -> np.ndarray:
    """Euclidean distance from each pixel to the nearest instance pixel (inf if none)."""
    fg = labelmap != 0
    if not fg.any():
        return np.full(labelmap.shape, np.inf)
    return ndimage.distance_transform_edt(~fg)


def sample_background_locations(image_dims, labelmap: np.ndarray, rate: float,
                                clearance_radius: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniform candidate pixels, ``floor(rate*H*W)`` draws, kept if no instance pixel
    lies within ``clearance_radius``. Duplicates are dropped, draw order kept."""
    if rate < 0:
        raise ValueError("rate must be >= 0")
    h, w = image_dims[:2]
    n = int(np.floor(rate * h * w))
    if n == 0:
        return []
    rows = rng.integers(0, h, size=n)
    cols = rng.integers(0, w, size=n)
    dist = clearance_map(labelmap)
    keep, seen = [], set()
    for r, c in zip(rows.tolist(), cols.tolist()):
        if dist[r, c] > clearance_radius and (r, c) not in seen:
            seen.add((r, c))
            keep.append((r, c))
    return keep


@dataclass
class AugmentationReport:
    class_names: list[str]
    counts_before: dict[str, int]
    counts_after: dict[str, int]
    rare_classes: list[str] = field(default_factory=list)
    ops: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def deltas(self) -> dict[str, int]:
        return {c: self.counts_after[c] - self.counts_before[c] for c in self.class_names}

    @property
    def ops_attempted(self) -> int:
        return len(self.ops)

    @property
    def ops_succeeded(self) -> int:
        return sum(op["status"] == "ok" for op in self.ops)

    @property
    def ops_failed(self) -> int:
        return self.ops_attempted - self.ops_succeeded

    @property
    def replace_count(self) -> int:
        return sum(op["status"] == "ok" and op["kind"] == "replace" for op in self.ops)

    @property
    def paste_count(self) -> int:
        return sum(op["status"] == "ok" and op["kind"] == "paste" for op in self.ops)

    def failure_reasons(self) -> dict[str, int]:
        return dict(Counter(op.get("reason", "") for op in self.ops if op["status"] != "ok"))

    def check_conservation(self) -> list[str]:
        """Violated bookkeeping identities (empty when the report is consistent)."""
        problems = []
        d = self.deltas
        rare_up = sum(d[c] for c in self.rare_classes)
        major_down = -sum(d[c] for c in self.class_names if c not in self.rare_classes)
        if self.replace_count + self.paste_count != self.ops_succeeded:
            problems.append("replace + paste != succeeded")
        if rare_up != self.ops_succeeded:
            problems.append(f"rare delta {rare_up} != ops succeeded {self.ops_succeeded}")
        if major_down != self.replace_count:
            problems.append(f"major decrease {major_down} != replace count {self.replace_count}")
        return problems

    def summary(self) -> dict:
        return {
            "ops_attempted": self.ops_attempted,
            "ops_succeeded": self.ops_succeeded,
            "ops_failed": self.ops_failed,
            "replace_count": self.replace_count,
            "paste_count": self.paste_count,
        }

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "summary": self.summary(),
            "failure_reasons": self.failure_reasons(),
            "rare_classes": sorted(self.rare_classes),
            "class_names": list(self.class_names),
            "counts": {c: {"before": self.counts_before[c], "after": self.counts_after[c],
                           "delta": self.deltas[c]} for c in self.class_names},
            "config": self.config,
            "notes": list(self.notes),
            "ops": self.ops,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationReport":
        if d.get("format") != REPORT_FORMAT:
            raise SchemaError("not an augmentation report")
        names = d["class_names"]
        return cls(class_names=names,
                   counts_before={c: d["counts"][c]["before"] for c in names},
                   counts_after={c: d["counts"][c]["after"] for c in names},
                   rare_classes=list(d.get("rare_classes", [])), ops=list(d.get("ops", [])),
                   config=dict(d.get("config", {})), notes=list(d.get("notes", [])))

    def format_table(self) -> str:
        lines = [f"{'class':<20}{'before':>9}{'after':>9}{'delta':>8}"]
        for c in self.class_names:
            mark = " *" if c in self.rare_classes else ""
            lines.append(f"{c + mark:<20}{self.counts_before[c]:>9}{self.counts_after[c]:>9}{self.deltas[c]:>+8}")
        if self.ops:
            lines.append(" ".join(f"{k}={v}" for k, v in self.summary().items()))
        return "\n".join(lines)


def distribution_report(before: Dataset, after: Dataset, ops: list[dict] | None = None,
                        rare_classes: Iterable[str] = ()) -> AugmentationReport:
    if list(before.class_names) != list(after.class_names):
        raise SchemaError(f"class names differ: {before.class_names} vs {after.class_names}")
    return AugmentationReport(class_names=list(before.class_names), counts_before=before.class_counts(),
                              counts_after=after.class_counts(), rare_classes=sorted(rare_classes),
                              ops=list(ops or []))


def write_report(report: AugmentationReport, path: str | os.PathLike) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(report.to_json())
    except OSError as exc:
        raise DatasetError(f"writing report {path}: {exc}") from exc


def read_report(path: str | os.PathLike) -> AugmentationReport:
    return AugmentationReport.from_dict(json.loads(Path(path).read_text()))


def emit_augmented(ds: Dataset, report: AugmentationReport, out_path: str | os.PathLike,
                   report_name: str = "report.json") -> None:
    save_dataset(ds, out_path)
    write_report(report, Path(out_path) / report_name)
