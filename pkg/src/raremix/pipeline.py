"""End-to-end augmentation driver.

Crop context patches around rare, major and background locations, embed and project
them, fit the rare-context Gaussian once, then run ``k`` insert operations that each
sample a target, pick a rare nucleus for it, and blend it in.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset_io as dio
from .config import Config, validate_config
from .context_model import (ContextModelError, MixtureContextModel, PoolExhausted, SelectionState, fit_rare_gaussian,
                            sample_targets, select_rare_nucleus)
from .features import (RandomProjectionEmbedder, SidecarEmbedder, Standardizer, fit_pca, patch_features,
                       patch_key, project)
from .patching import classical_inpaint, crop_patch, crop_window, inside_mask, remove_center
from .placement import LocationRecord, PlacementError, plan_placement
from .progressive import ClassicalInpainter, DiffusionInpainter, augment_one

log = logging.getLogger(__name__)

# independent random streams derived from the master seed
STREAM_BACKGROUND, STREAM_TARGET, STREAM_SELECT, STREAM_INPAINT = 1, 2, 3, 4


def stream(seed: int, *counter: int) -> np.random.Generator:
    return np.random.default_rng([seed, *counter])


def op_seed(seed: int, j: int) -> int:
    return int(stream(seed, STREAM_INPAINT, j).integers(0, 2**31 - 1))


def major_key(ds: dio.Dataset, inst: dio.NucleusInstance) -> str:
    return f"m:{ds.names[inst.image_index]}/{inst.instance_id}"


def background_key(ds: dio.Dataset, index: int, r: int, c: int) -> str:
    return f"b:{ds.names[index]}/{r}/{c}"


@dataclass
class Prepared:
    """Everything computed once per dataset, before the insertion loop."""

    ds: dio.Dataset
    partition: dio.RarityPartition
    rare_features: dict[tuple[int, int], np.ndarray]
    majors: list[LocationRecord]
    backgrounds: list[LocationRecord]
    model: object
    log_liks: dict[str, float]
    notes: list[str] = field(default_factory=list)


def build_embedder(cfg: Config):
    if cfg.embedding == "sidecar":
        return SidecarEmbedder(cfg.embedding_file)
    return RandomProjectionEmbedder(seed=cfg.embedding_seed)


def build_inpainter(cfg: Config):
    if cfg.inpainter == "diffusion":
        from .diffusion import load_checkpoint

        model, sch, _ = load_checkpoint(cfg.checkpoint)
        return DiffusionInpainter(model, sch, n_steps=cfg.ddim_steps, guidance_scale=cfg.guidance_scale,
                                  hard_consistency=cfg.hard_consistency)
    return ClassicalInpainter(method=cfg.fill_method)


def prepare(ds: dio.Dataset, cfg: Config, embedder=None) -> Prepared:
    notes: list[str] = []
    embedder = embedder or build_embedder(cfg)
    part = dio.classify_rarity(ds, cfg.rare_threshold, cfg.misc_labels, cfg.rare_classes)
    notes += part.warnings
    for i, (img, lab) in enumerate(zip(ds.images, ds.labelmaps)):
        locs = dio.sample_background_locations(img.shape, lab, cfg.background_rate, cfg.clearance_radius,
                                               stream(cfg.seed, STREAM_BACKGROUND, i))
        part.background += [(i, r, c) for r, c in locs]

    def context_vector(index, center, cut: bool):
        p = crop_patch(ds.images[index], center, cfg.patch_size)
        if cut:
            p = classical_inpaint(remove_center(p, cfg.center_size), method=cfg.fill_method)
        return patch_features(p, embedder, patch_key(ds.names[index], int(center[0]), int(center[1])))

    raw_rare = [context_vector(n.image_index, n.centroid, True) for n in part.rare]
    raw_major = [context_vector(n.image_index, n.centroid, True) for n in part.major]
    raw_bg = [context_vector(i, (r, c), False) for i, r, c in part.background]
    if len(raw_rare) < 2:
        raise dio.RarityConfigError(f"need at least 2 rare instances to model their context, found {len(raw_rare)}")

    scaler = Standardizer.fit(raw_rare)
    union = scaler(np.stack(raw_rare + raw_major + raw_bg))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pca = fit_pca(union, min(cfg.pca_dim, union.shape[1]))
    notes += [str(w.message) for w in caught]
    Z = project(pca, union)
    nr, nm = len(raw_rare), len(raw_major)
    Zr, Zm, Zb = Z[:nr], Z[nr:nr + nm], Z[nr + nm:]

    if cfg.gmm_components > 1:
        notes.append(f"experimental: {cfg.gmm_components}-component mixture context model")
        model = MixtureContextModel(Zr, cfg.gmm_components, seed=cfg.seed)
    else:
        model = fit_rare_gaussian(Zr, cfg.reg_eps)

    majors = [LocationRecord(major_key(ds, n), "major", n.image_index, n.centroid, Zm[j], n)
              for j, n in enumerate(part.major)]
    backgrounds = [LocationRecord(background_key(ds, i, r, c), "background", i, (r, c), Zb[j])
                   for j, (i, r, c) in enumerate(part.background)]
    recs = majors + backgrounds
    ll = np.atleast_1d(model.log_likelihood(np.stack([r.features for r in recs]))) if recs else []
    log_liks = {r.key: float(v) for r, v in zip(recs, ll)}
    rare_features = {n.key: Zr[j] for j, n in enumerate(part.rare)}
    log.info("rare=%d major=%d background=%d", nr, nm, len(backgrounds))
    return Prepared(ds, part, rare_features, majors, backgrounds, model, log_liks, notes)


def load_replay(path: str | Path) -> list[str]:
    """Target keys from a JSON list or a previous report's op table."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        return [op["target_key"] for op in data.get("ops", []) if "target_key" in op]
    return [str(k) for k in data]


def augment(prep: Prepared, cfg: Config, k: int, inpainter=None, replay: list[str] | None = None) -> tuple[dio.Dataset, dio.AugmentationReport]:
    ds = prep.ds
    inpainter = inpainter or build_inpainter(cfg)
    out = ds.copy()
    rules = {c: {"paste_only": True} for c in cfg.paste_only}
    state = SelectionState(initial_weight=cfg.initial_weight)
    rng_target = stream(cfg.seed, STREAM_TARGET)
    rng_select = stream(cfg.seed, STREAM_SELECT)

    rare_by_key = {n.key: n for n in prep.partition.rare}
    pool_any = [(n.key, prep.rare_features[n.key]) for n in prep.partition.rare]
    pool_major = [(key, x) for key, x in pool_any if not rules.get(rare_by_key[key].class_label, {}).get("paste_only")]
    major_targets = prep.majors if pool_major else []
    notes = list(prep.notes)
    if prep.majors and not pool_major:
        notes.append("all rare classes are paste-only: major targets excluded")
    by_key = {r.key: r for r in major_targets + prep.backgrounds}
    next_id = [int(lab.max(initial=0)) for lab in ds.labelmaps]
    replay_iter = iter(replay) if replay is not None else None

    ops = []
    for j in range(k):
        rec = {"op": j}
        try:
            forced = None
            if replay_iter is not None:
                key = next(replay_iter, None)
                if key is None:
                    raise PoolExhausted("replay sequence exhausted")
                forced = [key]
            (target,) = sample_targets(None, [(r.key, r.features) for r in major_targets],
                                       [(r.key, r.features) for r in prep.backgrounds], 1, state, rng_target,
                                       replay=forced, log_liks=prep.log_liks)
        except ContextModelError as exc:
            reason = "pool-exhausted" if isinstance(exc, PoolExhausted) else "replay-mismatch"
            rec.update(kind="none", status="failed", reason=reason, detail=str(exc))
            ops.append(rec)
            continue
        loc = by_key[target.key]
        pool = pool_major if loc.kind == "major" else pool_any
        rare = rare_by_key[select_rare_nucleus(loc.features, pool, state, rng_select)]
        rec.update(target_key=loc.key, target_kind=loc.kind, log_likelihood=round(target.log_likelihood, 6),
                   rare=f"{ds.names[rare.image_index]}/{rare.instance_id}", rare_class=rare.class_label,
                   kind="replace" if loc.kind == "major" else "paste")
        img, lab = out.images[loc.image_index], out.labelmaps[loc.image_index]
        try:
            source = crop_patch(ds.images[rare.image_index], rare.centroid, cfg.patch_size)
            labels, origin = crop_window(lab, loc.center, cfg.patch_size, mode="constant")
            plan = plan_placement(rare, source, loc, labels, inside_mask(origin, cfg.patch_size, lab.shape),
                                  rules, cfg.overlap_tol)
        except PlacementError as exc:
            rec.update(status="failed", reason=exc.reason, detail=str(exc))
            ops.append(rec)
            continue
        new_id = next_id[loc.image_index] + 1
        outcome = augment_one(img, lab, plan, inpainter, new_id, seed=op_seed(cfg.seed, j), size=cfg.patch_size)
        for key in ("status", "reason", "detail", "new_id", "erased_id", "area", "stage1", "stage1_out", "stage2_in"):
            if key in outcome.record:
                rec[key] = outcome.record[key]
        if outcome.ok:
            outcome.commit(img, lab)
            next_id[loc.image_index] = new_id
            out.class_table[(ds.names[loc.image_index], new_id)] = rare.class_label
        ops.append(rec)

    report = dio.distribution_report(ds, out, ops, prep.partition.rare_classes)
    stored = cfg.to_dict()
    for key in ("out", "report"):
        stored.pop(key, None)
    stored["k"] = k
    report.config = stored
    report.notes = notes
    return out, report


def run(config: dict | Config, dataset: dio.Dataset | None = None, inpainter=None):
    """Run every k in the config. Returns the report, or ``{k: report}`` for a sweep."""
    cfg = validate_config(config)
    ds = dataset if dataset is not None else dio.load_dataset(cfg.data)
    replay = load_replay(cfg.replay_targets) if cfg.replay_targets else None
    ks = cfg.k_values
    if len(ds) == 0 or max(ks) == 0:
        reports = {}
        for k in ks:
            report = dio.distribution_report(ds, ds, [], cfg.rare_classes or ())
            report.config = {**{key: v for key, v in cfg.to_dict().items() if key not in ("out", "report")}, "k": k}
            _emit(ds, report, cfg, k, sweep=len(ks) > 1)
            reports[k] = report
        return reports if len(ks) > 1 else reports[ks[0]]
    prep = prepare(ds, cfg)
    inpainter = inpainter or build_inpainter(cfg)
    reports = {}
    for k in ks:
        out, report = augment(prep, cfg, k, inpainter, replay)
        _emit(out, report, cfg, k, sweep=len(ks) > 1)
        reports[k] = report
    return reports if len(ks) > 1 else reports[ks[0]]


def _emit(ds: dio.Dataset, report: dio.AugmentationReport, cfg: Config, k: int, sweep: bool) -> None:
    if cfg.out:
        out = Path(cfg.out) / f"k{k}" if sweep else Path(cfg.out)
        dio.emit_augmented(ds, report, out)
    if cfg.report:
        path = Path(cfg.report)
        if sweep:
            path = path.with_name(f"{path.stem}_k{k}{path.suffix}")
        dio.write_report(report, path)
