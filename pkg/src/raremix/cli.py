"""Command line: ``raremix augment | train-diffusion | report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset_io as dio
from .config import ConfigError, load_config_file, validate_config

log = logging.getLogger("raremix")

# flag name -> config key, for flags whose value is passed through unchanged
AUGMENT_FLAGS = ["data", "out", "k", "rare_classes", "rare_threshold", "paste_only", "inpainter", "checkpoint",
                 "ddim_steps", "guidance_scale", "seed", "report", "pca_dim", "background_rate", "fill_method",
                 "embedding", "embedding_file", "replay_targets", "overlap_tol"]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="raremix", description="Rare-class nucleus augmentation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("augment", help="insert k rare nuclei into a dataset")
    a.add_argument("--config", help="YAML/JSON file; explicit flags override it")
    a.add_argument("--data")
    a.add_argument("--out")
    a.add_argument("--k", help="integer or comma list for a sweep, e.g. 200,400,600")
    rare = a.add_mutually_exclusive_group()
    rare.add_argument("--rare-classes", dest="rare_classes", help="comma list overriding the rarity rule")
    rare.add_argument("--rare-threshold", dest="rare_threshold", type=float)
    a.add_argument("--paste-only", dest="paste_only", help="comma list of classes never used for replacement")
    a.add_argument("--inpainter", choices=["classical", "diffusion"])
    a.add_argument("--checkpoint")
    a.add_argument("--ddim-steps", dest="ddim_steps", type=int)
    a.add_argument("--guidance-scale", dest="guidance_scale", type=float)
    a.add_argument("--seed", type=int)
    a.add_argument("--report")
    a.add_argument("--pca-dim", dest="pca_dim", type=int)
    a.add_argument("--background-rate", dest="background_rate", type=float)
    a.add_argument("--fill-method", dest="fill_method", choices=["harmonic", "navier-stokes"])
    a.add_argument("--embedding", choices=["random", "sidecar"])
    a.add_argument("--embedding-file", dest="embedding_file")
    a.add_argument("--replay-targets", dest="replay_targets", help="JSON key list or a previous report")
    a.add_argument("--overlap-tol", dest="overlap_tol", type=int)
    a.add_argument("--no-hard-consistency", dest="hard_consistency", action="store_false", default=None)

    t = sub.add_parser("train-diffusion", help="train the texture diffusion prior")
    t.add_argument("--textures", required=True, help="directory of RGB PNG tiles")
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--out", required=True, help="checkpoint path; the loss curve goes next to it as .csv")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=2e-3)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--base", type=int, default=32, help="U-Net width")

    r = sub.add_parser("report", help="class-count deltas between two datasets")
    r.add_argument("--before", required=True)
    r.add_argument("--after", required=True)
    r.add_argument("--rare-classes", dest="rare_classes", default="")
    r.add_argument("--json", action="store_true", help="print the JSON report instead of a table")
    return ap


def augment_config(args: argparse.Namespace) -> dict:
    cfg = load_config_file(args.config) if args.config else {}
    for key in AUGMENT_FLAGS + ["hard_consistency"]:
        v = getattr(args, key)
        if v is not None:
            cfg[key] = v
    return cfg


def cmd_augment(args) -> int:
    from .pipeline import run

    cfg = validate_config(augment_config(args))
    if not cfg.data:
        raise ConfigError(["--data is required (flag or config file)"])
    t0 = time.time()
    result = run(cfg)
    reports = result if isinstance(result, dict) else {cfg.k_values[0]: result}
    for k, rep in reports.items():
        print(f"k={k}")
        print(rep.format_table())
        bad = rep.check_conservation()
        if bad:
            print("conservation check failed: " + "; ".join(bad), file=sys.stderr)
            return 1
    log.info("done in %.1fs", time.time() - t0)
    return 0


def read_textures(directory: str | Path) -> np.ndarray:
    import cv2

    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise dio.DatasetError(f"no PNG textures in {directory}")
    tiles = []
    for p in paths:
        bgr = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if bgr is None:
            raise dio.DatasetError(f"cannot read {p}")
        tiles.append(bgr[..., ::-1])
    shapes = {t.shape for t in tiles}
    if len(shapes) != 1:
        raise dio.DatasetError(f"textures differ in size: {sorted(shapes)}")
    return np.stack(tiles)


def cmd_train(args) -> int:
    import torch

    from . import diffusion as dm
    from .unet import TinyUNet, parameter_count

    tex = read_textures(args.textures)
    x = torch.from_numpy(tex.astype(np.float32) / 127.5 - 1.0).permute(0, 3, 1, 2).contiguous()
    torch.manual_seed(args.seed)
    model = TinyUNet(base=args.base)
    sch = dm.build_schedule()
    log.info("training %d-parameter model on %d tiles", parameter_count(model), len(x))
    t0 = time.time()
    model, losses = dm.train(model, x, sch, args.steps, lr=args.lr, batch_size=args.batch_size, seed=args.seed)
    seconds = time.time() - t0
    s = dm.smooth(losses)
    info = {"steps": args.steps, "seed": args.seed, "seconds": round(seconds, 1), "n_textures": len(x),
            "smoothed_initial": float(s[0]) if len(s) else None, "smoothed_final": float(s[-1]) if len(s) else None}
    dm.save_checkpoint(args.out, model, sch, info)
    dm.write_loss_curve(Path(args.out).with_suffix(".csv"), losses)
    print(json.dumps(info))
    return 0


def cmd_report(args) -> int:
    before, after = dio.load_dataset(args.before), dio.load_dataset(args.after)
    rare = [c for c in args.rare_classes.split(",") if c]
    rep = dio.distribution_report(before, after, rare_classes=rare)
    print(rep.to_json() if args.json else rep.format_table())
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    handler = {"augment": cmd_augment, "train-diffusion": cmd_train, "report": cmd_report}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2
    except (dio.DatasetError, dio.SchemaError, dio.RarityConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
