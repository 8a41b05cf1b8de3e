"""Train the toy texture prior end to end and report the smoothed loss ratio.

Equivalent to ``make_textures.py`` followed by ``raremix train-diffusion``, without
touching disk for the tiles.
"""

import argparse
import json
import time

import numpy as np
import torch

from raremix import diffusion as dm
from raremix.synthetic import blob_textures
from raremix.unet import TinyUNet, parameter_count


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="toy_prior.pt")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    tex = blob_textures(args.n, seed=args.seed)
    x = torch.from_numpy(tex.astype(np.float32) / 127.5 - 1).permute(0, 3, 1, 2).contiguous()
    model, sch = TinyUNet(), dm.build_schedule()
    t0 = time.time()
    model, losses = dm.train(model, x, sch, args.steps, seed=args.seed)
    s = dm.smooth(losses)
    info = {"parameters": parameter_count(model), "steps": args.steps, "seconds": round(time.time() - t0, 1),
            "smoothed_initial": float(s[0]), "smoothed_final": float(s[-1]), "ratio": float(s[-1] / s[0])}
    dm.save_checkpoint(args.out, model, sch, info)
    dm.write_loss_curve(args.out.rsplit(".", 1)[0] + ".csv", losses)
    print(json.dumps(info, indent=1))


if __name__ == "__main__":
    main()
