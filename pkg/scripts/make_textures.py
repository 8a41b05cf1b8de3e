"""Write 32x32 synthetic texture tiles for training the diffusion prior."""

import argparse
from pathlib import Path

import cv2

from raremix.synthetic import blob_textures


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, tile in enumerate(blob_textures(args.n, seed=args.seed)):
        cv2.imwrite(str(out / f"tex_{i:05d}.png"), tile[..., ::-1])
    print(f"wrote {args.n} tiles to {out}")


if __name__ == "__main__":
    main()
