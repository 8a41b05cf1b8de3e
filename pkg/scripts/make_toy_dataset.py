"""Write the synthetic 3-class toy dataset (one rare class) to disk."""

import argparse

from raremix.dataset_io import save_dataset
from raremix.synthetic import toy_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    ap.add_argument("--images", type=int, default=4)
    ap.add_argument("--size", type=int, default=320)
    ap.add_argument("--per-image", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ds = toy_dataset(n_images=args.images, size=args.size, per_image=args.per_image, seed=args.seed)
    save_dataset(ds, args.out)
    print(ds.class_counts())


if __name__ == "__main__":
    main()
