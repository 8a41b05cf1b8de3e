"""Run the augmentation for several k on one dataset and tabulate the split.

    python scripts/k_sweep.py DATA OUT --k 200,400,600,800
"""

import argparse

from raremix.pipeline import run


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("data")
    ap.add_argument("out")
    ap.add_argument("--k", default="200,400,600,800")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--patch-size", type=int, default=224)
    args = ap.parse_args()
    reports = run({"data": args.data, "out": args.out, "k": args.k, "seed": args.seed,
                   "patch_size": args.patch_size, "center_size": args.patch_size // 2})
    if not isinstance(reports, dict):
        reports = {int(args.k): reports}
    print(f"{'k':>6}{'ok':>6}{'replace':>9}{'paste':>7}{'failed':>8}")
    for k, rep in sorted(reports.items()):
        print(f"{k:>6}{rep.ops_succeeded:>6}{rep.replace_count:>9}{rep.paste_count:>7}{rep.ops_failed:>8}")


if __name__ == "__main__":
    main()
