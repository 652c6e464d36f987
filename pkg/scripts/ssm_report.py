"""Pooled saliency distribution of a synthetic corpus, printed as a text histogram.

    python scripts/ssm_report.py [--scenes 256] [--out ssm.json]
"""

import argparse
import json

import numpy as np

from specmae.analysis import ssm_distribution
from specmae.synthetic import SceneSpec, generate_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=256)
    ap.add_argument("--bins", type=int, default=30)
    ap.add_argument("--out")
    args = ap.parse_args()

    report = ssm_distribution([generate_scene(SceneSpec(), i) for i in range(args.scenes)], bins=args.bins)
    d = report.ssm
    width = 60 / max(d.counts)
    for lo, c in zip(d.edges, d.counts):
        print(f"{lo:9.3f} | {'#' * int(np.ceil(c * width)) if c else ''} {c}")
    print(f"n={d.n} mean={d.mean:.4f} std={d.std:.4f} skewness={d.skewness:.4f}")
    print(f"top-decile mass={d.top_decile_mass:.4f} top-range fraction={d.top_range_fraction:.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=1)


if __name__ == "__main__":
    main()
