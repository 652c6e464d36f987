"""Monte-Carlo Spearman(S, q_norm) across the masking schedule for a few corpus images.

    python scripts/curriculum_trace.py [--epochs 10] [--draws 1000] [--images 4]
"""

import argparse

from specmae.analysis import curriculum_trace
from specmae.synthetic import SceneSpec, generate_scene
from specmae.trainer import prepare_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--draws", type=int, default=1000)
    ap.add_argument("--images", type=int, default=4)
    ap.add_argument("--ratio", type=float, default=0.75)
    args = ap.parse_args()

    q = prepare_dataset([generate_scene(SceneSpec(), i) for i in range(args.images)], 8, 1e-8).q_norm
    print("epoch  gamma  spearman_mean  spearman_std  top_decile_masked")
    for p in curriculum_trace(q, args.epochs, args.ratio, range(args.draws)):
        print(f"{p.epoch:5d}  {p.gamma:5.2f}  {p.spearman_mean:+13.4f}  {p.spearman_std:12.4f}  "
              f"{p.top_decile_masked:17.3f}")


if __name__ == "__main__":
    main()
