"""Pretrain all four masking strategies on the default synthetic corpus and write report.json.

    python scripts/desk_ablation.py --out runs/ablation [--scenes 256] [--epochs 50]
"""

import argparse
import time
from dataclasses import replace

from specmae.analysis import compare_strategies
from specmae.masking import STRATEGIES
from specmae.synthetic import SceneSpec, generate_scene
from specmae.trainer import desk_profile


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--scenes", type=int, default=256)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    train, model = desk_profile(seed=args.seed)
    train = replace(train, total_epochs=args.epochs, warmup_epochs=min(train.warmup_epochs, args.epochs - 1))
    corpus = [generate_scene(SceneSpec(), i) for i in range(args.scenes)]
    t0 = time.perf_counter()
    report = compare_strategies(train, STRATEGIES, corpus, model)
    path = report.write(args.out)
    for name, run in report.runs.items():
        print(f"{name:16s} first {run.losses[0]:.5f} final {run.losses[-1]:.5f} "
              f"ratio {run.losses[-1] / run.losses[0]:.3f}")
    print(f"{time.perf_counter() - t0:.0f} s; report at {path}")


if __name__ == "__main__":
    main()
