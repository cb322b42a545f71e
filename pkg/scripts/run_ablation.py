#!/usr/bin/env python3
"""Run the bottleneck ablation and write ablation.csv / ablation.md.

Defaults reproduce the headline comparison (500 scenes, 6x6 grid, sigma 0.1,
seeds 0/1/2, equal epoch budget). Use --archs to add genesis/contexta for the
full four-way table.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from captionlab.ablation import AblationSettings, run_ablation  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=500)
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--archs", default="clarity,focalis")
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--out", default="runs/ablation")
    args = parser.parse_args()

    settings = AblationSettings(
        n_scenes=args.n,
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        architectures=tuple(args.archs.split(",")),
        epochs=args.epochs,
    )
    t0 = time.time()
    report = run_ablation(settings, out_dir=args.out, log=print)
    print(f"\ntotal {((time.time() - t0) / 60):.1f} min")
    for arch in settings.architectures:
        print(f"{arch:10s} mean corpus BLEU-4 {report.mean_bleu4(arch):.4f}")
    if {"focalis", "clarity"} <= set(settings.architectures):
        held = report.focalis_beats_clarity_every_seed()
        print(f"focalis > clarity for every seed: {'yes' if held else 'NO'}")
    print(f"report: {args.out}/ablation.md")
    return 0


if __name__ == "__main__":
    sys.exit(main())
