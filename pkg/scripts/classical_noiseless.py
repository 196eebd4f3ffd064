"""Sector accuracy of the closed-form DoA baseline on noiseless far-field clips.

    python scripts/classical_noiseless.py [--per-class 50] [--seed 2024]
"""

import argparse
import math
from collections import Counter

from hearsight.arraysim import COMPASS, ArrayGeometry, SimConfig, make_dataset
from hearsight.classical import classical_doa


def run(per_class: int = 50, seed: int = 2024) -> tuple[float, Counter]:
    geometry = ArrayGeometry.default()
    sim = SimConfig(snr_range=(math.inf, math.inf))
    clips = [c for c in make_dataset(geometry, per_class, seed=seed, sim=sim) if c.label in COMPASS]
    misses = Counter()
    for c in clips:
        got = classical_doa(c, geometry)
        if got != c.label:
            misses[(c.label, got)] += 1
    return 1 - sum(misses.values()) / len(clips), misses


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--per-class", type=int, default=50)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    acc, misses = run(args.per_class, args.seed)
    print(f"accuracy {acc:.4f} over {8 * args.per_class} clips")
    for (want, got), n in misses.most_common():
        print(f"  {want} -> {got}: {n}")


if __name__ == "__main__":
    main()
