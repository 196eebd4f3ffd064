"""ANOVA + Tukey HSD on per-run accuracies of several seeds of a small model.

    python scripts/stats_demo.py [--runs 5] [--epochs 8] [--out runs.csv]

Trains two tiny configs (2 and 3 blocks) for a few seeds on a small simulated
set, writes model,run_id,accuracy rows and prints the comparison report.
"""

import argparse
import csv
import json

import numpy as np

from hearsight.arraysim import DIRECTIONS, ArrayGeometry, make_dataset
from hearsight.features import StftConfig, phase_matrix
from hearsight.jerrynet import BlockSpec, JerryNetConfig
from hearsight.stats import read_runs, report
from hearsight.training import TrainConfig, evaluate, stratified_split, train

MODELS = {
    "two_block": [BlockSpec(8), BlockSpec(16)],
    "three_block": [BlockSpec(8), BlockSpec(16), BlockSpec(32)],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--out", default="runs.csv")
    args = ap.parse_args()

    stft_cfg = StftConfig(256, 256)
    clips = make_dataset(ArrayGeometry.default(), 10, 1.0, seed=1)
    x = np.stack([phase_matrix(c, stft_cfg) for c in clips]).astype(np.float32)
    y = np.array([DIRECTIONS.index(c.label) for c in clips])

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "run_id", "accuracy"])
        for name, blocks in MODELS.items():
            model = JerryNetConfig(blocks, [32], input_shape=x.shape[1:])
            for run in range(args.runs):
                tcfg = TrainConfig(learning_rate=0.003, optimizer="adam", epochs=args.epochs, seed=run)
                params, _ = train(model, x, y, tcfg)
                _, va = stratified_split(y, tcfg.val_fraction, tcfg.seed)
                acc = evaluate(model, params, x[va], y[va])["accuracy"]
                w.writerow([name, run, f"{acc:.4f}"])
                print(name, run, round(acc, 4))
    print(json.dumps(report(read_runs(args.out)), indent=2))


if __name__ == "__main__":
    main()
