"""Simulate, featurize, train and score the held-out split from one config.

    python scripts/train_acceptance.py [configs/acceptance.json] [--out DIR]

Prints held-out accuracy, macro F1, per-class recall and wall time, and
optionally writes the checkpoint and history to DIR.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from hearsight import arraysim, training
from hearsight.arraysim import DIRECTIONS
from hearsight.config import load_config, stage_seed
from hearsight.features import phase_matrix

ROOT = Path(__file__).resolve().parents[1]


def run(config_path: Path, out: Path | None = None, log=print) -> dict:
    cfg = load_config(config_path)
    t0 = time.perf_counter()
    clips = arraysim.make_dataset(
        cfg.geometry, cfg.sim.per_class, cfg.sim.duration_s, cfg.sim.sample_rate,
        stage_seed(cfg.seed, "simulate"), cfg.sim.sim_config(),
    )
    x = np.stack([phase_matrix(c, cfg.stft) for c in clips]).astype(np.float32)
    y = np.array([DIRECTIONS.index(c.label) for c in clips])
    t_feat = time.perf_counter() - t0
    log(f"{len(clips)} clips, features {x.shape[1:]} in {t_feat:.1f} s")

    model_cfg = dataclasses.replace(cfg.model, input_shape=tuple(x.shape[1:]))
    tcfg = dataclasses.replace(cfg.train, seed=stage_seed(cfg.seed, "train"))
    params, history = training.train(model_cfg, x, y, tcfg)
    _, va = training.stratified_split(y, tcfg.val_fraction, tcfg.seed)
    m = training.evaluate(model_cfg, params, x[va], y[va])
    wall = time.perf_counter() - t0

    conf = np.asarray(m["confusion"])
    recall = {d: float(conf[i, i] / conf[i].sum()) for i, d in enumerate(DIRECTIONS)}
    result = {"accuracy": float(m["accuracy"]), "macro_f1": float(m["macro_f1"]),
              "held_out": int(len(va)), "wall_s": wall, "recall": recall}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        training.save_checkpoint(out / "model.jnck", model_cfg, cfg.stft, params)
        training.write_history(history, out / "history.csv")
        (out / "result.json").write_text(json.dumps(result, indent=2))
    return result


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default=ROOT / "configs" / "acceptance.json", type=Path)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    r = run(args.config, args.out)
    print(f"held-out accuracy {r['accuracy']:.4f} (n={r['held_out']}), macro F1 {r['macro_f1']:.4f}")
    print("recall " + ", ".join(f"{k} {v:.2f}" for k, v in r["recall"].items()))
    print(f"wall time {r['wall_s']:.0f} s")


if __name__ == "__main__":
    main()
