"""Command-line entry point: ``hearsight <command> [options]``.

Commands and the files they read and write:

  simulate       DIR/clip_NNNN.wav (4-ch float32) + clip_NNNN.json sidecar
  featurize      DIR/features/clip_NNNN.pmx (phase matrix tensor) + manifest.json
  train          checkpoint .jnck + .json sidecar, history CSV
  eval           metrics JSON on stdout
  predict        {"label", "probs"} JSON on stdout
  classify       {"scores", "selected"} JSON on stdout
  fit-templates  class templates JSON
  fuse           selected box JSON on stdout (or --out)
  loc-metrics    {"ciou_rate", "auc", "curve"} JSON on stdout
  loop           event/transition/message JSON lines on stdout (or --out)
  stats          ANOVA + Tukey report JSON on stdout

Exit status: 0 success, 1 domain error (JSON diagnostic with module,
operation and message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from hearsight import arraysim, classical, classifier, fusion, loop, stats, training
from hearsight.arraysim import DIRECTIONS, ArrayGeometry
from hearsight.config import RunConfig, load_config, stage_seed
from hearsight.errors import DomainError
from hearsight.features import StftConfig, phase_matrix, read_tensor, write_tensor

log = logging.getLogger("hearsight")

MANIFEST = "manifest.json"
TENSOR_SUFFIX = ".pmx"

FORMATS = """\
file formats:
  clip       4-channel WAV (float32 or int16) with a <stem>.json sidecar
             {label, azimuth_deg, distance_m, snr_db, seed, sound_class, ...}
  features   <stem>.pmx: b"PMX1" + 3 x uint32 dims + float32 (3, F, T) payload;
             manifest.json {stft, stft_hash, items: [{tensor, label, clip}]}
  checkpoint .jnck binary (config hashes + tensor directory, float32) + .json sidecar
  config     JSON, sections seed/geometry/sim/stft/model/train/classifier/
             fusion/loop/paths; unknown keys are rejected
  boxes      JSON lines {class, confidence, x, y, w, h}
  map        binary PGM (P5, 8-bit, value/255) or a (1, H, W) .pmx tensor
  frame      JSON {boxes, map, image_size: [W, H]} (paths relative to the file)
  events     JSON lines {t, type: audio|image|reset, path}
  runs       CSV with columns model, run_id, accuracy
"""


def _emit(obj, out: str | None = None):
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


# -- simulate / featurize ----------------------------------------------------


def cmd_simulate(args, cfg: RunConfig) -> int:
    sim = cfg.sim
    per_class = args.per_class if args.per_class is not None else sim.per_class
    sim_cfg = sim.sim_config()
    if args.noiseless:
        sim_cfg = dataclasses.replace(sim_cfg, snr_range=(float("inf"), float("inf")))
    if args.amplify is not None:
        sim_cfg = dataclasses.replace(sim_cfg, amplify_gain=args.amplify)
    clips = arraysim.make_dataset(
        cfg.geometry, per_class, sim.duration_s, sim.sample_rate, stage_seed(cfg.seed, "simulate"), sim_cfg
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, clip in enumerate(clips):
        arraysim.save_clip(clip, out / f"clip_{i:04d}.wav")
    (out / "geometry.json").write_text(json.dumps(cfg.geometry.to_dict(), indent=2))
    log.info("wrote %d clips to %s", len(clips), out)
    return 0


def featurize_dir(data: Path, stft_cfg: StftConfig, out: Path | None = None):
    """Write one tensor per clip plus a manifest. Returns (manifest, failures)."""
    out = out or data / "features"
    out.mkdir(parents=True, exist_ok=True)
    items, failures = [], []
    for wav in sorted(data.glob("*.wav")):
        try:
            clip = arraysim.load_clip(wav)
            pm = phase_matrix(clip, stft_cfg)
        except DomainError as exc:
            log.error("%s: %s", wav.name, exc)
            failures.append(exc)
            continue
        t = write_tensor(out / (wav.stem + TENSOR_SUFFIX), pm)
        items.append({"tensor": t.name, "label": clip.label, "clip": wav.name, "shape": list(pm.shape)})
    manifest = {"stft": dataclasses.asdict(stft_cfg), "stft_hash": stft_cfg.config_hash(), "items": items}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest, failures


def cmd_featurize(args, cfg: RunConfig) -> int:
    data = Path(args.data)
    if not data.is_dir():
        raise DomainError("cli", "featurize", f"{data} is not a directory")
    manifest, failures = featurize_dir(data, cfg.stft, Path(args.out) if args.out else None)
    log.info("featurized %d clips", len(manifest["items"]))
    if failures:
        raise DomainError("cli", "featurize", f"{len(failures)} file(s) failed: " + "; ".join(e.message for e in failures))
    if not manifest["items"]:
        raise DomainError("cli", "featurize", f"no WAV files in {data}")
    return 0


def load_features(data: Path, stft_cfg: StftConfig | None = None):
    """(X, labels, stft_hash) from a features manifest, or straight from WAVs.

    ``data`` may be a features directory, a clip directory holding a
    ``features/`` subdirectory, or a bare clip directory (featurized in memory
    with ``stft_cfg``).
    """
    for d in (data, data / "features"):
        if (d / MANIFEST).exists():
            man = json.loads((d / MANIFEST).read_text())
            xs = [read_tensor(d / it["tensor"]) for it in man["items"]]
            labels = [it["label"] for it in man["items"]]
            if not xs:
                raise DomainError("cli", "load_features", f"{d / MANIFEST} lists no items")
            return np.stack(xs), labels, man["stft_hash"], StftConfig(**man["stft"])
    stft_cfg = stft_cfg or StftConfig()
    wavs = sorted(data.glob("*.wav"))
    if not wavs:
        raise DomainError("cli", "load_features", f"no features manifest or WAV files in {data}")
    clips = [arraysim.load_clip(w) for w in wavs]
    return np.stack([phase_matrix(c, stft_cfg) for c in clips]), [c.label for c in clips], stft_cfg.config_hash(), stft_cfg


# -- doa model ----------------------------------------------------------------


def cmd_train(args, cfg: RunConfig) -> int:
    x, labels, _, stft_cfg = load_features(Path(args.data), cfg.stft)
    if any(l is None for l in labels):
        raise DomainError("cli", "train", "every clip needs a direction label")
    model_cfg = dataclasses.replace(cfg.model, input_shape=tuple(x.shape[1:]))
    tcfg = dataclasses.replace(cfg.train, seed=stage_seed(cfg.seed, "train"))
    if args.epochs is not None:
        tcfg = dataclasses.replace(tcfg, epochs=args.epochs)
    val_x = val_y = None
    if tcfg.val_fraction == 0 or len(labels) < 2 * len(set(labels)):
        # too few clips to hold any out: validate on the training set
        val_x, val_y = x, labels
    params, history = training.train(model_cfg, x, labels, tcfg, val_x, val_y)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(out, model_cfg, stft_cfg, params)
    hist = Path(args.history) if args.history else out.with_name(out.stem + "_history.csv")
    training.write_history(history, hist)
    last = history[-1] if history else None
    _emit({"checkpoint": str(out), "history": str(hist), "final": dataclasses.asdict(last) if last else None})
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    model_cfg, stft_cfg, params, feat_hash = training.load_checkpoint(args.model)
    x, labels, data_hash, _ = load_features(Path(args.data), stft_cfg)
    if data_hash != feat_hash:
        raise DomainError(
            "cli", "eval", f"config hash mismatch: checkpoint features {feat_hash} vs data features {data_hash}"
        )
    if tuple(x.shape[1:]) != model_cfg.input_shape:
        raise DomainError("cli", "eval", f"data shape {x.shape[1:]} does not match model input {model_cfg.input_shape}")
    metrics = training.evaluate(model_cfg, params, x, labels)
    metrics["confusion"] = np.asarray(metrics["confusion"]).tolist()
    metrics["classes"] = list(DIRECTIONS)
    _emit(metrics, args.out)
    return 0


class ModelLocator:
    """clip -> direction label using a JerryNet checkpoint."""

    def __init__(self, model_path):
        self.model_cfg, self.stft_cfg, self.params, _ = training.load_checkpoint(model_path)

    def probs(self, clip) -> np.ndarray:
        pm = phase_matrix(clip, self.stft_cfg)
        if pm.shape != self.model_cfg.input_shape:
            raise DomainError("doa-model", "forward", f"clip gives {pm.shape}, model expects {self.model_cfg.input_shape}")
        return training.predict_clip_probs(self.model_cfg, self.stft_cfg, self.params, pm)

    def __call__(self, clip) -> str:
        return DIRECTIONS[int(np.argmax(self.probs(clip)))]


def cmd_predict(args, cfg: RunConfig) -> int:
    loc = ModelLocator(args.model)
    p = loc.probs(arraysim.load_clip(args.clip))
    _emit({"label": DIRECTIONS[int(np.argmax(p))], "probs": dict(zip(DIRECTIONS, p.tolist()))})
    return 0


# -- classifier ---------------------------------------------------------------


def _classifier_fn(templates_path, cfg: RunConfig, threshold: float | None = None):
    store = classifier.TemplateStore.load(templates_path)
    provider = classifier.DeskEmbeddingProvider(store)
    prio = classifier.PriorityList(cfg.classifier.priority)
    thr = cfg.classifier.threshold if threshold is None else threshold

    def run(clip):
        return classifier.classify(clip, provider, store.names, prio, thr, cfg.classifier.temperature)

    return run


def cmd_classify(args, cfg: RunConfig) -> int:
    scores, selected = _classifier_fn(args.templates, cfg, args.threshold)(arraysim.load_clip(args.clip))
    _emit({"scores": {s.class_name: s.prob for s in scores}, "selected": selected})
    return 0


def cmd_fit_templates(args, cfg: RunConfig) -> int:
    wavs = sorted(Path(args.data).glob("*.wav"))
    if not wavs:
        raise DomainError("classifier", "fit_templates", f"no WAV files in {args.data}")
    store = classifier.fit_templates(arraysim.load_clip(w) for w in wavs)
    store.save(args.out)
    _emit({"templates": str(args.out), "classes": store.names})
    return 0


# -- fusion -------------------------------------------------------------------


def _result_dict(res: fusion.SelectionResult) -> dict:
    b, pb = res.chosen.box, res.pseudo_box
    return {
        "class": res.chosen.label,
        "confidence": res.chosen.confidence,
        "x": b.x, "y": b.y, "w": b.w, "h": b.h,
        "iou": res.iou,
        "pseudo_box": [pb.x, pb.y, pb.w, pb.h],
    }


def cmd_fuse(args, cfg: RunConfig) -> int:
    m = fusion.read_map(args.map)
    size = tuple(args.image_size) if args.image_size else (m.shape[1], m.shape[0])
    cands = fusion.read_candidates(args.boxes, size)
    tau = cfg.fusion.tau if args.tau is None else args.tau
    gate = fusion.DoAGateConfig(cfg.fusion.gate or args.gate, tuple(cfg.fusion.band))
    res = fusion.select_box(cands, m, tau, args.doa, gate)
    _emit(_result_dict(res), args.out)
    return 0


def cmd_loc_metrics(args, cfg: RunConfig) -> int:
    """Ground truth: JSON lines {id, x, y, w, h}; predictions: PRED/<id>.json as written by ``fuse``."""
    pred_dir = Path(args.pred)
    pairs = []
    try:
        lines = Path(args.gt).read_text().splitlines()
    except OSError as exc:
        raise DomainError("fusion", "dataset_metrics", str(exc)) from exc
    for line in lines:
        if not line.strip():
            continue
        g = json.loads(line)
        gt = fusion.BBox(int(g["x"]), int(g["y"]), int(g["w"]), int(g["h"]))
        pf = pred_dir / f"{g['id']}.json"
        pred = None
        if pf.exists():
            p = json.loads(pf.read_text())
            pred = fusion.BBox(int(p["x"]), int(p["y"]), int(p["w"]), int(p["h"]))
        pairs.append((pred, gt))
    m = fusion.dataset_metrics(pairs, args.threshold)
    m.pop("ious")
    _emit(m)
    return 0


def load_frame(path) -> loop.ImageFrame:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
        size = tuple(d["image_size"])
        cands = fusion.read_candidates(path.parent / d["boxes"], size)
        m = fusion.read_map(path.parent / d["map"])
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError("pipeline-loop", "load_frame", f"{path}: {exc}") from exc
    return loop.ImageFrame(cands, m)


# -- loop -----------------------------------------------------------------


def cmd_loop(args, cfg: RunConfig) -> int:
    geometry = ArrayGeometry.from_dict(json.loads(Path(args.geometry).read_text())) if args.geometry else cfg.geometry
    if args.locator == "classical":
        def locate(clip):
            return classical.classical_doa(clip, geometry)
    else:
        if not args.model:
            raise DomainError("cli", "loop", "--model is required with the model locator")
        locate = ModelLocator(args.model)
    run_cls = _classifier_fn(args.templates, cfg)
    gate = fusion.DoAGateConfig(cfg.fusion.gate, tuple(cfg.fusion.band))

    def classify(clip):
        return run_cls(clip)[1]

    def fuse(frame, direction, sound_class):
        return fusion.select_box(frame.candidates, frame.loc_map, cfg.fusion.tau, direction, gate)

    pipe = loop.Pipeline(locate, classify, fuse, cfg.loop, load_frame)
    if args.events:
        events = loop.read_events(args.events, arraysim.load_clip)
    else:
        wavs = sorted(Path(args.replay).glob("*.wav"))
        events = [loop.AudioWindow(arraysim.load_clip(w), 2.0 * i) for i, w in enumerate(wavs)]
    sink = open(args.out, "w") if args.out else sys.stdout
    try:
        for ev, _, out in pipe.run(events):
            for rec in loop.output_records(ev, out):
                sink.write(json.dumps(rec) + "\n")
    finally:
        if args.out:
            sink.close()
    return 0


def cmd_stats(args, cfg: RunConfig) -> int:
    _emit(stats.report(stats.read_runs(args.runs), args.alpha))
    return 0


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hearsight",
        description="Direction-of-arrival, sound classification and box fusion for a wearable array.",
        epilog=FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--config", help="JSON run config (flags override it)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help, description=help, epilog=FORMATS,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.set_defaults(fn=fn)
        sp.add_argument("--config", default=argparse.SUPPRESS, help="JSON run config")
        return sp

    s = add("simulate", cmd_simulate, "synthesize a labelled 4-channel dataset")
    s.add_argument("--per-class", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--noiseless", action="store_true", help="no sensor noise")
    s.add_argument("--amplify", type=float, help="inter-channel difference gain (>= 1)")

    s = add("featurize", cmd_featurize, "write phase-matrix tensors and a manifest")
    s.add_argument("--data", required=True)
    s.add_argument("--out", help="output dir (default DATA/features)")

    s = add("train", cmd_train, "train JerryNet")
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", default="model.jnck")
    s.add_argument("--history", help="CSV path (default <out>_history.csv)")

    s = add("eval", cmd_eval, "accuracy, macro-F1 and confusion of a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out")

    s = add("predict", cmd_predict, "direction of one clip")
    s.add_argument("--model", required=True)
    s.add_argument("--clip", required=True)

    s = add("classify", cmd_classify, "score sound classes of one clip")
    s.add_argument("--clip", required=True)
    s.add_argument("--templates", required=True)
    s.add_argument("--threshold", type=float)

    s = add("fit-templates", cmd_fit_templates, "fit class templates from labelled clips")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)

    s = add("fuse", cmd_fuse, "select a candidate box with a localization map")
    s.add_argument("--boxes", required=True)
    s.add_argument("--map", required=True)
    s.add_argument("--tau", type=float)
    s.add_argument("--doa", choices=DIRECTIONS)
    s.add_argument("--gate", action="store_true", help="keep only boxes centred in the middle band")
    s.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"))
    s.add_argument("--out")

    s = add("loc-metrics", cmd_loc_metrics, "cIoU success rate and AUC")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--threshold", type=float, default=fusion.DEFAULT_TAU)

    s = add("loop", cmd_loop, "run the device cycle over scripted events")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--events")
    src.add_argument("--replay", help="directory of WAVs, one window every 2 s")
    s.add_argument("--model")
    s.add_argument("--templates", required=True)
    s.add_argument("--geometry")
    s.add_argument("--locator", choices=("model", "classical"), default="model")
    s.add_argument("--out")

    s = add("stats", cmd_stats, "one-way ANOVA and Tukey HSD over run accuracies")
    s.add_argument("--runs", required=True)
    s.add_argument("--alpha", type=float, default=0.05)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg.seed = args.seed
        return args.fn(args, cfg)
    except DomainError as exc:
        sys.stderr.write(json.dumps(exc.as_dict()) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
