"""Command line front end: synthesis, training, inference, analysis.

Subcommands map onto the library modules and write plot-ready CSV/JSON
artifacts rather than rendered figures. Any flag can also live in a
flat JSON config file (--config); flags given on the command line win.
Every run logs its fully resolved configuration, so a result can be
reproduced from the log alone. Output files never contain timestamps,
which keeps identical flags + seed byte-identical; timings go to the
log only.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 runtime divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import cardio, checkpoint, data as datapipe, gradcheck, synth, training
from .metrics import binarize, hard_iou
from .optim import AdamHyper
from .pgm import read_pgm, write_pgm
from .tensor import Precision

log = logging.getLogger("flynet")


class UsageError(ValueError):
    """Bad flags or unusable input; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config resolution: defaults < config file < explicit flags


@dataclass(frozen=True)
class RunConfig:
    """One command's fully resolved options, including the master seed."""
    command: str
    options: dict

    def __getattr__(self, name):
        try:
            return self.options[name]
        except KeyError:
            raise AttributeError(name) from None

    def require(self, *names) -> None:
        for name in names:
            if self.options.get(name) is None:
                raise UsageError(
                    f"{self.command}: --{name.replace('_', '-')} is required "
                    f"(flag or config file)")

    def to_json(self) -> str:
        doc = {"command": self.command, **self.options}
        return json.dumps(doc, sort_keys=True)


def resolve_config(command: str, args: argparse.Namespace,
                   defaults: dict) -> RunConfig:
    """Overlay config-file values and explicit flags onto the defaults."""
    opts = dict(defaults)
    path = getattr(args, "config", None)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: config file must be a flat JSON object")
        for key, value in doc.items():
            dest = key.replace("-", "_")
            if dest not in opts:
                raise UsageError(f"{path}: unknown config key {key!r}")
            opts[dest] = value
    for key in opts:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return RunConfig(command, opts)


def _train_config(cfg: RunConfig) -> training.TrainConfig:
    return training.TrainConfig(
        arch=cfg.arch, base_width=cfg.base_width, input_size=cfg.input_size,
        batch_size=cfg.batch_size, adam=AdamHyper(lr=cfg.lr),
        max_epochs=cfg.epochs, patience=cfg.patience,
        min_delta=cfg.min_delta, seed=cfg.seed,
        binarize_threshold=cfg.threshold, augment=cfg.augment)


# ---------------------------------------------------------------------------
# small file helpers


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: tuple, rows: list) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_corpus(cfg: RunConfig) -> list:
    corpus = datapipe.load_corpus(cfg.manifest)
    if not corpus:
        raise UsageError(f"{cfg.manifest}: manifest lists no datasets")
    return corpus


def _history_rows(history: training.TrainHistory) -> list:
    return [(r.epoch, r.train_loss, r.val_iou) for r in history.records]


def _stem_index(stem: str, position: int) -> int:
    m = re.search(r"(\d+)$", stem)
    return int(m.group(1)) if m else position


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig) -> int:
    cfg.require("out")
    if cfg.frames < 1:
        raise UsageError(f"--frames must be >= 1, got {cfg.frames}")
    if cfg.datasets_per_stage < 1:
        raise UsageError(f"--datasets-per-stage must be >= 1, "
                         f"got {cfg.datasets_per_stage}")
    corpus = synth.make_corpus(
        cfg.datasets_per_stage, cfg.frames, cfg.resolution, seed=cfg.seed,
        fps=cfg.fps, boundary_gap_prob=cfg.gap_prob)
    manifest = datapipe.save_corpus(corpus, cfg.out)
    log.info("wrote %d datasets (%d frames each) under %s",
             len(corpus), cfg.frames, cfg.out)
    print(manifest)
    return 0


def _default_val_ids(corpus: list) -> list:
    """Without an explicit --val list, hold out the lexicographically
    last dataset of every stage for validation."""
    ids = []
    for stage in sorted({ds.stage for ds in corpus}):
        ids.append(sorted(ds.id for ds in corpus if ds.stage == stage)[-1])
    return ids


def cmd_train(cfg: RunConfig) -> int:
    cfg.require("manifest", "out")
    corpus = _load_corpus(cfg)
    known = {ds.id for ds in corpus}
    if cfg.val is not None:
        val_ids = [s.strip() for s in cfg.val.split(",") if s.strip()]
        missing = sorted(set(val_ids) - known)
        if missing:
            raise UsageError(f"--val names unknown datasets: "
                             f"{', '.join(missing)}")
    else:
        val_ids = _default_val_ids(corpus)
    train_sets = [ds for ds in corpus if ds.id not in set(val_ids)]
    val_sets = datapipe.datasets_by_id(corpus, val_ids)
    log.info("training on %d datasets, validating on %s",
             len(train_sets), ",".join(val_ids))

    out = _out_dir(cfg)
    ckpt, history = training.train(_train_config(cfg), train_sets, val_sets,
                                   log=log.info)
    ckpt_path = out / "model.ckpt"
    checkpoint.save_checkpoint(ckpt, ckpt_path)
    _write_csv(out / "history.csv", ("epoch", "train_loss", "val_iou"),
               _history_rows(history))
    print(f"checkpoint: {ckpt_path}")
    print(f"best epoch {history.best_epoch}: "
          f"val_iou={history.best_val_iou():.4f}")
    return 0


def cmd_crossval(cfg: RunConfig) -> int:
    cfg.require("manifest", "out")
    corpus = _load_corpus(cfg)
    out = _out_dir(cfg)

    def on_round(result, ckpt, history):
        checkpoint.save_checkpoint(ckpt, out / f"round_{result.round:02d}.ckpt")
        _write_csv(out / f"history_{result.round:02d}.csv",
                   ("epoch", "train_loss", "val_iou"), _history_rows(history))

    result = training.cross_validate(_train_config(cfg), corpus, cfg.k,
                                     log=log.info, on_round=on_round)
    rows = [(r.round, "|".join(r.test_ids), r.test_iou, r.best_epoch,
             r.epochs_run, None, None) for r in result.rounds]
    rows.append(("summary", None, None, None, None, result.mean_iou,
                 result.spread))
    _write_csv(out / "crossval.csv",
               ("round", "test_datasets", "test_iou", "best_epoch",
                "epochs_run", "mean_iou", "spread"), rows)
    _write_json(out / "crossval.json", {
        "k": result.k, "seed": cfg.seed, "arch": cfg.arch,
        "mean_iou": result.mean_iou, "std_iou": result.std_iou,
        "spread": result.spread,
        "rounds": [{"round": r.round, "test_datasets": list(r.test_ids),
                    "test_iou": r.test_iou, "best_epoch": r.best_epoch,
                    "epochs_run": r.epochs_run} for r in result.rounds]})
    print(f"crossval table: {out / 'crossval.csv'}")
    print(f"mean test IOU {result.mean_iou:.4f} (spread {result.spread:.4f})")
    return 0


def cmd_segment(cfg: RunConfig) -> int:
    cfg.require("checkpoint", "manifest", "out")
    ckpt = checkpoint.load_checkpoint(cfg.checkpoint)
    corpus = _load_corpus(cfg)
    if cfg.dataset is not None:
        corpus = datapipe.datasets_by_id(corpus, [cfg.dataset])
        if not corpus:
            raise UsageError(f"--dataset {cfg.dataset!r} not in manifest")
    for ds in corpus:
        if ds.resolution != ckpt.spec.input_size:
            raise UsageError(
                f"dataset {ds.id!r} has {ds.resolution}px frames but "
                f"checkpoint {cfg.checkpoint} expects "
                f"{ckpt.spec.input_size}px")
    threshold = (ckpt.config.binarize_threshold if cfg.threshold is None
                 else cfg.threshold)
    batch = ckpt.config.batch_size if cfg.batch_size is None else cfg.batch_size

    out = _out_dir(cfg)
    rows = []
    n_frames = 0
    start = time.perf_counter()
    for ds in corpus:
        ds_dir = out / ds.id
        ds_dir.mkdir(exist_ok=True)
        probs = training.predict_probs(
            ckpt.spec, ckpt.params, datapipe.stack_images(ds.frames), batch)
        masks = binarize(probs, threshold)
        for i, pair in enumerate(ds.frames):
            write_pgm(ds_dir / f"{pair.frame_index:05d}.pgm",
                      masks[i, 0] * np.uint8(255))
            rows.append((ds.id, pair.frame_index, float(probs[i].mean()),
                         float(masks[i, 0].sum()),
                         hard_iou(masks[i, 0], pair.mask)))
        n_frames += len(ds.frames)
    elapsed = time.perf_counter() - start
    _write_csv(out / "summary.csv",
               ("dataset", "frame_index", "mean_prob", "area_px2", "iou"),
               rows)
    log.info("segmented %d frames in %.2fs (%.1f frames/s)",
             n_frames, elapsed, n_frames / elapsed)
    print(f"masks under {out}, per-frame summary {out / 'summary.csv'}")
    return 0


def _analyze_one(out: Path, prefix: str, masks: list, frame_indices: list,
                 truths, fps: float, cfg: RunConfig, settings: dict) -> dict:
    trace = cardio.diameter_trace(masks, frame_indices, fps,
                                  cfg.diameter_mode)
    areas = [cardio.mask_area(m) for m in masks]
    diameters = [v for _, v in trace.samples]
    ious = ([hard_iou(m, t) for m, t in zip(masks, truths)]
            if truths is not None else [None] * len(masks))
    rows = [(idx, idx / fps, area, diam, iou)
            for idx, area, diam, iou
            in zip(frame_indices, areas, diameters, ious)]
    _write_csv(out / f"{prefix}trace.csv",
               ("frame_index", "time_s", "area_px2", "diameter_px", "iou"),
               rows)

    report = cardio.cardiac_params(trace, cfg.smooth_window, cfg.prominence)
    doc = {**report.to_dict(), "settings": settings}
    _write_json(out / f"{prefix}summary.json", doc)
    return doc


def cmd_analyze(cfg: RunConfig) -> int:
    cfg.require("out")
    if (cfg.masks is None) == (cfg.checkpoint is None):
        raise UsageError("analyze needs either --masks or "
                         "--checkpoint + --manifest")
    out = _out_dir(cfg)
    settings = {"smooth_window": cfg.smooth_window,
                "prominence": cfg.prominence,
                "diameter_mode": cfg.diameter_mode}

    if cfg.masks is not None:
        if cfg.fps is None:
            raise UsageError("--fps is required with --masks; the frame "
                             "rate is never inferred")
        paths = sorted(p for p in Path(cfg.masks).iterdir()
                       if p.suffix == ".pgm")
        if not paths:
            raise UsageError(f"{cfg.masks}: no .pgm masks found")
        masks = [(read_pgm(p) > 127).astype(np.uint8) for p in paths]
        indices = [_stem_index(p.stem, i) for i, p in enumerate(paths)]
        truths = None
        if cfg.manifest is not None:
            # a manifest supplies ground truth to score the masks against
            corpus = _load_corpus(cfg)
            if cfg.dataset is not None:
                corpus = datapipe.datasets_by_id(corpus, [cfg.dataset])
                if not corpus:
                    raise UsageError(f"--dataset {cfg.dataset!r} not in "
                                     "manifest")
            if len(corpus) != 1:
                raise UsageError("--masks with --manifest needs --dataset "
                                 "to pick the ground-truth series")
            by_index = {p.frame_index: p.mask for p in corpus[0].frames}
            missing = [i for i in indices if i not in by_index]
            if missing:
                raise UsageError(f"dataset {corpus[0].id!r} has no ground "
                                 f"truth for frames {missing[:5]}")
            truths = [by_index[i] for i in indices]
        doc = _analyze_one(out, "", masks, indices, truths, cfg.fps, cfg,
                           {**settings, "fps": cfg.fps,
                            "source": str(cfg.masks)})
        print(out / "summary.json")
        print(f"hr_bpm: {doc['hr_bpm']}")
        return 0

    cfg.require("manifest")
    ckpt = checkpoint.load_checkpoint(cfg.checkpoint)
    corpus = _load_corpus(cfg)
    if cfg.dataset is not None:
        corpus = datapipe.datasets_by_id(corpus, [cfg.dataset])
        if not corpus:
            raise UsageError(f"--dataset {cfg.dataset!r} not in manifest")
    threshold = (ckpt.config.binarize_threshold if cfg.threshold is None
                 else cfg.threshold)
    for ds in corpus:
        if ds.resolution != ckpt.spec.input_size:
            raise UsageError(
                f"dataset {ds.id!r} has {ds.resolution}px frames but "
                f"checkpoint {cfg.checkpoint} expects "
                f"{ckpt.spec.input_size}px")
        fps = ds.fps if cfg.fps is None else cfg.fps
        probs = training.predict_probs(
            ckpt.spec, ckpt.params, datapipe.stack_images(ds.frames),
            ckpt.config.batch_size)
        pred = binarize(probs, threshold)
        doc = _analyze_one(
            out, f"{ds.id}_", [pred[i, 0] for i in range(len(ds.frames))],
            [p.frame_index for p in ds.frames],
            [p.mask for p in ds.frames], fps, cfg,
            {**settings, "fps": fps, "threshold": threshold,
             "source": ds.id})
        print(out / f"{ds.id}_summary.json")
        print(f"{ds.id}: hr_bpm={doc['hr_bpm']}")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    precision = Precision(cfg.precision)
    seeds = (cfg.seed, cfg.seed + 1, cfg.seed + 2)
    results = gradcheck.run_suite(seeds=seeds, precision=precision)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<22} max_rel_err={r.max_rel_err:.3e} "
              f"threshold={r.threshold:.0e} {status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check FAILED: {', '.join(failed)}")
        return 1
    print("gradient check passed")
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    """Paired flynet-vs-fcn cross-validation on one corpus and seed."""
    cfg.require("manifest", "out")
    corpus = _load_corpus(cfg)
    out = _out_dir(cfg)
    results = {}
    for arch in training.ARCHS:
        config = replace(_train_config(cfg), arch=arch)
        log.info("bench: cross-validating %s", arch)
        results[arch] = training.cross_validate(config, corpus, cfg.k,
                                                log=log.info)
    fly, fcn = results["flynet"], results["fcn"]
    rows = [(a.round, "|".join(a.test_ids), a.test_iou, b.test_iou,
             a.test_iou - b.test_iou)
            for a, b in zip(fly.rounds, fcn.rounds)]
    rows.append(("summary", None, fly.mean_iou, fcn.mean_iou,
                 fly.mean_iou - fcn.mean_iou))
    _write_csv(out / "bench.csv",
               ("round", "test_datasets", "flynet_iou", "fcn_iou", "delta"),
               rows)
    _write_json(out / "bench.json", {
        "k": cfg.k, "seed": cfg.seed,
        "flynet": {"mean_iou": fly.mean_iou, "spread": fly.spread,
                   "ious": fly.ious()},
        "fcn": {"mean_iou": fcn.mean_iou, "spread": fcn.spread,
                "ious": fcn.ious()},
        "mean_delta": fly.mean_iou - fcn.mean_iou})
    print(f"bench table: {out / 'bench.csv'}")
    print(f"flynet {fly.mean_iou:.4f} vs fcn {fcn.mean_iou:.4f} "
          f"(delta {fly.mean_iou - fcn.mean_iou:+.4f})")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


TRAIN_DEFAULTS = {
    "manifest": None, "out": None, "config": None, "seed": 0,
    "arch": "flynet", "base_width": 64, "input_size": 128, "batch_size": 16,
    "lr": 1e-3, "epochs": 100, "patience": 5, "min_delta": 0.001,
    "threshold": 0.5, "augment": True,
}

CARDIO_DEFAULTS = {
    "smooth_window": cardio.DEFAULT_SMOOTH_WINDOW,
    "prominence": cardio.DEFAULT_PROMINENCE,
    "diameter_mode": "vertical_chord",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file; flags override it")
    p.add_argument("--seed", type=int, help="master seed")


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="corpus manifest JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--arch", choices=training.ARCHS)
    p.add_argument("--base-width", type=int)
    p.add_argument("--input-size", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int, help="max epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--min-delta", type=float)
    p.add_argument("--threshold", type=float, help="binarization threshold")
    p.add_argument("--augment", action=argparse.BooleanOptionalAction,
                   help="8x augmentation of training frames")


def _add_cardio_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fps", type=float, help="frames per second")
    p.add_argument("--smooth-window", type=int)
    p.add_argument("--prominence", type=float)
    p.add_argument("--diameter-mode", choices=cardio.DIAMETER_MODES)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flynet",
        description="Beating-heart segmentation and cardiac analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--out", help="corpus output directory")
    p.add_argument("--datasets-per-stage", type=int)
    p.add_argument("--frames", type=int, help="frames per dataset")
    p.add_argument("--resolution", type=int)
    p.add_argument("--fps", type=float)
    p.add_argument("--gap-prob", type=float,
                   help="per-frame boundary gap probability")
    p.set_defaults(func=cmd_synth, defaults={
        **{k: None for k in ("out", "config")}, "seed": 0,
        "datasets_per_stage": 10, "frames": 60, "resolution": 64,
        "fps": 25.0, "gap_prob": 0.15})

    p = sub.add_parser("train", help="train one model")
    _add_common(p)
    _add_training_flags(p)
    p.add_argument("--val", help="comma-separated validation dataset ids")
    p.set_defaults(func=cmd_train,
                   defaults={**TRAIN_DEFAULTS, "val": None})

    p = sub.add_parser("crossval", help="grouped k-fold cross-validation")
    _add_common(p)
    _add_training_flags(p)
    p.add_argument("--k", type=int, help="number of folds")
    p.set_defaults(func=cmd_crossval, defaults={**TRAIN_DEFAULTS, "k": 10})

    p = sub.add_parser("segment", help="run a checkpoint over a corpus")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--manifest", help="corpus manifest JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threshold", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dataset", help="segment only this dataset id")
    p.set_defaults(func=cmd_segment, defaults={
        k: None for k in ("checkpoint", "manifest", "out", "threshold",
                          "batch_size", "dataset", "config", "seed")})

    p = sub.add_parser("analyze", help="cardiac traces and parameters")
    _add_common(p)
    p.add_argument("--masks", help="directory of predicted mask PGMs")
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--manifest", help="corpus manifest JSON")
    p.add_argument("--dataset", help="analyze only this dataset id")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threshold", type=float)
    _add_cardio_flags(p)
    p.set_defaults(func=cmd_analyze, defaults={
        **{k: None for k in ("masks", "checkpoint", "manifest", "dataset",
                             "out", "threshold", "fps", "config", "seed")},
        **CARDIO_DEFAULTS})

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_common(p)
    p.add_argument("--precision", choices=[pr.value for pr in Precision])
    p.set_defaults(func=cmd_gradcheck, defaults={
        "seed": 0, "precision": "double", "config": None})

    p = sub.add_parser("bench", help="paired flynet vs fcn cross-validation")
    _add_common(p)
    _add_training_flags(p)
    p.add_argument("--k", type=int, help="number of folds")
    p.set_defaults(func=cmd_bench, defaults={**TRAIN_DEFAULTS, "k": 10})

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args, args.defaults)
        log.info("resolved config: %s", cfg.to_json())
        return args.func(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except training.TrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (checkpoint.CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
