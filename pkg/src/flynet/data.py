"""Corpus ingestion, augmentation, and grouped stage-stratified k-fold splits.

A corpus is a list of FlyDataset values, each one fly filmed at a fixed
frame rate. On disk a corpus is a JSON manifest plus per-dataset
directories of binary PGM frames and 0/255 masks, matched by identical
file stems in lexicographic order. The synthetic generator writes the
same layout, so synthetic and real corpora are interchangeable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pgm
from .tensor import ShapeError, rotate90, shift2d

STAGES = ("larva", "pupa", "adult")
MIN_SHIFT = 10
MAX_SHIFT = 50
AUGMENT_FACTOR = 8  # original + 4 shifts + 3 rotations


class ManifestError(ValueError):
    pass


@dataclass
class FramePair:
    """One grayscale frame plus its binary ground-truth mask.

    image: (1, 1, h, w) float32 in [0, 1]; mask: (h, w) uint8 in {0, 1}.
    """
    image: np.ndarray
    mask: np.ndarray
    frame_index: int


@dataclass
class FlyDataset:
    id: str
    stage: str
    fps: float
    frames: list = field(default_factory=list)

    @property
    def resolution(self) -> int:
        return self.frames[0].image.shape[-1] if self.frames else 0


@dataclass
class FoldPlan:
    """One cross-validation round: whole datasets assigned to splits."""
    k: int
    round: int
    train: list
    val: list
    test: list


def _stem_index(stem: str, position: int) -> int:
    m = re.search(r"(\d+)$", stem)
    return int(m.group(1)) if m else position


def load_corpus(manifest_path) -> list:
    """Load every dataset referenced by a manifest.

    Frames are normalized to [0, 1]; mask values > 127 load as 1 (tolerant
    of antialiased hand masks). Missing files, malformed images, and
    frame/mask shape mismatches are rejected with the offending path.
    """
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{manifest_path}: cannot read manifest: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("datasets"), list):
        raise ManifestError(f"{manifest_path}: manifest must be an object "
                            f"with a 'datasets' list")
    root = manifest_path.parent
    corpus = []
    seen_ids = set()
    for entry in doc["datasets"]:
        for key in ("id", "stage", "fps", "frames_dir", "masks_dir"):
            if key not in entry:
                raise ManifestError(f"{manifest_path}: dataset entry missing "
                                    f"required key {key!r}")
        ds_id = str(entry["id"])
        if ds_id in seen_ids:
            raise ManifestError(f"{manifest_path}: duplicate dataset id {ds_id!r}")
        seen_ids.add(ds_id)
        stage = entry["stage"]
        if stage not in STAGES:
            raise ManifestError(f"{manifest_path}: dataset {ds_id!r} has "
                                f"unknown stage {stage!r}")
        fps = float(entry["fps"])
        if not fps > 0:
            raise ManifestError(f"{manifest_path}: dataset {ds_id!r} needs fps > 0")
        frames_dir = root / entry["frames_dir"]
        masks_dir = root / entry["masks_dir"]
        corpus.append(FlyDataset(ds_id, stage, fps,
                                 _load_frames(ds_id, frames_dir, masks_dir)))
    return corpus


def _load_frames(ds_id: str, frames_dir: Path, masks_dir: Path) -> list:
    for d in (frames_dir, masks_dir):
        if not d.is_dir():
            raise ManifestError(f"dataset {ds_id!r}: directory not found: {d}")
    frame_files = sorted(frames_dir.glob("*.pgm"), key=lambda p: p.stem)
    mask_files = {p.stem: p for p in masks_dir.glob("*.pgm")}
    frames = []
    resolution = None
    prev_index = None
    for position, fpath in enumerate(frame_files):
        mpath = mask_files.get(fpath.stem)
        if mpath is None:
            raise ManifestError(f"dataset {ds_id!r}: no mask for frame {fpath}")
        try:
            raw = pgm.read_pgm(fpath)
            mask_raw = pgm.read_pgm(mpath)
        except (OSError, pgm.PgmError) as exc:
            raise ManifestError(f"dataset {ds_id!r}: {exc}") from exc
        if raw.shape != mask_raw.shape:
            raise ManifestError(
                f"dataset {ds_id!r}: frame {fpath} is {raw.shape} but mask "
                f"{mpath} is {mask_raw.shape}")
        if resolution is None:
            resolution = raw.shape
        elif raw.shape != resolution:
            raise ManifestError(f"dataset {ds_id!r}: frame {fpath} breaks the "
                                f"shared resolution {resolution}")
        image = (raw.astype(np.float32) / 255.0)[np.newaxis, np.newaxis]
        mask = (mask_raw > 127).astype(np.uint8)
        index = _stem_index(fpath.stem, position)
        if prev_index is not None and index <= prev_index:
            raise ManifestError(f"dataset {ds_id!r}: frame indices not "
                                f"strictly increasing at {fpath}")
        prev_index = index
        frames.append(FramePair(image, mask, index))
    return frames


def save_corpus(corpus: list, out_dir) -> Path:
    """Write a corpus as PGM files plus manifest.json; returns manifest path.

    Inverse of load_corpus: frames round-trip bit-exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for ds in corpus:
        frames_dir = out_dir / ds.id / "frames"
        masks_dir = out_dir / ds.id / "masks"
        frames_dir.mkdir(parents=True, exist_ok=True)
        masks_dir.mkdir(parents=True, exist_ok=True)
        for pair in ds.frames:
            stem = f"frame_{pair.frame_index:06d}"
            img = np.rint(np.clip(pair.image[0, 0], 0.0, 1.0) * 255.0
                          ).astype(np.uint8)
            pgm.write_pgm(frames_dir / f"{stem}.pgm", img)
            pgm.write_pgm(masks_dir / f"{stem}.pgm",
                          (pair.mask.astype(np.uint8) * 255))
        entries.append({"id": ds.id, "stage": ds.stage, "fps": ds.fps,
                        "frames_dir": f"{ds.id}/frames",
                        "masks_dir": f"{ds.id}/masks"})
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"datasets": entries}, indent=2) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# augmentation


def augment(pair: FramePair, rng: np.random.Generator) -> list:
    """Expand one frame/mask pair into exactly 8 pairs.

    The original, four shifted copies (one per direction, each magnitude
    an integer drawn uniformly from [10, 50], zero fill), and three
    rotated copies (90/180/270 degrees counter-clockwise). The mask
    always undergoes the identical transform as its image.
    """
    _, _, h, w = pair.image.shape
    if h != w:
        raise ShapeError(f"augment requires square frames, got {h}x{w}")
    if h <= MAX_SHIFT:
        raise ShapeError(f"frame of {h} px cannot absorb shifts up to "
                         f"{MAX_SHIFT} px")
    mask_t = pair.mask[np.newaxis, np.newaxis].astype(np.float32)

    def make(img_t, msk_t):
        return FramePair(img_t, msk_t[0, 0].astype(np.uint8), pair.frame_index)

    out = [FramePair(pair.image.copy(), pair.mask.copy(), pair.frame_index)]
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):  # up, down, left, right
        m = int(rng.integers(MIN_SHIFT, MAX_SHIFT + 1))
        out.append(make(shift2d(pair.image, dy * m, dx * m),
                        shift2d(mask_t, dy * m, dx * m)))
    for turns in (1, 2, 3):
        out.append(make(rotate90(pair.image, turns), rotate90(mask_t, turns)))
    return out


# ---------------------------------------------------------------------------
# grouped, stage-stratified k-fold splitting


def kfold_split(corpus: list, k: int, round: int,
                rng: np.random.Generator) -> FoldPlan:
    """Assign whole datasets to train/val/test for one CV round.

    Test and val each receive exactly one dataset per stage; the rest
    train. Per stage the datasets are put in a seeded random order once,
    and successive rounds rotate through that order, so with k datasets
    per stage every dataset is tested exactly once across k rounds. Pass
    an identically-seeded generator for every round of one protocol.
    """
    if k < 3:
        raise ValueError(f"k must be >= 3, got {k}")
    if not 0 <= round < k:
        raise ValueError(f"round must be in [0, {k}), got {round}")
    by_stage: dict = {}
    for ds in corpus:
        by_stage.setdefault(ds.stage, []).append(ds.id)
    test, val = [], []
    for stage in sorted(by_stage):
        ids = sorted(by_stage[stage])
        if len(ids) < 3:
            raise ValueError(f"stage {stage!r} has only {len(ids)} datasets; "
                             f"need at least 3 to split")
        order = [ids[i] for i in rng.permutation(len(ids))]
        n = len(order)
        test.append(order[round % n])
        val.append(order[(round + 1) % n])
    taken = set(test) | set(val)
    train = sorted(ds.id for ds in corpus if ds.id not in taken)
    return FoldPlan(k, round, train, sorted(val), sorted(test))


def datasets_by_id(corpus: list, ids) -> list:
    wanted = set(ids)
    return [ds for ds in corpus if ds.id in wanted]


def collect_frames(corpus: list, ids) -> list:
    """All FramePairs of the named datasets, in corpus order."""
    return [pair for ds in datasets_by_id(corpus, ids) for pair in ds.frames]


def stack_images(pairs: list) -> np.ndarray:
    return np.concatenate([p.image for p in pairs], axis=0)


def stack_masks(pairs: list) -> np.ndarray:
    return np.stack([p.mask for p in pairs])[:, np.newaxis].astype(np.float32)
