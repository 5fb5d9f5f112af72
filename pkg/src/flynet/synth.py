"""Synthetic beating-heart corpus generator.

Stands in for the unavailable fly recordings: each frame shows a bright
elliptical heart wall around a dark lumen whose radius oscillates
sinusoidally in time, surrounded by static bright distractor anatomy
(blobs plus a cover-glass-like line), multiplicative speckle noise, and,
with a configurable probability per frame, an angular arc of the wall
dimmed to background level (the blurred-boundary failure mode). The mask
is the filled heart ellipse. Identical seeds give bit-identical data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FlyDataset, FramePair, STAGES


@dataclass
class SynthParams:
    n_frames: int = 60
    resolution: int = 64
    period_s: float = 0.5
    fps: float = 25.0
    radius_mean: float = 14.0
    radius_amplitude: float = 3.0
    wall_brightness: float = 0.8
    speckle_sigma: float = 0.25
    boundary_gap_prob: float = 0.0
    distractor_count: int = 3
    seed: int = 0

    def validate(self) -> "SynthParams":
        if not self.radius_mean > self.radius_amplitude >= 0:
            raise ValueError("need radius_mean > radius_amplitude >= 0, got "
                             f"{self.radius_mean} vs {self.radius_amplitude}")
        if not 0.0 <= self.boundary_gap_prob <= 1.0:
            raise ValueError(f"boundary_gap_prob must be in [0, 1], got "
                             f"{self.boundary_gap_prob}")
        if self.n_frames < 1 or self.resolution < 8:
            raise ValueError("need n_frames >= 1 and resolution >= 8")
        if self.fps <= 0 or self.period_s <= 0:
            raise ValueError("fps and period_s must be positive")
        return self


BACKGROUND_LEVEL = 0.12
LUMEN_LEVEL = 0.05
WALL_THICKNESS = 3.0
GLASS_ROW_FRAC = 0.04
GLASS_BRIGHTNESS = 0.55


def synth_generate(params: SynthParams, dataset_id: str = "synth",
                   stage: str = "larva") -> FlyDataset:
    """Render one deterministic dataset from the given parameters."""
    params.validate()
    res = params.resolution
    root = np.random.SeedSequence(params.seed)
    streams = root.spawn(params.n_frames + 1)
    ds_rng = np.random.default_rng(streams[0])

    # per-dataset anatomy, fixed over the recording
    cy = res / 2 + ds_rng.uniform(-res / 16, res / 16)
    cx = res / 2 + ds_rng.uniform(-res / 16, res / 16)
    aspect_y = ds_rng.uniform(0.85, 1.15)
    aspect_x = ds_rng.uniform(0.85, 1.15)
    phase = ds_rng.uniform(0.0, 2 * np.pi)
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64)
    r_max = (params.radius_mean + params.radius_amplitude) \
        * max(aspect_y, aspect_x) + WALL_THICKNESS
    blobs = _place_distractors(ds_rng, res, (cy, cx), r_max,
                               params.distractor_count)
    glass_row = max(1, int(round(GLASS_ROW_FRAC * res)))

    frames = []
    for t in range(params.n_frames):
        rng = np.random.default_rng(streams[t + 1])
        r = params.radius_mean + params.radius_amplitude * np.sin(
            2 * np.pi * t / (params.fps * params.period_s) + phase)
        by, bx = r * aspect_y, r * aspect_x
        norm = np.sqrt(((yy - cy) / by) ** 2 + ((xx - cx) / bx) ** 2)
        mask = (norm <= 1.0).astype(np.uint8)
        wall = (norm > 1.0) & (norm <= 1.0 + WALL_THICKNESS / r)

        img = np.full((res, res), BACKGROUND_LEVEL)
        img[mask == 1] = LUMEN_LEVEL
        img[glass_row:glass_row + 1, :] = GLASS_BRIGHTNESS
        for (gy, gx, grad, gbright) in blobs:
            d2 = ((yy - gy) ** 2 + (xx - gx) ** 2) / grad ** 2
            img += gbright * np.exp(-0.5 * d2)
        wall_img = np.where(wall, params.wall_brightness, 0.0)
        if rng.uniform() < params.boundary_gap_prob:
            theta0 = rng.uniform(0.0, 2 * np.pi)
            width = rng.uniform(np.pi / 4, np.pi / 1.8)
            angle = np.arctan2(yy - cy, xx - cx)
            in_gap = np.abs((angle - theta0 + np.pi) % (2 * np.pi) - np.pi) \
                <= width / 2
            wall_img[in_gap & wall] = 0.0
        img = np.where(wall_img > 0, wall_img, img)
        img *= rng.lognormal(0.0, params.speckle_sigma, size=img.shape)
        img = np.clip(img, 0.0, 1.0).astype(np.float32)
        frames.append(FramePair(img[np.newaxis, np.newaxis], mask, t))
    return FlyDataset(dataset_id, stage, params.fps, frames)


def _place_distractors(rng, res, heart_center, keepout, count):
    """Pick static bright-blob positions clear of the heart's maximal extent."""
    cy, cx = heart_center
    blobs = []
    attempts = 0
    while len(blobs) < count and attempts < 200:
        attempts += 1
        gy = rng.uniform(0.1 * res, 0.9 * res)
        gx = rng.uniform(0.1 * res, 0.9 * res)
        if np.hypot(gy - cy, gx - cx) < keepout + 0.05 * res:
            continue
        blobs.append((gy, gx, rng.uniform(0.02 * res, 0.045 * res),
                      rng.uniform(0.35, 0.7)))
    return blobs


STAGE_REGIMES = {
    # radius and amplitude as fractions of resolution; period in seconds
    "larva": {"radius": 0.235, "amplitude": 0.055, "period_s": 0.5,
              "wall_brightness": 0.85},
    "pupa": {"radius": 0.19, "amplitude": 0.045, "period_s": 0.8,
             "wall_brightness": 0.75},
    "adult": {"radius": 0.15, "amplitude": 0.04, "period_s": 0.35,
              "wall_brightness": 0.6},
}


def stage_params(stage: str, resolution: int, n_frames: int, seed: int,
                 fps: float = 25.0, boundary_gap_prob: float = 0.0,
                 speckle_sigma: float = 0.25,
                 distractor_count: int = 3,
                 jitter_rng: np.random.Generator | None = None) -> SynthParams:
    """SynthParams for one stage regime, optionally jittered per dataset."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    regime = STAGE_REGIMES[stage]
    radius = regime["radius"] * resolution
    amplitude = regime["amplitude"] * resolution
    period = regime["period_s"]
    if jitter_rng is not None:
        radius *= jitter_rng.uniform(0.9, 1.1)
        amplitude *= jitter_rng.uniform(0.85, 1.15)
        period *= jitter_rng.uniform(0.85, 1.15)
    return SynthParams(
        n_frames=n_frames, resolution=resolution, period_s=period, fps=fps,
        radius_mean=radius, radius_amplitude=amplitude,
        wall_brightness=regime["wall_brightness"],
        speckle_sigma=speckle_sigma, boundary_gap_prob=boundary_gap_prob,
        distractor_count=distractor_count, seed=seed)


def make_corpus(datasets_per_stage: int, n_frames: int, resolution: int,
                seed: int, fps: float = 25.0,
                boundary_gap_prob: float = 0.0, speckle_sigma: float = 0.25,
                distractor_count: int = 3) -> list:
    """Generate a stage-balanced synthetic corpus, deterministic in seed."""
    master = np.random.SeedSequence(seed)
    children = iter(master.spawn(3 * datasets_per_stage))
    corpus = []
    for stage in STAGES:
        for i in range(datasets_per_stage):
            child = next(children)
            jitter = np.random.default_rng(child)
            params = stage_params(
                stage, resolution, n_frames,
                seed=int(child.generate_state(1)[0]), fps=fps,
                boundary_gap_prob=boundary_gap_prob,
                speckle_sigma=speckle_sigma,
                distractor_count=distractor_count, jitter_rng=jitter)
            corpus.append(synth_generate(params, f"{stage}_{i:02d}", stage))
    return corpus
