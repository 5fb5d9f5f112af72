"""Cardiac-function readouts from per-frame segmentation masks.

The chain is: masks -> area/diameter traces -> smoothed-trace extrema ->
EDD, ESD, fractional shortening, heart rate. Diameters are measured on
the largest connected component so stray speckle detections cannot
stretch the reading; areas count the full mask, matching what the IOU
metric sees.

Extrema detection smooths with a centered moving average (edges
truncated), keeps local extrema whose prominence clears a fraction of
the smoothed trace's range, and then enforces peak/trough alternation,
keeping the more extreme of any same-kind run. EDD/ESD read the
smoothed trace at the surviving extrema.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

DIAMETER_MODES = ("vertical_chord", "equivalent_circle")
DEFAULT_SMOOTH_WINDOW = 5
DEFAULT_PROMINENCE = 0.10


@dataclass(frozen=True)
class Trace:
    """A per-frame scalar series (area in px², diameter in px, ...)."""
    fps: float
    samples: tuple  # of (frame_index, value)

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        idx = [i for i, _ in self.samples]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("trace frame indices must be strictly increasing")
        object.__setattr__(self, "samples", tuple(
            (int(i), float(v)) for i, v in self.samples))

    def frame_indices(self) -> np.ndarray:
        return np.array([i for i, _ in self.samples], dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.samples], dtype=np.float64)

    def duration_s(self) -> float:
        idx = self.frame_indices()
        return float(idx[-1] - idx[0]) / self.fps if len(idx) > 1 else 0.0


@dataclass(frozen=True)
class CardiacReport:
    """EDD/ESD/FS/HR summary; fields are None when undeterminable
    (constant trace, too few beats), with hr_reason saying why."""
    edd_px: float | None
    esd_px: float | None
    fs: float | None
    hr_bpm: float | None
    n_cycles: int
    peaks: tuple = field(default_factory=tuple)     # frame indices
    troughs: tuple = field(default_factory=tuple)
    hr_reason: str | None = None

    def __post_init__(self):
        if self.edd_px is not None and self.esd_px is not None:
            if self.esd_px > self.edd_px:
                raise ValueError(f"ESD {self.esd_px} exceeds EDD {self.edd_px}")
        if self.fs is not None and not 0.0 <= self.fs < 1.0:
            raise ValueError(f"fractional shortening {self.fs} outside [0, 1)")

    def to_dict(self) -> dict:
        return {"edd_px": self.edd_px, "esd_px": self.esd_px, "fs": self.fs,
                "hr_bpm": self.hr_bpm, "n_cycles": self.n_cycles,
                "peaks": list(self.peaks), "troughs": list(self.troughs),
                "hr_reason": self.hr_reason}


def mask_area(mask: np.ndarray) -> float:
    """Number of foreground pixels."""
    return float(np.count_nonzero(mask))


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep only the largest 4-connected foreground component.

    Ties go to the component containing the smallest row-major pixel
    index. Returns a uint8 mask; empty input gives an empty mask.
    """
    binary = np.asarray(mask) != 0
    labels, n = ndimage.label(binary)  # default structure is 4-connected
    if n == 0:
        return np.zeros(binary.shape, dtype=np.uint8)
    flat = labels.ravel()
    sizes = np.bincount(flat)[1:]
    best = sizes.max()
    # among maximal components, the one seen first in row-major order wins
    labs, first = np.unique(flat, return_index=True)
    winner = min((first[i], labs[i]) for i in range(len(labs))
                 if labs[i] != 0 and sizes[labs[i] - 1] == best)[1]
    return (labels == winner).astype(np.uint8)


def mask_diameter(mask: np.ndarray, mode: str = "vertical_chord") -> float:
    """Heart diameter in pixels, measured on the largest component.

    vertical_chord: longest run of consecutive foreground pixels in any
    single column. equivalent_circle: diameter of the circle with the
    component's area. Empty mask -> 0.
    """
    if mode not in DIAMETER_MODES:
        raise ValueError(f"mode must be one of {DIAMETER_MODES}, got {mode!r}")
    comp = largest_component(mask)
    if not comp.any():
        return 0.0
    if mode == "equivalent_circle":
        return float(2.0 * np.sqrt(mask_area(comp) / np.pi))
    run = np.zeros(comp.shape[1], dtype=np.int64)
    best = np.zeros(comp.shape[1], dtype=np.int64)
    for row in comp:
        run = (run + 1) * row
        np.maximum(best, run, out=best)
    return float(best.max())


def area_trace(masks, frame_indices, fps: float) -> Trace:
    """Per-frame foreground area of a mask sequence."""
    return Trace(fps, tuple((i, mask_area(m))
                            for i, m in zip(frame_indices, masks)))


def diameter_trace(masks, frame_indices, fps: float,
                   mode: str = "vertical_chord") -> Trace:
    """Per-frame diameter of a mask sequence."""
    return Trace(fps, tuple((i, mask_diameter(m, mode))
                            for i, m in zip(frame_indices, masks)))


def smooth_values(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; windows are truncated at the edges."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"smooth_window must be odd and >= 1, got {window}")
    v = np.asarray(values, dtype=np.float64)
    if window == 1 or len(v) == 0:
        return v.copy()
    kernel = np.ones(window)
    return (np.convolve(v, kernel, mode="same")
            / np.convolve(np.ones(len(v)), kernel, mode="same"))


def _alternate(events: list) -> list:
    """Collapse same-kind runs, keeping the more extreme event.

    events: (position, kind, value) sorted by position, kind in
    {"peak", "trough"}. Peaks keep the larger value, troughs the smaller;
    the earlier event wins exact ties.
    """
    kept: list = []
    for ev in events:
        if kept and kept[-1][1] == ev[1]:
            _, kind, value = ev
            if (kind == "peak" and value > kept[-1][2]) or \
                    (kind == "trough" and value < kept[-1][2]):
                kept[-1] = ev
        else:
            kept.append(ev)
    return kept


def trace_extrema(trace: Trace, smooth_window: int = DEFAULT_SMOOTH_WINDOW,
                  prominence_frac: float = DEFAULT_PROMINENCE) -> tuple:
    """Alternating (peaks, troughs) sample positions of a smoothed trace.

    Candidates are local extrema whose prominence reaches
    prominence_frac of the smoothed trace's total range; a constant
    trace has no extrema. Positions index into trace.samples.
    """
    if not 0.0 < prominence_frac < 1.0:
        raise ValueError(f"prominence_frac must be in (0, 1), got "
                         f"{prominence_frac}")
    sm = smooth_values(trace.values(), smooth_window)
    if len(sm) == 0:
        return [], []
    span = float(sm.max() - sm.min())
    if span == 0.0:
        return [], []
    prominence = prominence_frac * span
    highs, _ = signal.find_peaks(sm, prominence=prominence)
    lows, _ = signal.find_peaks(-sm, prominence=prominence)
    events = sorted([(int(p), "peak", sm[p]) for p in highs]
                    + [(int(p), "trough", sm[p]) for p in lows])
    kept = _alternate(events)
    return ([p for p, kind, _ in kept if kind == "peak"],
            [p for p, kind, _ in kept if kind == "trough"])


def cardiac_params(trace: Trace, smooth_window: int = DEFAULT_SMOOTH_WINDOW,
                   prominence_frac: float = DEFAULT_PROMINENCE,
                   fps: float | None = None) -> CardiacReport:
    """Summarize a diameter trace into EDD, ESD, FS and heart rate.

    EDD/ESD are the smoothed diameters averaged over peaks/troughs; FS is
    their relative drop; HR counts peaks over the trace's duration
    ((last - first frame index)/fps, which defaults to the trace's own
    rate). Fewer than two peaks leave HR absent with a reason.
    """
    if not trace.samples:
        raise ValueError("cannot analyze an empty trace")
    fps = trace.fps if fps is None else fps
    peaks, troughs = trace_extrema(trace, smooth_window, prominence_frac)
    sm = smooth_values(trace.values(), smooth_window)
    idx = trace.frame_indices()

    edd = float(np.mean(sm[peaks])) if peaks else None
    esd = float(np.mean(sm[troughs])) if troughs else None
    fs = None
    if edd is not None and esd is not None and edd > 0:
        fs = (edd - esd) / edd
    n_cycles = len(peaks)

    hr, reason = None, None
    duration_s = float(idx[-1] - idx[0]) / fps if len(idx) > 1 else 0.0
    if n_cycles < 2:
        reason = (f"need at least 2 detected peaks for a heart rate, "
                  f"found {n_cycles}")
    elif duration_s <= 0:
        reason = "trace spans no time"
    else:
        hr = n_cycles / (duration_s / 60.0)
    return CardiacReport(edd, esd, fs, hr, n_cycles,
                         tuple(int(idx[p]) for p in peaks),
                         tuple(int(idx[p]) for p in troughs), reason)
