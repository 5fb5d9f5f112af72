"""Cardiac-function analysis: diameters, traces, extrema, EDD/ESD/FS/HR."""

import numpy as np
import pytest

from flynet.cardio import (CardiacReport, Trace, area_trace, cardiac_params,
                           diameter_trace, largest_component, mask_area,
                           mask_diameter, smooth_values, trace_extrema)


def _disk(radius, size=64, center=None):
    cy = cx = size / 2.0 - 0.5 if center is None else None
    if center is not None:
        cy, cx = center
    yy, xx = np.mgrid[0:size, 0:size]
    return (((yy - cy) ** 2 + (xx - cx) ** 2) <= radius ** 2).astype(np.uint8)


def _sin_trace(fps=100.0, seconds=10.0, mean=10.0, amp=3.0, freq=2.0):
    n = int(fps * seconds)
    t = np.arange(n) / fps
    d = mean + amp * np.sin(2 * np.pi * freq * t)
    return Trace(fps, tuple(zip(range(n), d)))


# ---------------------------------------------------------------------------
# component and diameter geometry


def test_largest_component_keeps_biggest():
    m = np.zeros((20, 20), np.uint8)
    m[2:5, 2:5] = 1        # 9 px
    m[10:16, 10:16] = 1    # 36 px
    out = largest_component(m)
    assert out.sum() == 36 and out[12, 12] == 1 and out[3, 3] == 0


def test_largest_component_tie_breaks_row_major():
    m = np.zeros((10, 10), np.uint8)
    m[1:3, 6:8] = 1   # 4 px, first pixel (1, 6) -> flat 16
    m[5:7, 1:3] = 1   # 4 px, first pixel (5, 1) -> flat 51
    out = largest_component(m)
    assert out[1, 6] == 1 and out[5, 1] == 0


def test_largest_component_is_four_connected():
    m = np.zeros((6, 6), np.uint8)
    m[0, 0] = m[1, 1] = m[2, 2] = 1  # diagonal pixels: 3 separate pieces
    m[4, 0:2] = 1                    # a 2-px bar
    assert largest_component(m).sum() == 2


def test_empty_mask_cases():
    empty = np.zeros((8, 8), np.uint8)
    assert largest_component(empty).sum() == 0
    assert mask_area(empty) == 0.0
    assert mask_diameter(empty) == 0.0
    assert mask_diameter(empty, "equivalent_circle") == 0.0


def test_vertical_chord_measures_column_runs():
    m = np.zeros((16, 16), np.uint8)
    m[3:11, 5] = 1          # 8-long column run
    m[2, 5] = 0             # detached pixel above is background anyway
    m[4, 6:12] = 1          # long horizontal bar: chord of 1... but it
    m[5, 6:12] = 1          # plus a second row makes the chord 2
    assert mask_diameter(m, "vertical_chord") == 8.0


def test_vertical_chord_ignores_broken_runs():
    m = np.zeros((12, 12), np.uint8)
    m[1:4, 4] = 1
    m[5:12, 4] = 1  # run of 7 below a gap; same column, same component? no:
    # the gap splits them into two components; the larger (7) is measured
    assert mask_diameter(m, "vertical_chord") == 7.0


def test_elliptical_mask_vertical_chord():
    # ellipse with semi-axes a=25 (cols), b=12 (rows): tallest chord is 2b
    yy, xx = np.mgrid[0:64, 0:64]
    ell = ((((yy - 32) / 12.0) ** 2 + ((xx - 32) / 25.0) ** 2) <= 1.0)
    assert mask_diameter(ell.astype(np.uint8), "vertical_chord") == 25.0


def test_equivalent_circle_diameter():
    disk = _disk(10.0)
    d = mask_diameter(disk, "equivalent_circle")
    assert d == 2.0 * np.sqrt(disk.sum() / np.pi)
    assert abs(d - 20.0) < 0.5  # close to the true diameter


def test_unknown_mode_rejected():
    with pytest.raises(ValueError, match="mode"):
        mask_diameter(_disk(5.0), "major_axis")


# ---------------------------------------------------------------------------
# traces


def test_traces_from_mask_sequence():
    masks = [_disk(r) for r in (6.0, 8.0, 10.0)]
    at = area_trace(masks, [0, 1, 2], fps=25.0)
    dt = diameter_trace(masks, [0, 1, 2], fps=25.0, mode="equivalent_circle")
    assert [v for _, v in at.samples] == [m.sum() for m in masks]
    assert at.fps == 25.0
    values = dt.values()
    assert np.all(np.diff(values) > 0)
    assert dt.duration_s() == 2.0 / 25.0


def test_trace_validation():
    with pytest.raises(ValueError, match="fps"):
        Trace(0.0, ((0, 1.0),))
    with pytest.raises(ValueError, match="increasing"):
        Trace(25.0, ((0, 1.0), (0, 2.0)))
    with pytest.raises(ValueError, match="increasing"):
        Trace(25.0, ((3, 1.0), (1, 2.0)))


def test_smooth_values_truncates_at_edges():
    out = smooth_values(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), 3)
    assert np.allclose(out, [1.5, 2.0, 3.0, 4.0, 4.5])


def test_smooth_window_must_be_odd():
    with pytest.raises(ValueError):
        smooth_values(np.arange(5.0), 4)
    with pytest.raises(ValueError):
        smooth_values(np.arange(5.0), 0)
    assert np.array_equal(smooth_values(np.arange(5.0), 1), np.arange(5.0))


# ---------------------------------------------------------------------------
# extrema detection


def test_extrema_alternate_and_match_period():
    trace = _sin_trace()
    peaks, troughs = trace_extrema(trace)
    assert len(peaks) == 20  # 2 Hz for 10 s
    assert len(troughs) in (19, 20, 21)
    merged = sorted([(p, "p") for p in peaks] + [(t, "t") for t in troughs])
    for (_, a), (_, b) in zip(merged, merged[1:]):
        assert a != b  # strict alternation


def test_extrema_reject_low_prominence_ripple():
    fps, n = 50.0, 500
    t = np.arange(n) / fps
    base = 10.0 + 3.0 * np.sin(2 * np.pi * 1.0 * t)
    ripple = 0.05 * np.sin(2 * np.pi * 11.0 * t)
    trace = Trace(fps, tuple(zip(range(n), base + ripple)))
    peaks, _ = trace_extrema(trace, smooth_window=1, prominence_frac=0.10)
    assert len(peaks) == 10  # ripple extrema fall below the prominence bar


def test_extrema_constant_trace_is_empty():
    trace = Trace(25.0, tuple((i, 7.0) for i in range(40)))
    assert trace_extrema(trace) == ([], [])


def test_extrema_prominence_validation():
    with pytest.raises(ValueError):
        trace_extrema(_sin_trace(seconds=1.0), prominence_frac=0.0)
    with pytest.raises(ValueError):
        trace_extrema(_sin_trace(seconds=1.0), prominence_frac=1.0)


# ---------------------------------------------------------------------------
# cardiac summary


def test_sinusoid_reference_values():
    # d(t) = 10 + 3 sin(2*pi*2t) at 100 fps for 10 s:
    # EDD 13 px, ESD 7 px, FS 6/13, HR 120 bpm; allow 2%
    report = cardiac_params(_sin_trace())
    assert abs(report.edd_px - 13.0) / 13.0 < 0.02
    assert abs(report.esd_px - 7.0) / 7.0 < 0.02
    assert abs(report.fs - 6.0 / 13.0) / (6.0 / 13.0) < 0.02
    assert abs(report.hr_bpm - 120.0) / 120.0 < 0.02
    assert report.n_cycles == 20
    assert report.hr_reason is None


def test_report_to_dict_keys():
    report = cardiac_params(_sin_trace(seconds=2.0))
    d = report.to_dict()
    assert set(d) == {"edd_px", "esd_px", "fs", "hr_bpm", "n_cycles",
                      "peaks", "troughs", "hr_reason"}
    assert isinstance(d["peaks"], list)


def test_too_few_peaks_reports_reason():
    # half a period: at most one peak, no rate
    trace = _sin_trace(fps=50.0, seconds=0.3, freq=2.0)
    report = cardiac_params(trace)
    assert report.hr_bpm is None
    assert "peaks" in report.hr_reason
    assert report.n_cycles < 2


def test_constant_trace_reports_nothing():
    trace = Trace(25.0, tuple((i, 9.0) for i in range(50)))
    report = cardiac_params(trace)
    assert report.edd_px is None and report.esd_px is None
    assert report.fs is None and report.hr_bpm is None
    assert report.n_cycles == 0 and report.hr_reason is not None


def test_explicit_fps_overrides_trace_rate():
    trace = _sin_trace(fps=100.0)
    doubled = cardiac_params(trace, fps=200.0)
    assert abs(doubled.hr_bpm - 240.0) / 240.0 < 0.02


def test_empty_trace_raises():
    with pytest.raises(ValueError, match="empty"):
        cardiac_params(Trace(25.0, ()))


def test_report_validation():
    with pytest.raises(ValueError, match="exceeds"):
        CardiacReport(edd_px=5.0, esd_px=9.0, fs=None, hr_bpm=None,
                      n_cycles=0)
    with pytest.raises(ValueError, match="shortening"):
        CardiacReport(edd_px=10.0, esd_px=5.0, fs=1.5, hr_bpm=None,
                      n_cycles=0)


def test_masks_to_report_end_to_end():
    # breathing disk: radius swings 8..12 over 2 s at 1 Hz, 40 fps
    fps, seconds, freq = 40.0, 3.0, 1.0
    n = int(fps * seconds)
    t = np.arange(n) / fps
    radii = 10.0 + 2.0 * np.sin(2 * np.pi * freq * t)
    masks = [_disk(r) for r in radii]
    trace = diameter_trace(masks, range(n), fps, mode="equivalent_circle")
    report = cardiac_params(trace)
    assert report.hr_bpm is not None
    assert abs(report.hr_bpm - 60.0) / 60.0 < 0.10
    assert report.edd_px > report.esd_px
