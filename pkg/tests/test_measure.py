import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecgtalk.measure import (MeasurementReport, QualityFlag, compute_measurements,
                             delineate, detect_r_peaks, measure_record,
                             measurement_tool_call)
from ecgtalk.records import BeatFiducials, Fiducials, LeadConfig
from ecgtalk.synth import EcgTemplate, synthesize_ecg, flat_record

LANDMARKS = ("p_onset", "p_peak", "qrs_onset", "qrs_offset", "t_peak", "t_offset")


def _landmark_errors_ms(detected, oracle, fs):
    errors = {}
    for db, ob in zip(detected.beats, oracle.beats):
        for name in LANDMARKS:
            dv, ov = getattr(db, name), getattr(ob, name)
            if ov is None:
                continue
            assert dv is not None, f"{name} missing"
            errors[name] = max(errors.get(name, 0.0), abs(dv - ov) * 1000.0 / fs)
    return errors


def test_detection_matches_oracle_60bpm(sinus_record_75):
    record, oracle = synthesize_ecg(60, 10, 500, 0, seed=1)
    peaks = detect_r_peaks(record.lead("II"), 500)
    assert len(peaks) == len(oracle)
    for d, o in zip(peaks, oracle.r_peaks()):
        assert abs(d - o) * 2.0 <= 10.0  # ms at 500 Hz


def test_detection_flat_signal_empty():
    assert detect_r_peaks(np.zeros(5000), 500).tolist() == []


def test_detection_too_short_raises():
    with pytest.raises(ValueError, match="too short"):
        detect_r_peaks(np.zeros(400), 500)


def test_detection_amplitude_invariance():
    record, _ = synthesize_ecg(65, 10, 500, 0.02, seed=3)
    base = detect_r_peaks(record.lead("II"), 500)
    for scale in (0.01, 3.7, 1000.0):
        assert np.array_equal(detect_r_peaks(record.lead("II") * scale, 500), base)


def test_landmark_shift_equivariance():
    record, _ = synthesize_ecg(60, 10, 500, 0, seed=0)
    samples = record.lead("II")
    k = 137
    shifted = np.concatenate([np.zeros(k), samples])
    base = delineate(samples, 500, detect_r_peaks(samples, 500))
    moved = delineate(shifted, 500, detect_r_peaks(shifted, 500))
    assert len(base) == len(moved)
    for b, m in zip(base.beats, moved.beats):
        for name in ("p_onset", "p_peak", "qrs_onset", "r_peak",
                     "qrs_offset", "t_peak", "t_offset"):
            bv, mv = getattr(b, name), getattr(m, name)
            assert (bv is None) == (mv is None)
            if bv is not None:
                assert mv - bv == k


def test_delineation_noiseless_accuracy():
    record, oracle = synthesize_ecg(60, 10, 500, 0, seed=2)
    peaks = detect_r_peaks(record.lead("II"), 500)
    fiducials = delineate(record.lead("II"), 500, peaks)
    errors = _landmark_errors_ms(fiducials, oracle, 500)
    assert errors and max(errors.values()) <= 20.0


def test_delineation_missing_p_wave():
    record, _ = synthesize_ecg(60, 10, 500, 0, seed=0,
                               template=EcgTemplate.default().without_p_wave())
    peaks = detect_r_peaks(record.lead("II"), 500)
    fiducials = delineate(record.lead("II"), 500, peaks)
    assert all(b.p_peak is None and b.p_onset is None for b in fiducials.beats)
    report = compute_measurements(fiducials, 500)
    assert report.pr_interval_ms is None
    assert QualityFlag.MISSING_P_WAVE in report.quality_flags


def test_delineation_empty_peaks():
    assert len(delineate(np.zeros(5000), 500, np.array([], dtype=int))) == 0


def test_heart_rate_definition():
    beats = tuple(BeatFiducials(None, None, None, r, None, None, None)
                  for r in range(0, 5000, 500))
    report = compute_measurements(Fiducials(beats), 500)
    assert report.heart_rate_bpm == pytest.approx(60.0)
    assert report.rr_mean_ms == pytest.approx(1000.0)


def test_qtc_bazett():
    # QT 400 ms at RR 1000 -> 400; at RR 640 -> 500 (400 / sqrt(0.64))
    def beat(r, rr_known):
        return BeatFiducials(None, None, r, r + 25, r + 75, r + 150, r + 200)

    beats = tuple(beat(r, 1000) for r in range(0, 4000, 500))
    report = compute_measurements(Fiducials(beats), 500)
    assert report.qt_interval_ms == pytest.approx(400.0)
    assert report.qtc_interval_ms == pytest.approx(400.0 / np.sqrt(1.0))

    beats = tuple(beat(r, 640) for r in range(0, 4000, 320))
    report = compute_measurements(Fiducials(beats), 500)
    assert report.qt_interval_ms == pytest.approx(400.0)
    assert report.qtc_interval_ms == pytest.approx(500.0)


def test_report_invariants_nulls_imply_flags():
    report = compute_measurements(Fiducials(()), 500)
    assert report.heart_rate_bpm is None
    assert report.quality_flags
    single = Fiducials((BeatFiducials(None, None, None, 100, None, None, None),))
    report = compute_measurements(single, 500)
    assert report.heart_rate_bpm is None
    assert QualityFlag.TOO_FEW_BEATS in report.quality_flags


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 400), min_size=0, max_size=8, unique=True),
       st.integers(2, 6))
def test_report_invariants_property(offsets, n_beats):
    # random valid fiducials: beats on a 1 s grid with jittered landmarks
    beats = []
    for k in range(n_beats):
        r = 300 + k * 500
        beats.append(BeatFiducials(
            p_onset=r - 150, p_peak=r - 100, qrs_onset=r - 30, r_peak=r,
            qrs_offset=r + 30 + (offsets[k % len(offsets)] if offsets else 0) % 40,
            t_peak=r + 150, t_offset=r + 220))
    report = compute_measurements(Fiducials(tuple(beats)), 500)
    data = report.to_dict()
    for key in ("pr_interval_ms", "qrs_duration_ms", "qt_interval_ms",
                "qtc_interval_ms", "heart_rate_bpm"):
        if data[key] is not None:
            assert data[key] > 0
    if data["qt_interval_ms"] is not None and data["qrs_duration_ms"] is not None:
        assert data["qt_interval_ms"] >= data["qrs_duration_ms"]
    if data["heart_rate_bpm"] is not None:
        assert data["beat_count"] >= 2


def test_measurement_lead_priority():
    record, _ = synthesize_ecg(75, 10, 500, 0, seed=0,
                               lead_config=LeadConfig.TWELVE_LEAD)
    report = measure_record(record)
    assert report.lead_used == "II"
    record_i, _ = synthesize_ecg(75, 10, 500, 0, seed=0,
                                 lead_config=LeadConfig.LEAD_I)
    assert measure_record(record_i).lead_used == "I"


def test_tool_call_valid(sinus_record_75):
    record, _ = sinus_record_75
    output = measurement_tool_call(record)
    assert output.is_valid
    assert output.body["heart_rate_bpm"] == pytest.approx(75.0, abs=1.0)


def test_tool_call_too_short():
    record, _ = synthesize_ecg(75, 2, 500, 0, seed=0)
    short = record.leads[0][1][:500]
    from ecgtalk.records import EcgRecord

    one_second = EcgRecord.build("short", 500, [("II", short.copy())])
    output = measurement_tool_call(one_second)
    assert not output.is_valid
    assert output.reason == "too_few_beats"


def test_tool_call_flat_signal_invalid():
    output = measurement_tool_call(flat_record())
    assert not output.is_valid
    assert output.body is None
