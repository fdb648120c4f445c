"""Measurement tool: R-peak detection, PQRST delineation, interval computation.

Detection follows the Pan-Tompkins family: band-pass, derivative, squaring,
moving-window integration, adaptive dual thresholds with search-back.  The
band-pass is a symmetric FIR applied with centered convolution, so the whole
pipeline is exactly shift-equivariant away from the record edges and
invariant to positive amplitude scaling.

Delineation searches RR-adaptive windows around each R peak; wave onsets and
offsets are the 5%-of-peak amplitude crossings toward the isoelectric
baseline, and the T offset uses the tangent method (line through the steepest
descent point, intersected with the baseline).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.signal import firwin

from .records import BeatFiducials, EcgRecord, Fiducials
from .tools import ToolName, ToolOutput

REFRACTORY_S = 0.2
INTEGRATION_WINDOW_S = 0.15
BANDPASS_HZ = (5.0, 15.0)
ONSET_FRACTION = 0.05
MEASUREMENT_LEAD_PRIORITY = ("II", "I")


class QualityFlag(Enum):
    TOO_FEW_BEATS = "too_few_beats"
    NOISY_SIGNAL = "noisy_signal"
    MISSING_P_WAVE = "missing_p_wave"
    MISSING_T_WAVE = "missing_t_wave"


@dataclass(frozen=True)
class BeatIntervals:
    r_peak: int
    rr_prev_ms: Optional[float]
    pr_ms: Optional[float]
    qrs_ms: Optional[float]
    qt_ms: Optional[float]
    qtc_ms: Optional[float]

    def to_dict(self) -> dict:
        return {
            "r_peak": self.r_peak, "rr_prev_ms": self.rr_prev_ms,
            "pr_ms": self.pr_ms, "qrs_ms": self.qrs_ms,
            "qt_ms": self.qt_ms, "qtc_ms": self.qtc_ms,
        }


@dataclass(frozen=True)
class MeasurementReport:
    heart_rate_bpm: Optional[float]
    rr_mean_ms: Optional[float]
    rr_std_ms: Optional[float]
    pr_interval_ms: Optional[float]
    qrs_duration_ms: Optional[float]
    qt_interval_ms: Optional[float]
    qtc_interval_ms: Optional[float]
    beat_count: int
    per_beat: tuple[BeatIntervals, ...]
    quality_flags: frozenset[QualityFlag]
    lead_used: Optional[str] = None
    qtc_formula: str = "bazett"

    def __post_init__(self):
        for name in ("pr_interval_ms", "qrs_duration_ms", "qt_interval_ms",
                     "qtc_interval_ms", "rr_mean_ms", "heart_rate_bpm"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be > 0 when present, got {value}")
        if (self.qt_interval_ms is not None and self.qrs_duration_ms is not None
                and self.qt_interval_ms < self.qrs_duration_ms):
            raise ValueError("qt_interval_ms must be >= qrs_duration_ms")
        if self.heart_rate_bpm is not None and self.beat_count < 2:
            raise ValueError("heart_rate_bpm requires at least two beats")
        nullable = ("heart_rate_bpm", "rr_mean_ms", "rr_std_ms", "pr_interval_ms",
                    "qrs_duration_ms", "qt_interval_ms", "qtc_interval_ms")
        if any(getattr(self, n) is None for n in nullable) and not self.quality_flags:
            raise ValueError("null fields require at least one quality flag")

    def to_dict(self) -> dict:
        return {
            "heart_rate_bpm": self.heart_rate_bpm,
            "rr_mean_ms": self.rr_mean_ms,
            "rr_std_ms": self.rr_std_ms,
            "pr_interval_ms": self.pr_interval_ms,
            "qrs_duration_ms": self.qrs_duration_ms,
            "qt_interval_ms": self.qt_interval_ms,
            "qtc_interval_ms": self.qtc_interval_ms,
            "beat_count": self.beat_count,
            "per_beat": [b.to_dict() for b in self.per_beat],
            "quality_flags": sorted(f.value for f in self.quality_flags),
            "lead_used": self.lead_used,
            "qtc_formula": self.qtc_formula,
        }


# ---------------------------------------------------------------------------
# R-peak detection


def _flat_baseline(samples: np.ndarray) -> float:
    """Isoelectric level: median of the flattest fifth of the signal."""
    deriv = np.abs(np.diff(samples, prepend=samples[0]))
    gate = deriv <= np.percentile(deriv, 20)
    flat = samples[gate]
    return float(np.median(flat if flat.size else samples))


def _bandpass(samples: np.ndarray, fs: float) -> np.ndarray:
    numtaps = int(fs * 0.5)
    numtaps += 1 - numtaps % 2  # odd length keeps the filter zero-phase
    nyq = fs / 2.0
    hi = min(BANDPASS_HZ[1], 0.9 * nyq)
    taps = firwin(numtaps, [BANDPASS_HZ[0], hi], pass_zero=False, fs=fs)
    return np.convolve(samples, taps, mode="same")


def _candidate_peaks(values: np.ndarray, spacing: int) -> np.ndarray:
    """Local maxima at least ``spacing`` samples apart, larger peak wins."""
    from scipy.signal import find_peaks
    peaks, _ = find_peaks(values, distance=max(spacing, 1))
    return peaks


def detect_r_peaks(samples: np.ndarray, sampling_rate_hz: float) -> np.ndarray:
    """Strictly increasing R-peak sample indices with >= 200 ms spacing."""
    samples = np.asarray(samples, dtype=np.float64)
    fs = float(sampling_rate_hz)
    if len(samples) < 2 * fs:
        raise ValueError(
            f"series too short: {len(samples)} samples < 2 s at {fs:g} Hz")
    if not np.all(np.isfinite(samples)):
        raise ValueError("series contains non-finite samples")
    if np.ptp(samples) == 0:
        return np.array([], dtype=int)

    filtered = _bandpass(samples, fs)
    squared = np.diff(filtered) ** 2
    window = max(int(INTEGRATION_WINDOW_S * fs), 1)
    integrated = np.convolve(squared, np.ones(window) / window, mode="same")

    refractory = int(REFRACTORY_S * fs)
    candidates = _candidate_peaks(integrated, refractory)
    if candidates.size == 0:
        return np.array([], dtype=int)
    values = integrated[candidates]

    spki = float(np.percentile(values, 98))
    if spki <= 0:
        return np.array([], dtype=int)
    npki = 0.1 * spki
    accepted = []
    for idx, value in zip(candidates, values):
        threshold = npki + 0.25 * (spki - npki)
        if value >= threshold:
            accepted.append(idx)
            spki = 0.125 * value + 0.875 * spki
        else:
            npki = 0.125 * value + 0.875 * npki

    # search-back: recover beats missed inside unusually long gaps
    if len(accepted) >= 2:
        rr_median = float(np.median(np.diff(accepted)))
        threshold = 0.5 * (npki + 0.25 * (spki - npki))
        recovered = list(accepted)
        for lo, hi in zip(accepted, accepted[1:]):
            if hi - lo > 1.66 * rr_median:
                inside = [(integrated[c], c) for c in candidates
                          if lo + refractory <= c <= hi - refractory
                          and integrated[c] >= threshold and c not in recovered]
                if inside:
                    recovered.append(max(inside)[1])
        accepted = sorted(recovered)

    baseline = _flat_baseline(samples)
    refined = []
    for idx in accepted:
        lo = max(0, idx - int(0.15 * fs))
        hi = min(len(samples), idx + int(0.15 * fs) + 1)
        refined.append(lo + int(np.argmax(np.abs(samples[lo:hi] - baseline))))

    # dedupe refinements that collapsed onto the same raw peak
    result: list[int] = []
    for idx in sorted(set(refined)):
        if result and idx - result[-1] < refractory:
            if abs(samples[idx] - baseline) > abs(samples[result[-1]] - baseline):
                result[-1] = idx
        else:
            result.append(idx)
    return np.asarray(result, dtype=int)


# ---------------------------------------------------------------------------
# Delineation


def _scan_crossing(deviation: np.ndarray, start: int, step: int, limit: int,
                   threshold: float) -> Optional[int]:
    """First index from ``start`` (exclusive) along ``step`` with |dev| < threshold."""
    idx = start + step
    while 0 <= idx < len(deviation) and abs(idx - start) <= limit:
        if deviation[idx] < threshold:
            return idx
        idx += step
    return None


def _tangent_offset(deviation: np.ndarray, peak: int, end: int) -> Optional[int]:
    """Baseline intersection of the tangent at the steepest descent after ``peak``."""
    stop = min(end, len(deviation) - 1)
    if stop - peak < 3:
        return None
    segment = deviation[peak:stop + 1]
    slope = np.gradient(segment)
    steep_rel = int(np.argmin(slope))
    steep = peak + steep_rel
    rate = -slope[steep_rel]
    if rate <= 0:
        return None
    offset = steep + deviation[steep] / rate
    result = int(round(offset))
    if result <= peak:
        return None
    return min(result, len(deviation) - 1)


def delineate(samples: np.ndarray, sampling_rate_hz: float,
              r_peaks: np.ndarray) -> Fiducials:
    """Locate PQRST landmarks around each detected R peak.

    Absent waves stay absent; landmarks that would violate the per-beat
    ordering are dropped rather than fabricated.
    """
    samples = np.asarray(samples, dtype=np.float64)
    fs = float(sampling_rate_hz)
    r_peaks = np.asarray(r_peaks, dtype=int)
    if r_peaks.size == 0:
        return Fiducials(())

    baseline = _flat_baseline(samples)
    deviation = np.abs(samples - baseline)
    r_amp = float(np.median(deviation[r_peaks]))
    if r_amp <= 0:
        return Fiducials(tuple(BeatFiducials(None, None, None, int(r), None, None, None)
                               for r in r_peaks))

    def ms(value: float) -> int:
        return int(round(value * fs / 1000.0))

    rr_list = np.diff(r_peaks) * 1000.0 / fs
    beats = []
    for k, r in enumerate(r_peaks):
        if rr_list.size:
            rr = float(rr_list[k - 1]) if k > 0 else float(rr_list[0])
        else:
            rr = 1000.0

        # P wave ---------------------------------------------------------
        p_peak = p_onset = None
        win_lo = max(0, r - ms(min(300.0, 0.40 * rr)))
        win_hi = r - ms(50.0)
        if win_hi - win_lo >= 3:
            rel = int(np.argmax(deviation[win_lo:win_hi]))
            cand = win_lo + rel
            interior = 0 < rel < (win_hi - win_lo - 1)
            if interior and deviation[cand] >= ONSET_FRACTION * r_amp:
                p_peak = cand
                p_onset = _scan_crossing(
                    deviation, p_peak, -1, ms(120.0),
                    ONSET_FRACTION * deviation[p_peak])

        # QRS onset/offset -------------------------------------------------
        # Q and S deflect opposite to R; scan outward from their troughs.
        qrs_onset = qrs_offset = None
        polarity = 1.0 if samples[r] >= baseline else -1.0
        opposite = -polarity * (samples - baseline)
        q_lo = max(0, r - ms(120.0))
        if r - q_lo >= 2:
            q_trough = q_lo + int(np.argmax(opposite[q_lo:r]))
            q_depth = opposite[q_trough]
            if q_depth >= 0.02 * r_amp:
                qrs_onset = _scan_crossing(deviation, q_trough, -1, ms(160.0),
                                           ONSET_FRACTION * q_depth)
            if qrs_onset is None:
                qrs_onset = _scan_crossing(deviation, r, -1, ms(160.0),
                                           ONSET_FRACTION * r_amp)
        s_hi = min(len(samples) - 1, r + ms(140.0))
        if s_hi - r >= 2:
            s_trough = (r + 1) + int(np.argmax(opposite[r + 1:s_hi + 1]))
            s_depth = opposite[s_trough]
            if s_depth >= 0.02 * r_amp:
                qrs_offset = _scan_crossing(deviation, s_trough, +1, ms(160.0),
                                            ONSET_FRACTION * s_depth)
            if qrs_offset is None:
                qrs_offset = _scan_crossing(deviation, r, +1, ms(160.0),
                                            ONSET_FRACTION * r_amp)

        # T wave -----------------------------------------------------------
        t_peak = t_offset = None
        t_start = r + ms(70.0)
        if qrs_offset is not None:
            t_start = max(t_start, qrs_offset + ms(25.0))
        t_end = r + ms(min(500.0, 0.55 * rr))
        t_end = min(t_end, len(samples) - 1)
        if t_end - t_start >= 3:
            cand = t_start + int(np.argmax(deviation[t_start:t_end]))
            if deviation[cand] >= ONSET_FRACTION * r_amp:
                t_peak = cand
                t_offset = _tangent_offset(deviation, t_peak, t_end + ms(60.0))

        beats.append(_ordered_beat(p_onset, p_peak, qrs_onset, int(r),
                                   qrs_offset, t_peak, t_offset))
    return Fiducials(tuple(beats))


def _ordered_beat(p_onset, p_peak, qrs_onset, r_peak, qrs_offset, t_peak, t_offset):
    """Drop landmarks that break the strict ordering instead of fabricating."""
    if p_peak is not None and p_onset is not None and p_onset >= p_peak:
        p_onset = None
    if qrs_onset is not None:
        if qrs_onset >= r_peak:
            qrs_onset = None
        elif p_peak is not None and p_peak >= qrs_onset:
            p_peak = p_onset = None
    if p_peak is None:
        p_onset = None
    if qrs_offset is not None and qrs_offset <= r_peak:
        qrs_offset = None
    if t_peak is not None and qrs_offset is not None and t_peak <= qrs_offset:
        t_peak = t_offset = None
    if t_peak is None:
        t_offset = None
    if t_offset is not None and t_peak is not None and t_offset <= t_peak:
        t_offset = None
    return BeatFiducials(p_onset, p_peak, qrs_onset, r_peak, qrs_offset,
                         t_peak, t_offset)


# ---------------------------------------------------------------------------
# Interval computation


def compute_measurements(fiducials: Fiducials, sampling_rate_hz: float,
                         lead_used: Optional[str] = None,
                         noisy: bool = False) -> MeasurementReport:
    """Aggregate per-beat intervals into a report (medians across beats)."""
    fs = float(sampling_rate_hz)
    flags: set[QualityFlag] = set()
    if noisy:
        flags.add(QualityFlag.NOISY_SIGNAL)
    beats = fiducials.beats
    n = len(beats)

    def to_ms(a: Optional[int], b: Optional[int]) -> Optional[float]:
        if a is None or b is None:
            return None
        return (b - a) * 1000.0 / fs

    r_peaks = [b.r_peak for b in beats]
    rr = [(b - a) * 1000.0 / fs for a, b in zip(r_peaks, r_peaks[1:])]

    per_beat = []
    for k, beat in enumerate(beats):
        rr_prev = rr[k - 1] if k > 0 else None
        qt = to_ms(beat.qrs_onset, beat.t_offset)
        qtc = None
        if qt is not None and rr_prev is not None:
            qtc = qt / math.sqrt(rr_prev / 1000.0)
        per_beat.append(BeatIntervals(
            r_peak=int(beat.r_peak),
            rr_prev_ms=rr_prev,
            pr_ms=to_ms(beat.p_onset, beat.qrs_onset),
            qrs_ms=to_ms(beat.qrs_onset, beat.qrs_offset),
            qt_ms=qt,
            qtc_ms=qtc,
        ))

    def median_of(values: list[Optional[float]]) -> Optional[float]:
        present = [v for v in values if v is not None]
        return float(np.median(present)) if present else None

    heart_rate = rr_mean = rr_std = None
    if n >= 2 and rr:
        rr_mean = float(np.mean(rr))
        rr_std = float(np.std(rr))
        heart_rate = 60000.0 / rr_mean
    else:
        flags.add(QualityFlag.TOO_FEW_BEATS)
    if n == 0 and not noisy:
        flags.add(QualityFlag.NOISY_SIGNAL)

    pr = median_of([b.pr_ms for b in per_beat])
    qrs = median_of([b.qrs_ms for b in per_beat])
    qt = median_of([b.qt_ms for b in per_beat])
    qtc = median_of([b.qtc_ms for b in per_beat])

    if pr is None or sum(b.p_peak is not None for b in beats) < max(1, n / 2):
        pr = None
        flags.add(QualityFlag.MISSING_P_WAVE)
    if qt is None or qtc is None:
        flags.add(QualityFlag.MISSING_T_WAVE)
    if qrs is None and n > 0:
        flags.add(QualityFlag.NOISY_SIGNAL)
    if qt is not None and qrs is not None and qt < qrs:
        # medians over different beat subsets can invert; drop the weaker one
        qt = qtc = None
        flags.add(QualityFlag.MISSING_T_WAVE)

    return MeasurementReport(
        heart_rate_bpm=heart_rate,
        rr_mean_ms=rr_mean,
        rr_std_ms=rr_std,
        pr_interval_ms=pr,
        qrs_duration_ms=qrs,
        qt_interval_ms=qt,
        qtc_interval_ms=qtc,
        beat_count=n,
        per_beat=tuple(per_beat),
        quality_flags=frozenset(flags),
        lead_used=lead_used,
    )


def measurement_lead(record: EcgRecord) -> str:
    for name in MEASUREMENT_LEAD_PRIORITY:
        if record.has_lead(name):
            return name
    return record.lead_names[0]


def measure_record(record: EcgRecord) -> MeasurementReport:
    """Full pipeline on the preferred measurement lead."""
    lead = measurement_lead(record)
    samples = record.lead(lead)
    try:
        r_peaks = detect_r_peaks(samples, record.sampling_rate_hz)
    except ValueError:
        return compute_measurements(Fiducials(()), record.sampling_rate_hz,
                                    lead_used=lead, noisy=True)
    fiducials = delineate(samples, record.sampling_rate_hz, r_peaks)
    return compute_measurements(fiducials, record.sampling_rate_hz, lead_used=lead)


_FLAG_PRIORITY = (QualityFlag.TOO_FEW_BEATS, QualityFlag.NOISY_SIGNAL,
                  QualityFlag.MISSING_P_WAVE, QualityFlag.MISSING_T_WAVE)


def measurement_tool_call(record: EcgRecord) -> ToolOutput:
    """Wrap the measurement pipeline as a structured ToolOutput.

    A null heart rate marks the output invalid, which drives the
    response-fail protocol in the agent loop.
    """
    if record.duration_s < 2.0:
        return ToolOutput.invalid(ToolName.MEASUREMENT,
                                  QualityFlag.TOO_FEW_BEATS.value)
    report = measure_record(record)
    if report.heart_rate_bpm is None:
        reason = next((f.value for f in _FLAG_PRIORITY if f in report.quality_flags),
                      QualityFlag.NOISY_SIGNAL.value)
        return ToolOutput.invalid(ToolName.MEASUREMENT, reason)
    return ToolOutput.valid(ToolName.MEASUREMENT, report.to_dict())
