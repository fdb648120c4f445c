"""Synthetic ECG generator with exact landmark ground truth.

Each beat is a sum of five Gaussians (P, Q, R, S, T).  Landmarks are defined
analytically from the template:

* wave onsets at the 5%-of-peak amplitude crossing, ``center - k*sigma`` with
  ``k = sqrt(2*ln 20)``;
* offsets symmetrically, except the T offset which sits at ``center + 2*sigma``
  (where the tangent through the steepest descent point crosses the baseline);
* peaks at the Gaussian centers.

Wave timing adapts to the local RR interval so the full PQRST complex fits
between beats at any rate in [20, 250] bpm.  QRS shape is rate-independent.

The generator is deterministic per seed and doubles as the ground-truth
oracle for R-peak detection, delineation, and measurement tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .records import BeatFiducials, EcgRecord, Fiducials, LeadConfig

# amplitude fraction defining wave onset/offset crossings
ONSET_FRACTION = 0.05
ONSET_SIGMAS = math.sqrt(2.0 * math.log(1.0 / ONSET_FRACTION))

# projection of the base waveform onto the 12 standard leads
LEAD_FACTORS = {
    "I": 0.55, "II": 1.0, "III": 0.45,
    "aVR": -0.775, "aVL": 0.05, "aVF": 0.725,
    "V1": -0.4, "V2": 0.5, "V3": 0.8, "V4": 1.1, "V5": 1.0, "V6": 0.85,
}


@dataclass(frozen=True)
class Wave:
    center_ms: float   # relative to the R peak
    sigma_ms: float
    amplitude_mv: float


@dataclass(frozen=True)
class EcgTemplate:
    """Base wave parameters at a 1000 ms RR reference.

    ``p`` may be ``None`` to synthesize P-less beats.  ``extra_pr_ms`` shifts
    the P wave earlier (lengthens PR); ``extra_qt_ms`` shifts the T wave later
    (lengthens QT).  Both survive RR scaling unchanged.
    """

    p: Optional[Wave] = Wave(-160.0, 25.0, 0.15)
    q: Wave = Wave(-35.0, 6.0, -0.12)
    r: Wave = Wave(0.0, 10.0, 1.0)
    s: Wave = Wave(30.0, 7.0, -0.25)
    t: Wave = Wave(260.0, 60.0, 0.35)
    extra_pr_ms: float = 0.0
    extra_qt_ms: float = 0.0

    @classmethod
    def default(cls) -> "EcgTemplate":
        return cls()

    def without_p_wave(self) -> "EcgTemplate":
        return replace(self, p=None)

    def ventricular(self) -> "EcgTemplate":
        """Wide-QRS ectopic shape: no P, broad QRS, discordant T."""
        return replace(
            self,
            p=None,
            q=Wave(-45.0, 14.0, -0.18),
            r=Wave(0.0, 22.0, 1.1),
            s=Wave(55.0, 16.0, -0.35),
            t=Wave(280.0, 50.0, -0.30),
        )


@dataclass(frozen=True)
class ScaledBeat:
    """Template waves and landmark offsets (ms, R-relative) for one RR context."""

    waves: tuple[Wave, ...]
    p_onset: Optional[float]
    p_peak: Optional[float]
    qrs_onset: float
    qrs_offset: float
    t_peak: float
    t_offset: float

    @property
    def pre_extent_ms(self) -> float:
        start = self.p_onset if self.p_onset is not None else self.qrs_onset
        sigma = self.waves[0].sigma_ms
        return -start + 2.0 * sigma

    @property
    def post_extent_ms(self) -> float:
        return self.t_offset + self.waves[-1].sigma_ms


def scale_template(template: EcgTemplate, rr_ms: float) -> ScaledBeat:
    """Adapt wave timing to the local RR interval; QRS stays fixed."""
    f = math.sqrt(rr_ms / 1000.0)
    f_p = min(f, 1.05)

    waves = []
    p_onset = p_peak = None
    if template.p is not None:
        center = -min(-template.p.center_ms * f_p, 0.30 * rr_ms) - template.extra_pr_ms
        sigma = min(template.p.sigma_ms * f_p, 0.03 * rr_ms)
        waves.append(Wave(center, sigma, template.p.amplitude_mv))
        p_onset = center - ONSET_SIGMAS * sigma
        p_peak = center

    q, r, s = template.q, template.r, template.s
    waves.extend([q, r, s])
    qrs_onset = q.center_ms - ONSET_SIGMAS * q.sigma_ms
    qrs_offset = s.center_ms + ONSET_SIGMAS * s.sigma_ms

    t_center = min(template.t.center_ms * f, 0.42 * rr_ms) + template.extra_qt_ms
    t_sigma = min(template.t.sigma_ms * f, 0.045 * rr_ms)
    waves.append(Wave(t_center, t_sigma, template.t.amplitude_mv))

    return ScaledBeat(
        waves=tuple(waves),
        p_onset=p_onset,
        p_peak=p_peak,
        qrs_onset=qrs_onset,
        qrs_offset=qrs_offset,
        t_peak=t_center,
        t_offset=t_center + 2.0 * t_sigma,
    )


@dataclass(frozen=True)
class PrematureBeat:
    """Replace beat ``index`` (0-based) with an early ectopic beat.

    The beat fires ``prematurity`` of the nominal RR after its predecessor;
    the following beat stays on schedule (full compensatory pause).
    """

    index: int
    prematurity: float = 0.6
    kind: str = "ventricular"  # or "atrial"

    def __post_init__(self):
        if not 0.3 <= self.prematurity <= 0.9:
            raise ValueError(f"prematurity {self.prematurity} outside [0.3, 0.9]")
        if self.kind not in ("ventricular", "atrial"):
            raise ValueError(f"unknown premature beat kind {self.kind!r}")


def synthesize_ecg(
    heart_rate_bpm: float,
    duration_s: float,
    sampling_rate_hz: float,
    noise_amplitude_mv: float = 0.0,
    seed: int = 0,
    *,
    template: Optional[EcgTemplate] = None,
    lead_config: LeadConfig = LeadConfig.LEAD_II,
    rr_jitter_frac: float = 0.0,
    premature: Sequence[PrematureBeat] = (),
    st_depression_mv: float = 0.0,
    record_id: Optional[str] = None,
) -> tuple[EcgRecord, Fiducials]:
    """Generate a record and the exact landmark positions used to build it."""
    if not 20.0 <= heart_rate_bpm <= 250.0:
        raise ValueError(f"heart_rate_bpm {heart_rate_bpm} outside [20, 250]")
    if duration_s < 2.0:
        raise ValueError(f"duration_s {duration_s} must be >= 2")
    if sampling_rate_hz <= 0:
        raise ValueError("sampling_rate_hz must be positive")
    if noise_amplitude_mv < 0:
        raise ValueError("noise_amplitude_mv must be >= 0")
    if not 0.0 <= rr_jitter_frac <= 0.45:
        raise ValueError("rr_jitter_frac outside [0, 0.45]")

    template = template or EcgTemplate.default()
    rng = np.random.default_rng(seed)
    fs = float(sampling_rate_hz)
    duration_ms = duration_s * 1000.0
    rr_nominal = 60000.0 / heart_rate_bpm
    n = int(round(duration_s * fs))

    # nominal beat positions (ms), constant RR plus optional jitter
    positions = [scale_template(template, rr_nominal).pre_extent_ms]
    while True:
        rr = rr_nominal
        if rr_jitter_frac > 0:
            rr *= 1.0 + rng.uniform(-rr_jitter_frac, rr_jitter_frac)
        nxt = positions[-1] + rr
        if nxt + scale_template(template, rr).post_extent_ms > duration_ms:
            break
        positions.append(nxt)
    # the final nominal beat may no longer fit once placed; re-check the first too
    beats: list[tuple[float, float, str]] = []  # (r_ms, rr_prev_ms, kind)
    premature_by_index = {pb.index: pb for pb in premature}
    for pb in premature:
        if pb.index < 1 or pb.index >= len(positions) - 1:
            raise ValueError(
                f"premature beat index {pb.index} must leave a neighbor on each side "
                f"(record has {len(positions)} beats)")
    adjusted = list(positions)
    for pb in premature:
        adjusted[pb.index] = adjusted[pb.index - 1] + pb.prematurity * rr_nominal
    for k, r_ms in enumerate(adjusted):
        rr_prev = adjusted[k] - adjusted[k - 1] if k > 0 else rr_nominal
        kind = premature_by_index[k].kind if k in premature_by_index else "normal"
        beats.append((r_ms, rr_prev, kind))

    base = np.zeros(n, dtype=np.float64)
    t_ms = np.arange(n, dtype=np.float64) * (1000.0 / fs)
    beat_fiducials = []
    for r_ms, rr_prev, kind in beats:
        beat_template = template.ventricular() if kind == "ventricular" else template
        scaled = scale_template(beat_template, rr_prev)
        for wave in scaled.waves:
            lo = np.searchsorted(t_ms, r_ms + wave.center_ms - 5 * wave.sigma_ms)
            hi = np.searchsorted(t_ms, r_ms + wave.center_ms + 5 * wave.sigma_ms)
            window = t_ms[lo:hi] - (r_ms + wave.center_ms)
            base[lo:hi] += wave.amplitude_mv * np.exp(-0.5 * (window / wave.sigma_ms) ** 2)
        if st_depression_mv:
            _apply_st_shift(base, t_ms, r_ms, scaled, -abs(st_depression_mv))

        def idx(offset_ms):
            if offset_ms is None:
                return None
            return int(round((r_ms + offset_ms) * fs / 1000.0))

        beat_fiducials.append(BeatFiducials(
            p_onset=idx(scaled.p_onset),
            p_peak=idx(scaled.p_peak),
            qrs_onset=idx(scaled.qrs_onset),
            r_peak=idx(0.0),
            qrs_offset=idx(scaled.qrs_offset),
            t_peak=idx(scaled.t_peak),
            t_offset=idx(scaled.t_offset),
        ))

    lead_names = lead_config.lead_names
    signals = np.stack([base * LEAD_FACTORS[name] for name in lead_names])
    if noise_amplitude_mv > 0:
        signals = signals + rng.normal(0.0, noise_amplitude_mv, size=signals.shape)

    rid = record_id or f"synth-{heart_rate_bpm:g}bpm-{seed}"
    record = EcgRecord.build(
        rid, fs, [(name, signals[i]) for i, name in enumerate(lead_names)], lead_config)
    return record, Fiducials(tuple(beat_fiducials))


def _apply_st_shift(base: np.ndarray, t_ms: np.ndarray, r_ms: float,
                    scaled: ScaledBeat, shift_mv: float, ramp_ms: float = 10.0):
    """Shift the ST segment (QRS offset to T onset) with raised-cosine ramps."""
    st_start = r_ms + scaled.qrs_offset + 5.0
    st_end = r_ms + scaled.t_peak - 2.0 * scaled.waves[-1].sigma_ms
    if st_end - st_start < 2 * ramp_ms:
        return
    lo = np.searchsorted(t_ms, st_start - ramp_ms)
    hi = np.searchsorted(t_ms, st_end + ramp_ms)
    window = t_ms[lo:hi]
    envelope = np.ones_like(window)
    rise = window < st_start
    envelope[rise] = 0.5 * (1 + np.cos(np.pi * (st_start - window[rise]) / ramp_ms))
    fall = window > st_end
    envelope[fall] = 0.5 * (1 + np.cos(np.pi * (window[fall] - st_end) / ramp_ms))
    base[lo:hi] += shift_mv * envelope


def flat_record(duration_s: float = 10.0, sampling_rate_hz: float = 500.0,
                lead_config: LeadConfig = LeadConfig.LEAD_II,
                record_id: str = "flat") -> EcgRecord:
    """All-zero record; every tool yields invalid output on it."""
    n = int(round(duration_s * sampling_rate_hz))
    leads = [(name, np.zeros(n)) for name in lead_config.lead_names]
    return EcgRecord.build(record_id, sampling_rate_hz, leads, lead_config)


def beat_interval_s(fiducials: Fiducials, beat_index: int,
                    sampling_rate_hz: float) -> tuple[float, float]:
    """Time span of one beat, first to last present landmark, in seconds."""
    beat = fiducials.beats[beat_index]
    marks = [value for _, value in beat.present()]
    return marks[0] / sampling_rate_hz, marks[-1] / sampling_rate_hz
