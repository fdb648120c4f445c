"""Explanation tool for single-lead classifier decisions, plus the TIoU metric.

Sliding-window occlusion: each window is replaced by a linear interpolation
between its edge values and the classifier is re-run; the score drop is
spread over the window's samples and aggregated into a per-sample saliency
curve.  Contiguous regions above a fraction of the peak saliency become the
reported intervals, ranked by their peak saliency.  An optional band-stop
pass over octave bands yields the most influential frequency band.

Multivariate (12-lead) input is refused: occlusion here is defined for a
univariate series only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .classify import (Classifier, DiagnosticClass, RuleBasedClassifier,
                       class_registry)
from .errors import UnsupportedLeadConfigError
from .records import EcgRecord
from .tools import ToolName, ToolOutput

OCTAVE_BANDS_HZ = ((0.5, 1.0), (1.0, 2.0), (2.0, 4.0), (4.0, 8.0),
                   (8.0, 16.0), (16.0, 32.0))


@dataclass(frozen=True)
class ExplainerConfig:
    window_s: float = 0.3
    stride_s: float = 0.05
    top_k: int = 3
    region_threshold: float = 0.8  # fraction of peak saliency kept as interval
    snap_to_beats: bool = True  # widen regions to the enclosing beat's landmarks
    spectral: bool = True


@dataclass(frozen=True)
class ExplanationOutput:
    class_code: str
    intervals: tuple[tuple[float, float], ...]
    saliency: dict = field(default_factory=dict)  # (start_s, end_s) -> score in [0, 1]
    frequency_band_hz: Optional[tuple[float, float]] = None
    status: str = "valid"
    reason: Optional[str] = None

    def __post_init__(self):
        last_end = None
        for start, end in self.intervals:
            if not (np.isfinite(start) and np.isfinite(end)):
                raise ValueError("interval bounds must be finite")
            if start < 0 or start >= end:
                raise ValueError(f"bad interval ({start}, {end})")
            if last_end is not None and start < last_end:
                raise ValueError("intervals must be sorted and non-overlapping")
            last_end = end
        for key, score in self.saliency.items():
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"saliency {score} for {key} outside [0, 1]")

    @property
    def is_valid(self) -> bool:
        return self.status == "valid"

    def to_dict(self) -> dict:
        return {
            "class": self.class_code,
            "intervals": [
                {"start_s": s, "end_s": e, "saliency": self.saliency.get((s, e))}
                for s, e in self.intervals
            ],
            "frequency_band_hz": list(self.frequency_band_hz) if self.frequency_band_hz else None,
            "status": self.status,
            "reason": self.reason,
        }

    @classmethod
    def invalid(cls, class_code: str, reason: str) -> "ExplanationOutput":
        return cls(class_code=class_code, intervals=(), status="invalid", reason=reason)


def _masked_record(record: EcgRecord, lo: int, hi: int) -> EcgRecord:
    name, samples = record.leads[0]
    masked = samples.copy()
    left = samples[max(lo - 1, 0)]
    right = samples[min(hi, len(samples) - 1)]
    masked[lo:hi] = np.linspace(left, right, hi - lo)
    return EcgRecord.build(record.record_id + "#masked", record.sampling_rate_hz,
                           [(name, masked)], record.lead_config)


def _band_stopped(record: EcgRecord, low_hz: float, high_hz: float) -> EcgRecord:
    name, samples = record.leads[0]
    spectrum = np.fft.rfft(samples)
    freqs = np.fft.rfftfreq(len(samples), d=1.0 / record.sampling_rate_hz)
    spectrum[(freqs >= low_hz) & (freqs < high_hz)] = 0.0
    filtered = np.fft.irfft(spectrum, n=len(samples))
    return EcgRecord.build(record.record_id + "#bandstop", record.sampling_rate_hz,
                           [(name, filtered)], record.lead_config)


def explain(record: EcgRecord, class_code: str,
            classifier: Optional[Classifier] = None,
            registry: Optional[Sequence[DiagnosticClass]] = None,
            config: Optional[ExplainerConfig] = None) -> ExplanationOutput:
    """Intervals whose masking most reduces the classifier score for ``class_code``."""
    if not record.lead_config.is_single_lead:
        raise UnsupportedLeadConfigError(
            "explanation requires a single-lead record (univariate series); "
            f"got {record.lead_config.value}")
    registry = registry if registry is not None else class_registry(record.lead_config)
    if class_code not in {c.code for c in registry}:
        raise ValueError(f"class {class_code!r} not in the registry for "
                         f"{record.lead_config.value}")
    classifier = classifier or RuleBasedClassifier()
    config = config or ExplainerConfig()

    base_out = classifier.classify(record, registry)
    if not base_out.is_valid:
        return ExplanationOutput.invalid(class_code,
                                         base_out.reason or "classification_failed")
    base_score = base_out.scores.get(class_code, 0.0)
    if base_score < base_out.threshold:
        return ExplanationOutput.invalid(class_code, "class_not_active")

    fs = record.sampling_rate_hz
    n = record.n_samples
    window = max(int(round(config.window_s * fs)), 2)
    stride = max(int(round(config.stride_s * fs)), 1)

    drop_sum = np.zeros(n)
    cover = np.zeros(n)
    for lo in range(0, max(n - window, 0) + 1, stride):
        hi = min(lo + window, n)
        masked = _masked_record(record, lo, hi)
        out = classifier.classify(masked, registry)
        score = out.scores.get(class_code, 0.0) if out.is_valid else 0.0
        drop = max(0.0, base_score - score)
        drop_sum[lo:hi] += drop
        cover[lo:hi] += 1.0
    heat = np.divide(drop_sum, cover, out=np.zeros(n), where=cover > 0)
    peak = float(heat.max())
    if peak <= 0:
        return ExplanationOutput(class_code=class_code, intervals=(), saliency={})

    active = heat >= config.region_threshold * peak
    regions = []
    start = None
    for i, flag in enumerate(active):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            regions.append((start, i))
            start = None
    if start is not None:
        regions.append((start, n))

    scored = [(float(heat[lo:hi].max()) / peak, lo, hi) for lo, hi in regions]
    scored.sort(key=lambda t: (-t[0], t[1]))
    kept = sorted(scored[:config.top_k], key=lambda t: t[1])
    if config.snap_to_beats:
        kept = _snap_regions_to_beats(record, kept)

    intervals = tuple((lo / fs, hi / fs) for _, lo, hi in kept)
    saliency = {(lo / fs, hi / fs): score for score, lo, hi in kept}

    band = None
    if config.spectral:
        best_drop = 0.0
        for low_hz, high_hz in OCTAVE_BANDS_HZ:
            if high_hz >= fs / 2:
                continue
            out = classifier.classify(_band_stopped(record, low_hz, high_hz), registry)
            score = out.scores.get(class_code, 0.0) if out.is_valid else 0.0
            drop = base_score - score
            if drop > best_drop:
                best_drop = drop
                band = (low_hz, high_hz)

    return ExplanationOutput(class_code=class_code, intervals=intervals,
                             saliency=saliency, frequency_band_hz=band)


def _snap_regions_to_beats(record: EcgRecord,
                           regions: list[tuple[float, int, int]]) -> list[tuple[float, int, int]]:
    """Widen each saliency region to the landmark span of the beats it touches.

    Occlusion localizes the responsible beat; the beat's delineated extent is
    the physiologic unit worth reporting.  Regions touching no beat stay as-is.
    """
    from .measure import delineate, detect_r_peaks

    samples = record.leads[0][1]
    try:
        r_peaks = detect_r_peaks(samples, record.sampling_rate_hz)
    except ValueError:
        return regions
    beats = delineate(samples, record.sampling_rate_hz, r_peaks).beats
    spans = []
    for beat in beats:
        marks = [v for _, v in beat.present()]
        spans.append((marks[0], marks[-1] + 1, beat.r_peak))

    snapped: list[tuple[float, int, int]] = []
    for score, lo, hi in regions:
        touched = [(s, e) for s, e, r in spans if lo <= r < hi]
        if touched:
            lo = min(s for s, _ in touched)
            hi = max(e for _, e in touched)
        snapped.append((score, lo, hi))

    # snapping can collapse regions onto the same beat; merge overlaps
    snapped.sort(key=lambda t: t[1])
    merged: list[tuple[float, int, int]] = []
    for score, lo, hi in snapped:
        if merged and lo <= merged[-1][2]:
            prev = merged[-1]
            merged[-1] = (max(prev[0], score), prev[1], max(prev[2], hi))
        else:
            merged.append((score, lo, hi))
    return merged


def explanation_tool_call(record: EcgRecord, class_code: str,
                          classifier: Optional[Classifier] = None,
                          registry: Optional[Sequence[DiagnosticClass]] = None,
                          config: Optional[ExplainerConfig] = None) -> ToolOutput:
    try:
        output = explain(record, class_code, classifier=classifier,
                         registry=registry, config=config)
    except UnsupportedLeadConfigError:
        return ToolOutput.invalid(ToolName.EXPLANATION, "unsupported_lead_config")
    except ValueError as exc:
        return ToolOutput.invalid(ToolName.EXPLANATION, str(exc))
    if not output.is_valid:
        return ToolOutput.invalid(ToolName.EXPLANATION,
                                  output.reason or "explanation_failed")
    return ToolOutput.valid(ToolName.EXPLANATION, output.to_dict())


# ---------------------------------------------------------------------------
# Temporal intersection over union


def _normalize_intervals(intervals) -> list[tuple[float, float]]:
    cleaned = []
    for pair in intervals:
        start, end = float(pair[0]), float(pair[1])
        if not (np.isfinite(start) and np.isfinite(end)):
            raise ValueError(f"interval ({start}, {end}) is not finite")
        if start >= end:
            raise ValueError(f"interval ({start}, {end}) has start >= end")
        cleaned.append((start, end))
    cleaned.sort()
    merged: list[tuple[float, float]] = []
    for start, end in cleaned:
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def tiou(predicted, ground_truth) -> float:
    """Intersection length over union length of two interval sets.

    Both empty counts as perfect agreement (1.0).
    """
    pred = _normalize_intervals(predicted)
    truth = _normalize_intervals(ground_truth)
    if not pred and not truth:
        return 1.0

    inter = 0.0
    i = j = 0
    while i < len(pred) and j < len(truth):
        lo = max(pred[i][0], truth[j][0])
        hi = min(pred[i][1], truth[j][1])
        if hi > lo:
            inter += hi - lo
        if pred[i][1] < truth[j][1]:
            i += 1
        else:
            j += 1

    union = sum(e - s for s, e in _normalize_intervals(pred + truth))
    return inter / union if union > 0 else 1.0
