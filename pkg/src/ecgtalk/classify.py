"""Classification tool: pluggable classifier interface with a deterministic
rule-based reference implementation and an HTTP adapter for external models.

The reference classifier is a pure function of measurement-level features
(heart rate, RR regularity, P-wave presence, per-beat prematurity and QRS
width, ST level, PR, QTc).  Every prediction carries the name of the rule
that fired, for auditability.  Rhythm rules depend only on timing, so they
are invariant to positive amplitude scaling; the ST rule is the documented
exception.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Protocol, Sequence

import numpy as np

from .errors import ParseError
from .measure import _flat_baseline, delineate, detect_r_peaks, compute_measurements
from .records import EcgRecord, LeadConfig
from .tools import ToolName, ToolOutput

DEFAULT_THRESHOLD = 0.5
SCORE_FIRED = 0.95
SCORE_PARTIAL = 0.35
SCORE_QUIET = 0.05

WIDE_QRS_MS = 120.0
PREMATURE_RR_FRACTION = 0.8
RR_COV_IRREGULAR = 0.15
ST_DEPRESSION_MV = -0.10
PR_BLOCK_MS = 200.0
QTC_LONG_MS = 460.0

RHYTHM_CODES = ("STACH", "SBRAD", "AFIB", "PAC", "PVC")


@dataclass(frozen=True)
class DiagnosticClass:
    code: str
    display_name: str
    leads_supported: frozenset[LeadConfig]

    def to_dict(self) -> dict:
        return {"code": self.code, "display_name": self.display_name,
                "leads_supported": sorted(c.value for c in self.leads_supported)}


@dataclass(frozen=True)
class ClassificationOutput:
    scores: dict
    predicted: tuple[str, ...]
    threshold: float = DEFAULT_THRESHOLD
    status: str = "valid"
    reason: Optional[str] = None
    rule_trace: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold {self.threshold} outside (0, 1)")
        for code, p in self.scores.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"score for {code} = {p} outside [0, 1]")
        expected = tuple(c for c, p in self.scores.items() if p >= self.threshold)
        if tuple(self.predicted) != expected:
            raise ValueError("predicted set must equal scores >= threshold")

    @property
    def is_valid(self) -> bool:
        return self.status == "valid"

    def to_dict(self) -> dict:
        return {"scores": dict(self.scores), "predicted": list(self.predicted),
                "threshold": self.threshold, "status": self.status,
                "reason": self.reason, "rule_trace": dict(self.rule_trace)}

    @classmethod
    def invalid(cls, reason: str) -> "ClassificationOutput":
        return cls(scores={}, predicted=(), status="invalid", reason=reason)


# ---------------------------------------------------------------------------
# Registries


def _registry_from_payload(payload: dict, source: str) -> list[DiagnosticClass]:
    classes = []
    seen = set()
    for entry in payload["classes"]:
        code = entry["code"]
        if code in seen:
            raise ParseError(f"duplicate class code {code!r}", path=source)
        seen.add(code)
        leads = frozenset(LeadConfig(v) for v in entry["leads_supported"])
        if not leads:
            raise ParseError(f"class {code!r} supports no lead configuration",
                             path=source)
        classes.append(DiagnosticClass(code, entry["display_name"], leads))
    return classes


def load_registry_file(path) -> list[DiagnosticClass]:
    """Load a registry file: a list of (code, display_name, leads_supported)."""
    payload = json.loads(open(path).read())
    return _registry_from_payload(payload, str(path))


def _default_classes() -> list[DiagnosticClass]:
    text = resources.files("ecgtalk.data").joinpath("class_registry.json").read_text()
    return _registry_from_payload(json.loads(text), "builtin class_registry.json")


def class_registry(lead_config: LeadConfig,
                   classes: Optional[Sequence[DiagnosticClass]] = None) -> list[DiagnosticClass]:
    """Diagnostic classes detectable for this lead configuration."""
    pool = list(classes) if classes is not None else _default_classes()
    return [c for c in pool if lead_config in c.leads_supported]


# ---------------------------------------------------------------------------
# Rule-based reference classifier


@dataclass(frozen=True)
class RhythmFeatures:
    heart_rate_bpm: float
    rr_cov: float
    p_present_fraction: float
    premature_wide: bool
    premature_narrow: bool
    any_wide: bool
    st_level_mv: Optional[float]
    pr_ms: Optional[float]
    qtc_ms: Optional[float]


def extract_features(record: EcgRecord) -> Optional[RhythmFeatures]:
    """Measurement-level features; None when the signal yields no usable beats."""
    from .measure import measurement_lead

    if record.duration_s < 2.0:
        return None
    lead = measurement_lead(record)
    samples = record.lead(lead)
    fs = record.sampling_rate_hz
    r_peaks = detect_r_peaks(samples, fs)
    if r_peaks.size < 2:
        return None
    fiducials = delineate(samples, fs, r_peaks)
    report = compute_measurements(fiducials, fs, lead_used=lead)
    if report.heart_rate_bpm is None:
        return None

    rr = np.diff(r_peaks) * 1000.0 / fs
    rr_cov = float(np.std(rr) / np.mean(rr)) if np.mean(rr) > 0 else 0.0
    rr_median = float(np.median(rr))

    premature_wide = premature_narrow = any_wide = False
    for k, beat in enumerate(report.per_beat):
        wide = beat.qrs_ms is not None and beat.qrs_ms > WIDE_QRS_MS
        any_wide = any_wide or wide
        premature = (beat.rr_prev_ms is not None
                     and beat.rr_prev_ms < PREMATURE_RR_FRACTION * rr_median)
        if premature and wide:
            premature_wide = True
        elif premature and beat.qrs_ms is not None:
            premature_narrow = True

    baseline = _flat_baseline(samples)
    st_values = []
    for beat in fiducials.beats:
        if beat.qrs_offset is None:
            continue
        lo = beat.qrs_offset + int(round(0.020 * fs))
        hi = beat.qrs_offset + int(round(0.080 * fs))
        if hi <= len(samples):
            st_values.append(float(np.mean(samples[lo:hi] - baseline)))
    st_level = float(np.median(st_values)) if st_values else None

    p_fraction = sum(b.p_peak is not None for b in fiducials.beats) / len(fiducials.beats)
    return RhythmFeatures(
        heart_rate_bpm=report.heart_rate_bpm,
        rr_cov=rr_cov,
        p_present_fraction=p_fraction,
        premature_wide=premature_wide,
        premature_narrow=premature_narrow,
        any_wide=any_wide,
        st_level_mv=st_level,
        pr_ms=report.pr_interval_ms,
        qtc_ms=report.qtc_interval_ms,
    )


def _fired_rules(f: RhythmFeatures) -> tuple[dict, dict]:
    """Map class code -> score and class code -> rule name."""
    fired: dict[str, float] = {}
    trace: dict[str, str] = {}

    def fire(code, rule, score=SCORE_FIRED):
        fired[code] = score
        trace[code] = rule

    if f.heart_rate_bpm > 100:
        fire("STACH", "hr_gt_100")
    if f.heart_rate_bpm < 60:
        fire("SBRAD", "hr_lt_60")
    if f.rr_cov > RR_COV_IRREGULAR and f.p_present_fraction < 0.5:
        fire("AFIB", "irregular_rr_absent_p")
    if f.premature_wide:
        fire("PVC", "premature_wide_qrs")
    elif f.any_wide:
        fire("PVC", "wide_qrs_not_premature", SCORE_PARTIAL)
    if f.premature_narrow:
        fire("PAC", "premature_narrow_qrs")
    if f.st_level_mv is not None and f.st_level_mv <= ST_DEPRESSION_MV:
        fire("STD", "st_depression")
    if f.pr_ms is not None and f.pr_ms > PR_BLOCK_MS:
        fire("1AVB", "pr_gt_200")
    if f.qtc_ms is not None and f.qtc_ms > QTC_LONG_MS:
        fire("LNGQT", "qtc_gt_460")
    if not any(fired.get(code, 0.0) >= DEFAULT_THRESHOLD for code in RHYTHM_CODES):
        fire("SR", "default_sinus_rhythm")
    return fired, trace


class Classifier(Protocol):
    def classify(self, record: EcgRecord,
                 registry: Sequence[DiagnosticClass]) -> ClassificationOutput: ...


class RuleBasedClassifier:
    """Deterministic reference classifier over measurement-level features."""

    def classify(self, record: EcgRecord,
                 registry: Sequence[DiagnosticClass]) -> ClassificationOutput:
        if not any(record.lead_config in c.leads_supported for c in registry):
            return ClassificationOutput.invalid("lead_config_not_covered")
        features = extract_features(record)
        if features is None:
            return ClassificationOutput.invalid("measurement_failed")
        fired, trace = _fired_rules(features)
        scores = {c.code: fired.get(c.code, SCORE_QUIET) for c in registry}
        predicted = tuple(code for code, p in scores.items() if p >= DEFAULT_THRESHOLD)
        return ClassificationOutput(
            scores=scores, predicted=predicted, threshold=DEFAULT_THRESHOLD,
            rule_trace={c: r for c, r in trace.items() if c in scores})


def classification_tool_call(record: EcgRecord,
                             registry: Optional[Sequence[DiagnosticClass]] = None,
                             classifier: Optional[Classifier] = None) -> ToolOutput:
    registry = registry if registry is not None else class_registry(record.lead_config)
    classifier = classifier or RuleBasedClassifier()
    output = classifier.classify(record, registry)
    if not output.is_valid:
        return ToolOutput.invalid(ToolName.CLASSIFICATION,
                                  output.reason or "classification_failed")
    return ToolOutput.valid(ToolName.CLASSIFICATION, output.to_dict())


# ---------------------------------------------------------------------------
# External classifier adapter


@dataclass(frozen=True)
class EndpointDescriptor:
    url: str
    timeout_s: float = 10.0


class ExternalClassifier:
    """HTTP adapter satisfying the classify contract.

    Responses are validated against the ClassificationOutput invariants
    before use; every failure mode maps to an Invalid output, never a crash.
    """

    def __init__(self, descriptor: EndpointDescriptor, transport=None):
        import httpx

        self.descriptor = descriptor
        self._client = httpx.Client(transport=transport,
                                    timeout=descriptor.timeout_s)

    def classify(self, record: EcgRecord,
                 registry: Sequence[DiagnosticClass]) -> ClassificationOutput:
        import httpx

        request = {
            "record_id": record.record_id,
            "lead_config": record.lead_config.value,
            "sampling_rate_hz": record.sampling_rate_hz,
            "samples": {name: samples.tolist() for name, samples in record.leads},
        }
        try:
            response = self._client.post(self.descriptor.url, json=request)
            response.raise_for_status()
            payload = response.json()
        except httpx.TimeoutException:
            return ClassificationOutput.invalid("timeout")
        except httpx.HTTPError as exc:
            return ClassificationOutput.invalid(f"connection_error: {exc.__class__.__name__}")
        except ValueError:
            return ClassificationOutput.invalid("schema_violation: response not JSON")

        scores = payload.get("scores") if isinstance(payload, dict) else None
        if not isinstance(scores, dict):
            return ClassificationOutput.invalid("schema_violation: missing 'scores' object")
        for code in (c.code for c in registry):
            if code not in scores:
                return ClassificationOutput.invalid(
                    f"schema_violation: no score for registry code {code!r}")
        for code, p in scores.items():
            if not isinstance(p, (int, float)) or not 0.0 <= float(p) <= 1.0:
                return ClassificationOutput.invalid(
                    f"schema_violation: score for {code!r} = {p!r} outside [0, 1]")
        ordered = {c.code: float(scores[c.code]) for c in registry}
        predicted = tuple(code for code, p in ordered.items() if p >= DEFAULT_THRESHOLD)
        return ClassificationOutput(scores=ordered, predicted=predicted)


def attach_external_classifier(descriptor, transport=None) -> ExternalClassifier:
    """Resolve a descriptor (URL string or EndpointDescriptor) into a classifier."""
    if isinstance(descriptor, str):
        descriptor = EndpointDescriptor(url=descriptor)
    return ExternalClassifier(descriptor, transport=transport)
