"""ECG record data model: leads, lead configurations, and beat fiducials.

Records are immutable after construction and safe to share across threads.
All amplitudes are millivolts; all landmark positions are sample indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import MissingLeadError, RecordError

STANDARD_12_LEADS = (
    "I", "II", "III", "aVR", "aVL", "aVF",
    "V1", "V2", "V3", "V4", "V5", "V6",
)


class LeadConfig(Enum):
    TWELVE_LEAD = "twelve_lead"
    LEAD_I = "lead_i"
    LEAD_II = "lead_ii"

    @property
    def lead_names(self) -> tuple[str, ...]:
        if self is LeadConfig.TWELVE_LEAD:
            return STANDARD_12_LEADS
        if self is LeadConfig.LEAD_I:
            return ("I",)
        return ("II",)

    @property
    def is_single_lead(self) -> bool:
        return self is not LeadConfig.TWELVE_LEAD


def infer_lead_config(lead_names: Sequence[str]) -> LeadConfig:
    names = tuple(lead_names)
    if names == STANDARD_12_LEADS:
        return LeadConfig.TWELVE_LEAD
    if names == ("I",):
        return LeadConfig.LEAD_I
    if names == ("II",):
        return LeadConfig.LEAD_II
    raise RecordError(
        f"lead names {list(names)} match no supported configuration "
        "(12 standard leads, or a single lead named 'I' or 'II')"
    )


@dataclass(frozen=True)
class EcgRecord:
    """Multi-lead sampled waveform with its sampling rate and lead configuration."""

    record_id: str
    sampling_rate_hz: float
    leads: tuple[tuple[str, np.ndarray], ...]
    lead_config: LeadConfig

    def __post_init__(self):
        if self.sampling_rate_hz <= 0:
            raise RecordError(f"sampling_rate_hz must be > 0, got {self.sampling_rate_hz}")
        if not self.leads:
            raise RecordError("record has no leads")
        lengths = {len(samples) for _, samples in self.leads}
        if len(lengths) != 1:
            raise RecordError(f"leads have mismatched sample counts: {sorted(lengths)}")
        names = tuple(name for name, _ in self.leads)
        if names != self.lead_config.lead_names:
            raise RecordError(
                f"lead names {list(names)} do not match configuration "
                f"{self.lead_config.value} (expects {list(self.lead_config.lead_names)})"
            )
        for name, samples in self.leads:
            if samples.ndim != 1:
                raise RecordError(f"lead {name!r} is not a 1-D series")
            if not np.all(np.isfinite(samples)):
                raise RecordError(f"lead {name!r} contains non-finite samples")
        # Freeze the sample buffers so shared records cannot be mutated.
        for _, samples in self.leads:
            samples.flags.writeable = False

    @classmethod
    def build(cls, record_id: str, sampling_rate_hz: float,
              leads: Sequence[tuple[str, np.ndarray]],
              lead_config: Optional[LeadConfig] = None) -> "EcgRecord":
        """Construct a record, inferring the lead configuration when not given."""
        lead_tuple = tuple((name, np.asarray(samples, dtype=np.float64)) for name, samples in leads)
        cfg = lead_config or infer_lead_config([name for name, _ in lead_tuple])
        return cls(record_id, float(sampling_rate_hz), lead_tuple, cfg)

    @property
    def n_samples(self) -> int:
        return len(self.leads[0][1])

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate_hz

    @property
    def lead_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.leads)

    def lead(self, name: str) -> np.ndarray:
        for lead_name, samples in self.leads:
            if lead_name == name:
                return samples
        raise MissingLeadError(name)

    def has_lead(self, name: str) -> bool:
        return any(lead_name == name for lead_name, _ in self.leads)


def select_leads(record: EcgRecord, target: LeadConfig) -> EcgRecord:
    """Project a record onto ``target``'s leads.  Samples are never altered."""
    if record.lead_config is target:
        return record
    selected = []
    for name in target.lead_names:
        if not record.has_lead(name):
            raise MissingLeadError(name)
        selected.append((name, record.lead(name)))
    return EcgRecord(record.record_id, record.sampling_rate_hz, tuple(selected), target)


@dataclass(frozen=True)
class BeatFiducials:
    """PQRST landmarks of one beat, as sample indices.  ``None`` marks an absent landmark."""

    p_onset: Optional[int]
    p_peak: Optional[int]
    qrs_onset: Optional[int]
    r_peak: int
    qrs_offset: Optional[int]
    t_peak: Optional[int]
    t_offset: Optional[int]

    LANDMARK_ORDER = ("p_onset", "p_peak", "qrs_onset", "r_peak",
                      "qrs_offset", "t_peak", "t_offset")

    def present(self) -> list[tuple[str, int]]:
        out = []
        for name in self.LANDMARK_ORDER:
            value = getattr(self, name)
            if value is not None:
                out.append((name, int(value)))
        return out

    def validate(self):
        values = [v for _, v in self.present()]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise RecordError(f"beat landmarks not strictly increasing: {values}")


@dataclass(frozen=True)
class Fiducials:
    """Per-beat landmark sets, ordered by R peak."""

    beats: tuple[BeatFiducials, ...] = field(default_factory=tuple)

    def __post_init__(self):
        r_peaks = [b.r_peak for b in self.beats]
        if any(b <= a for a, b in zip(r_peaks, r_peaks[1:])):
            raise RecordError(f"beat r_peaks not strictly increasing: {r_peaks}")
        for beat in self.beats:
            beat.validate()

    def __len__(self) -> int:
        return len(self.beats)

    def r_peaks(self) -> list[int]:
        return [b.r_peak for b in self.beats]
