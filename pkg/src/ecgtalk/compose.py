"""Rule-based response composer: verbalizes tool outputs deterministically.

Every number or label in a composed response comes straight from the tool
output, so transcripts built with this composer are faithful by construction.
The ``cefr`` tier switches between plain ("A") and more technical phrasing.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Optional

from .tools import ToolName, ToolOutput


@lru_cache(maxsize=1)
def display_names() -> dict[str, str]:
    from .classify import _default_classes

    return {c.code: c.display_name for c in _default_classes()}


@lru_cache(maxsize=1)
def cefr_vocabulary() -> dict[str, list[str]]:
    text = resources.files("ecgtalk.data").joinpath("cefr_vocab.json").read_text()
    payload = json.loads(text)
    return {tier: payload[tier] for tier in ("A", "B", "C")}


def allowed_terms(cefr: str) -> set[str]:
    """Cumulative vocabulary for a tier (C speakers also know A and B words)."""
    vocab = cefr_vocabulary()
    tiers = {"A": ("A",), "B": ("A", "B"), "C": ("A", "B", "C")}[cefr]
    return {term.lower() for tier in tiers for term in vocab[tier]}


def _fmt(value: Optional[float], decimals: int = 1) -> Optional[str]:
    if value is None:
        return None
    return f"{value:.{decimals}f}"


# interval labels per tier: plain abbreviations for A/B, clinical phrases for C
_INTERVAL_LABELS = {
    "A": (("pr_interval_ms", "PR"), ("qrs_duration_ms", "QRS"),
          ("qt_interval_ms", "QT")),
    "B": (("pr_interval_ms", "PR"), ("qrs_duration_ms", "QRS"),
          ("qt_interval_ms", "QT"), ("qtc_interval_ms", "corrected QT")),
    "C": (("pr_interval_ms", "PR interval"), ("qrs_duration_ms", "QRS complex"),
          ("qt_interval_ms", "QT interval"), ("qtc_interval_ms", "QTc")),
}


def compose_measurement(body: dict, cefr: str = "B") -> str:
    parts = []
    hr = _fmt(body.get("heart_rate_bpm"))
    if hr is not None:
        if cefr == "A":
            parts.append(f"Your heart beats about {hr} times each minute.")
        else:
            parts.append(f"Your heart rate is {hr} beats per minute.")
    pieces = []
    for key, label in _INTERVAL_LABELS[cefr]:
        value = _fmt(body.get(key))
        if value is not None:
            pieces.append(f"{label} {value} ms")
    if pieces:
        if cefr == "A":
            parts.append("Timing numbers from this test: " + ", ".join(pieces) + ".")
        else:
            parts.append("Measured intervals: " + ", ".join(pieces) + ".")
    if not parts:
        parts.append("The check finished but produced no usable values.")
    return " ".join(parts)


def compose_classification(body: dict, cefr: str = "B") -> str:
    names = display_names()
    predicted = body.get("predicted", [])
    if not predicted:
        if cefr == "A":
            return "I looked at this test and did not find a pattern I can name."
        return ("I looked at the recording and did not find a pattern "
                "I can name with confidence.")
    labels = [names.get(code, code) for code in predicted]
    listing = ", ".join(labels)
    if cefr == "A":
        return f"The test shows: {listing}."
    if cefr == "B":
        return f"The recording shows: {listing}."
    return f"The classifier identifies: {listing}."


def compose_explanation(body: dict, cefr: str = "B") -> str:
    intervals = body.get("intervals", [])
    names = display_names()
    label = names.get(body.get("class", ""), body.get("class", "this finding"))
    if not intervals:
        if cefr == "A":
            return f"I could not point at one part of this test for {label}."
        return f"I could not isolate a specific part of the recording for {label}."
    spans = ", ".join(
        f"{iv['start_s']:.2f} to {iv['end_s']:.2f} s" for iv in intervals)
    if cefr == "A":
        return f"The sign of {label} is clearest at these times: {spans}."
    if cefr == "B":
        return f"The evidence for {label} shows up between {spans} in the recording."
    return f"The evidence for {label} concentrates in these intervals: {spans}."


_TOOL_LABEL = {
    ToolName.MEASUREMENT: "measurement",
    ToolName.CLASSIFICATION: "classification",
    ToolName.EXPLANATION: "explanation",
}


# plain-language failure reasons for the basic tier
_PLAIN_REASONS = {
    "too_few_beats": "not enough heart beats",
    "noisy_signal": "the signal was too messy",
    "measurement_failed": "the numbers could not be read",
    "class_not_active": "nothing to point at",
    "unsupported_lead_config": "this needs a single-channel test",
}


def compose_fail(tool_output: ToolOutput, cefr: str = "B") -> str:
    label = _TOOL_LABEL[tool_output.tool]
    reason = (tool_output.reason or "no usable output").replace("_", " ")
    if cefr == "A":
        plain = _PLAIN_REASONS.get(tool_output.reason or "", "no usable result")
        return (f"Sorry, that check did not work ({plain}). "
                "Please make a new test and ask me once more.")
    return (f"I could not obtain a valid {label} result ({reason}), "
            "so I cannot answer this reliably. A fresh recording may help.")


def compose_response(tool_output: ToolOutput, cefr: str = "B") -> str:
    """Verbalize a valid tool output; falls back to the failure text otherwise."""
    if not tool_output.is_valid:
        return compose_fail(tool_output, cefr)
    body = tool_output.body or {}
    if tool_output.tool is ToolName.MEASUREMENT:
        return compose_measurement(body, cefr)
    if tool_output.tool is ToolName.CLASSIFICATION:
        return compose_classification(body, cefr)
    return compose_explanation(body, cefr)


def compose_follow_up(last_tool_output: Optional[ToolOutput], cefr: str = "B") -> str:
    if last_tool_output is not None and last_tool_output.is_valid:
        return ("To add to what I said: " +
                compose_response(last_tool_output, cefr) +
                " Nothing in this replaces advice from your doctor.")
    if cefr == "A":
        return ("Here is a bit more: these checks only describe this one test. "
                "Your doctor can tell you what to do next.")
    return ("To elaborate: these readings describe this single recording only; "
            "interpretation and next steps belong with your clinician.")


def compose_system_bye(cefr: str = "B") -> str:
    if cefr == "A":
        return "Goodbye! Take care of your heart."
    return "Goodbye, and take care. Reach out any time you record a new ECG."
