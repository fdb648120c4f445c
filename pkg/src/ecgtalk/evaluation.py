"""Evaluation harness: next-action prediction, faithfulness, judged response
quality, dialogue quality, interval localization, and report assembly.

Next-action prediction (NAP) is exact-match accuracy over the reference agent
turns.  In ``with_gt`` mode every prediction is conditioned on the reference
history; in ``without_gt`` mode the agent rolls the dialogue forward on its
own history (only the user turns come from the dataset), so early mistakes
can cascade.

Judges are pluggable: the rule-based reference judge is deterministic and
documents its rubric; the LLM judge adapter reuses any chat backend.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .compose import allowed_terms, cefr_vocabulary, display_names
from .dialogue import (TOOL_ACTIONS, AgentAction, Dialogue, DialogueTurn,
                       Speaker, UserAction, replay_dialogue)
from .errors import JudgeError
from .explain import tiou
from .tools import ToolName, ToolOutput

log = logging.getLogger(__name__)

NUMERIC_TOLERANCE_REL = 0.05
NUMERIC_TOLERANCE_ABS_MS = 5.0

JUDGE_RUBRIC = (
    "accuracy: 5 = every stated value/label matches the reference within "
    "tolerance; 4 = all stated values match, at most one reference item "
    "omitted; 3 = all stated values match, several omitted; 2 = stated "
    "values partly wrong; 1 = no overlap or contradiction. "
    "completeness: bucket of reference coverage (1.0 -> 5, >=0.75 -> 4, "
    ">=0.5 -> 3, >0 -> 2, 0 -> 1)."
)


# ---------------------------------------------------------------------------
# Claims: numbers and labels stated in a response


# a hyphen right after a digit is a range separator, not a minus sign
_NUMBER_RE = re.compile(
    r"(?<![\d.])(-?\d+(?:\.\d+)?)(?:\s*(ms|milliseconds|s\b|seconds|bpm|"
    r"beats per minute|times per minute|times each minute|%))?", re.IGNORECASE)


@dataclass(frozen=True)
class NumericClaim:
    value: float
    unit: Optional[str]

    def tolerance_for(self, reference: float) -> float:
        rel = NUMERIC_TOLERANCE_REL * abs(reference)
        if self.unit in ("ms", "milliseconds"):
            return max(rel, NUMERIC_TOLERANCE_ABS_MS)
        if self.unit in ("s", "seconds"):
            return max(rel, NUMERIC_TOLERANCE_ABS_MS / 1000.0)
        return max(rel, 0.05)


def extract_numeric_claims(text: str) -> list[NumericClaim]:
    claims = []
    for match in _NUMBER_RE.finditer(text):
        unit = match.group(2)
        claims.append(NumericClaim(float(match.group(1)),
                                   unit.lower() if unit else None))
    return claims


def extract_label_claims(text: str) -> list[str]:
    """Diagnostic classes referenced in ``text``, as codes."""
    lowered = text.lower()
    found = []
    for code, name in display_names().items():
        if name.lower() in lowered or re.search(rf"\b{re.escape(code)}\b", text):
            found.append(code)
    return found


def _numeric_pool(node) -> list[float]:
    values: list[float] = []
    if isinstance(node, bool):
        return values
    if isinstance(node, (int, float)):
        return [float(node)]
    if isinstance(node, dict):
        for v in node.values():
            values.extend(_numeric_pool(v))
    elif isinstance(node, (list, tuple)):
        for v in node:
            values.extend(_numeric_pool(v))
    return values


def _claim_matches_pool(claim: NumericClaim, pool: Sequence[float]) -> bool:
    return any(abs(claim.value - ref) <= claim.tolerance_for(ref) for ref in pool)


# ---------------------------------------------------------------------------
# Judges


@dataclass(frozen=True)
class JudgeVerdict:
    accuracy: int
    completeness: int
    rationale: str

    def __post_init__(self):
        for name in ("accuracy", "completeness"):
            value = getattr(self, name)
            if not 1 <= value <= 5:
                raise JudgeError(f"{name} {value} outside the 1-5 scale")


class Judge(Protocol):
    name: str

    def faithfulness(self, tool_output: ToolOutput, response: str) -> int: ...

    def judge_response(self, response: str, ground_truth: dict) -> JudgeVerdict: ...

    def dialogue_quality(self, dialogue: Dialogue) -> tuple[float, float]: ...


class RuleJudge:
    """Deterministic reference judge.

    Faithfulness: 1 iff every number in the response matches some numeric
    field of the tool output within tolerance and every diagnostic label
    stated appears in the tool's prediction.
    """

    name = "rule"

    def faithfulness(self, tool_output: ToolOutput, response: str) -> int:
        body = tool_output.body or {}
        pool = _numeric_pool(body)
        for claim in extract_numeric_claims(response):
            if not _claim_matches_pool(claim, pool):
                return 0
        valid_labels = set()
        if tool_output.tool is ToolName.CLASSIFICATION:
            valid_labels = set(body.get("predicted", []))
        elif tool_output.tool is ToolName.EXPLANATION:
            valid_labels = {body.get("class")}
        for code in extract_label_claims(response):
            if code not in valid_labels:
                return 0
        return 1

    def judge_response(self, response: str, ground_truth: dict) -> JudgeVerdict:
        numeric_refs: dict = ground_truth.get("numeric", {}) or {}
        label_refs: list = ground_truth.get("labels", []) or []
        if not numeric_refs and not label_refs:
            return self._text_overlap_verdict(response, ground_truth.get("text", ""))

        claims = extract_numeric_claims(response)
        matched_refs = 0
        for ref in numeric_refs.values():
            if any(abs(c.value - ref) <= c.tolerance_for(ref) for c in claims):
                matched_refs += 1
        wrong_numbers = sum(
            1 for c in claims
            if not _claim_matches_pool(c, list(numeric_refs.values())))

        stated_labels = extract_label_claims(response)
        matched_labels = sum(1 for c in label_refs if c in stated_labels)
        wrong_labels = sum(1 for c in stated_labels if c not in label_refs)

        matched = matched_refs + matched_labels
        wrong = wrong_numbers + wrong_labels
        omitted = (len(numeric_refs) - matched_refs) + (len(label_refs) - matched_labels)

        if matched == 0:
            accuracy = 1
        elif wrong > 0:
            accuracy = 2
        elif omitted == 0:
            accuracy = 5
        elif omitted == 1:
            accuracy = 4
        else:
            accuracy = 3

        total = len(numeric_refs) + len(label_refs)
        coverage = matched / total if total else 1.0
        if coverage >= 1.0:
            completeness = 5
        elif coverage >= 0.75:
            completeness = 4
        elif coverage >= 0.5:
            completeness = 3
        elif coverage > 0:
            completeness = 2
        else:
            completeness = 1
        return JudgeVerdict(accuracy, completeness,
                            f"matched={matched} wrong={wrong} omitted={omitted}")

    @staticmethod
    def _text_overlap_verdict(response: str, reference: str) -> JudgeVerdict:
        resp = set(re.findall(r"[a-z']+", response.lower()))
        ref = set(re.findall(r"[a-z']+", reference.lower()))
        if not ref:
            return JudgeVerdict(3, 3, "no reference text; neutral verdict")
        jaccard = len(resp & ref) / len(resp | ref) if resp | ref else 0.0
        recall = len(resp & ref) / len(ref)

        def bucket(x):
            if x >= 0.9:
                return 5
            if x >= 0.6:
                return 4
            if x >= 0.3:
                return 3
            if x > 0.1:
                return 2
            return 1

        return JudgeVerdict(bucket(jaccard), bucket(recall),
                            f"jaccard={jaccard:.2f} recall={recall:.2f}")

    # -- dialogue quality (degenerate reference checks) ---------------------

    def dialogue_quality(self, dialogue: Dialogue) -> tuple[float, float]:
        naturalness = 5.0
        try:
            replay_dialogue(dialogue)
        except Exception:
            naturalness = 2.0
        user_contents = [t.content for t in dialogue.turns
                         if t.speaker is Speaker.USER]
        if len(user_contents) != len(set(user_contents)):
            naturalness = min(naturalness, 4.0)
        for turn in dialogue.turns:
            if turn.content is not None and len(turn.content.strip()) < 5:
                naturalness -= 1.0
        naturalness = max(1.0, naturalness)
        return naturalness, self._cefr_adherence(dialogue)

    @staticmethod
    def _cefr_adherence(dialogue: Dialogue) -> float:
        """Vocabulary containment: agent wording must not exceed the user tier.

        Diagnostic display names are exempt; they are quoted tool output, not
        the speaker's own register.
        """
        allowed = allowed_terms(dialogue.scenario.cefr)
        vocab = cefr_vocabulary()
        all_terms = sorted({t.lower() for terms in vocab.values() for t in terms},
                           key=len, reverse=True)
        exempt = [name.lower() for name in display_names().values()]

        found = violations = 0
        for turn in dialogue.turns:
            if turn.speaker is not Speaker.AGENT or turn.content is None:
                continue
            text = turn.content.lower()
            for name in exempt:
                text = text.replace(name, " ")
            for term in all_terms:
                pattern = r"\b" + re.escape(term) + r"\b"
                hits = len(re.findall(pattern, text))
                if hits:
                    found += hits
                    if term not in allowed:
                        violations += hits
                    text = re.sub(pattern, " ", text)
        if found == 0 or violations == 0:
            return 5.0
        fraction = violations / found
        if fraction <= 0.1:
            return 4.0
        if fraction <= 0.25:
            return 3.0
        if fraction <= 0.5:
            return 2.0
        return 1.0


class LlmJudge:
    """Judge adapter over a chat backend; criteria embedded in the prompt."""

    name = "llm"

    def __init__(self, backend):
        from .agent import BackendRequest

        self._backend = backend
        self._request_cls = BackendRequest

    def _ask(self, instruction: str, payload: dict) -> str:
        request = self._request_cls(
            system_prompt=("You are a strict evaluator of an ECG assistant. "
                           + JUDGE_RUBRIC),
            scenario_header="Evaluation request",
            history="",
            reasoning="",
            user_utterance=instruction + "\n" + json.dumps(payload, sort_keys=True))
        return self._backend.complete(request)

    def faithfulness(self, tool_output: ToolOutput, response: str) -> int:
        raw = self._ask(
            "Is the response fully grounded in the tool output? "
            "Answer with a single digit: 1 (perfect alignment) or 0 (any mismatch).",
            {"tool_output": tool_output.to_dict(), "response": response})
        match = re.search(r"[01]", raw)
        if not match:
            raise JudgeError(f"faithfulness judge returned no verdict: {raw!r}")
        return int(match.group(0))

    def judge_response(self, response: str, ground_truth: dict) -> JudgeVerdict:
        raw = self._ask(
            "Score the response against the reference. Reply as JSON "
            '{"accuracy": 1-5, "completeness": 1-5, "rationale": "..."}.',
            {"response": response, "reference": ground_truth})
        try:
            payload = json.loads(re.search(r"\{.*\}", raw, re.DOTALL).group(0))
            return JudgeVerdict(int(payload["accuracy"]),
                                int(payload["completeness"]),
                                str(payload.get("rationale", "")))
        except (AttributeError, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise JudgeError(f"judge returned out-of-schema verdict: {raw!r}") from exc

    def dialogue_quality(self, dialogue: Dialogue) -> tuple[float, float]:
        raw = self._ask(
            "Score this dialogue 1-5 for naturalness (human-like flow) and "
            "cefr_adherence (matching the user's language tier). Reply as JSON "
            '{"naturalness": n, "cefr_adherence": n}.',
            dialogue.to_dict())
        try:
            payload = json.loads(re.search(r"\{.*\}", raw, re.DOTALL).group(0))
            return float(payload["naturalness"]), float(payload["cefr_adherence"])
        except (AttributeError, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise JudgeError(f"judge returned out-of-schema verdict: {raw!r}") from exc


# ---------------------------------------------------------------------------
# Agents under evaluation


class EvalAgent(Protocol):
    """An agent that can be driven turn-by-turn over a reference dialogue."""

    name: str

    def begin(self, dialogue: Dialogue) -> None: ...

    def predict_action(self, history: Sequence[DialogueTurn],
                       user_turn: DialogueTurn) -> AgentAction: ...

    def respond_segment(self, user_turn: DialogueTurn) -> list[DialogueTurn]: ...


class GroundTruthReplayAgent:
    """Always reproduces the reference turns; the harness identity fixture."""

    name = "ground-truth-replay"

    def __init__(self):
        self._dialogue: Optional[Dialogue] = None
        self._cursor = 0

    def begin(self, dialogue: Dialogue) -> None:
        self._dialogue = dialogue
        self._cursor = 0

    def predict_action(self, history, user_turn) -> AgentAction:
        return self._dialogue.turns[len(history) + 1].action

    def respond_segment(self, user_turn) -> list[DialogueTurn]:
        turns = self._dialogue.turns
        while self._cursor < len(turns):
            if (turns[self._cursor].speaker is Speaker.USER
                    and turns[self._cursor].action is user_turn.action
                    and turns[self._cursor].content == user_turn.content):
                self._cursor += 1
                break
            self._cursor += 1
        segment = []
        while self._cursor < len(turns) and turns[self._cursor].speaker is Speaker.AGENT:
            segment.append(turns[self._cursor])
            self._cursor += 1
        return segment


class ScriptedEvalAgent:
    """Plays back pre-planned segments; for cascade fixtures in tests."""

    name = "scripted"

    def __init__(self, segments: Sequence[Sequence[DialogueTurn]]):
        self._segments = [list(s) for s in segments]
        self._slot = 0
        self._segment_cursor = 0

    def begin(self, dialogue: Dialogue) -> None:
        self._slot = 0
        self._segment_cursor = 0

    def predict_action(self, history, user_turn) -> AgentAction:
        flat = [t for segment in self._segments for t in segment]
        turn = flat[min(self._slot, len(flat) - 1)]
        self._slot += 1
        return turn.action

    def respond_segment(self, user_turn) -> list[DialogueTurn]:
        segment = self._segments[min(self._segment_cursor, len(self._segments) - 1)]
        self._segment_cursor += 1
        return segment


class OrchestratorEvalAgent:
    """Wraps a live agent session (backend + record) for evaluation."""

    name = "orchestrator"

    def __init__(self, backend_factory, record_resolver, **session_kwargs):
        from .agent import AgentSession

        self._session_cls = AgentSession
        self._backend_factory = backend_factory
        self._record_resolver = record_resolver
        self._session_kwargs = session_kwargs
        self._session = None

    def begin(self, dialogue: Dialogue) -> None:
        record = self._record_resolver(dialogue.ecg_record_ref)
        self._session = self._session_cls(
            record, self._backend_factory(), scenario=dialogue.scenario,
            session_id=f"eval-{dialogue.dialogue_id}", **self._session_kwargs)

    def predict_action(self, history, user_turn) -> AgentAction:
        from .agent import parse_agent_output

        request = self._session.build_request(list(history), user_turn)
        raw = self._session.backend.complete(request)
        return parse_agent_output(raw).action

    def respond_segment(self, user_turn) -> list[DialogueTurn]:
        return self._session.run_turn(user_turn)


# ---------------------------------------------------------------------------
# Metrics


def _segments(dialogue: Dialogue) -> list[tuple[DialogueTurn, list[DialogueTurn], int]]:
    """(user turn, agent turns that follow it, index of the user turn)."""
    out = []
    i = 0
    turns = dialogue.turns
    while i < len(turns):
        if turns[i].speaker is Speaker.USER:
            j = i + 1
            segment = []
            while j < len(turns) and turns[j].speaker is Speaker.AGENT:
                segment.append(turns[j])
                j += 1
            out.append((turns[i], segment, i))
            i = j
        else:  # leading agent turns cannot occur in valid dialogues
            i += 1
    return out


def nap(dialogues: Sequence[Dialogue], agent: EvalAgent, mode: str) -> float:
    """Exact-match next-action accuracy, as a percentage."""
    if mode not in ("with_gt", "without_gt"):
        raise ValueError(f"mode must be 'with_gt' or 'without_gt', got {mode!r}")
    total = matches = 0
    for dialogue in dialogues:
        agent.begin(dialogue)
        for user_turn, segment, user_index in _segments(dialogue):
            if mode == "with_gt":
                for offset, reference in enumerate(segment):
                    total += 1
                    # history excludes the current utterance (passed separately)
                    history = (list(dialogue.turns[:user_index])
                               + list(dialogue.turns[user_index + 1:
                                                     user_index + 1 + offset]))
                    try:
                        predicted = agent.predict_action(history, user_turn)
                    except Exception as exc:
                        log.warning("agent failed at %s turn %d: %s",
                                    dialogue.dialogue_id, user_index + 1 + offset, exc)
                        continue
                    if predicted is reference.action:
                        matches += 1
            else:
                try:
                    produced = agent.respond_segment(user_turn)
                except Exception as exc:
                    log.warning("agent failed at %s segment %d: %s",
                                dialogue.dialogue_id, user_index, exc)
                    produced = []
                for offset, reference in enumerate(segment):
                    total += 1
                    if offset < len(produced) and \
                            produced[offset].action is reference.action:
                        matches += 1
    if total == 0:
        raise ValueError("no agent turns to evaluate")
    return 100.0 * matches / total


def tool_response_pairs(dialogue: Dialogue) -> list[tuple[ToolOutput, DialogueTurn]]:
    pairs = []
    for a, b in zip(dialogue.turns, dialogue.turns[1:]):
        if a.speaker is Speaker.AGENT and a.action in TOOL_ACTIONS \
                and b.speaker is Speaker.AGENT and b.content is not None:
            pairs.append((a.tool_output, b))
    return pairs


def faithfulness(dialogues: Sequence[Dialogue], judge: Judge) -> float:
    """Mean binary alignment of responses with their tool outputs, in percent."""
    if judge is None:
        raise JudgeError("faithfulness requires a judge; none attached")
    verdicts = []
    for dialogue in dialogues:
        for tool_output, response_turn in tool_response_pairs(dialogue):
            verdicts.append(judge.faithfulness(tool_output, response_turn.content))
    if not verdicts:
        raise ValueError("no tool-followed responses found")
    return 100.0 * float(np.mean(verdicts))


def judge_response(response: str, ground_truth: dict, judge: Judge) -> JudgeVerdict:
    if judge is None:
        raise JudgeError("judge_response requires a judge; none attached")
    return judge.judge_response(response, ground_truth)


def dialogue_quality(dialogues: Sequence[Dialogue], judge: Judge) -> tuple[float, float]:
    if judge is None:
        raise JudgeError("dialogue_quality requires a judge; none attached")
    if not dialogues:
        raise ValueError("empty transcript set")
    scores = [judge.dialogue_quality(d) for d in dialogues]
    naturalness = float(np.mean([s[0] for s in scores]))
    adherence = float(np.mean([s[1] for s in scores]))
    return naturalness, adherence


def reference_for_turn(tool_output: ToolOutput) -> dict:
    """Ground-truth claims for a post-tool response, from the tool output."""
    body = tool_output.body or {}
    if tool_output.tool is ToolName.MEASUREMENT:
        numeric = {k: body[k] for k in ("heart_rate_bpm", "pr_interval_ms",
                                        "qrs_duration_ms", "qt_interval_ms",
                                        "qtc_interval_ms")
                   if body.get(k) is not None}
        return {"numeric": numeric, "labels": []}
    if tool_output.tool is ToolName.CLASSIFICATION:
        return {"numeric": {}, "labels": list(body.get("predicted", []))}
    numeric = {}
    for idx, interval in enumerate(body.get("intervals", [])):
        numeric[f"interval_{idx}_start_s"] = interval["start_s"]
        numeric[f"interval_{idx}_end_s"] = interval["end_s"]
    return {"numeric": numeric, "labels": [body.get("class")]}


@dataclass
class ResponseQuality:
    accuracy_by_kind: dict = field(default_factory=dict)
    completeness_by_kind: dict = field(default_factory=dict)

    def mean_over(self, kinds: Sequence[str], table: dict) -> Optional[float]:
        values = [v for kind in kinds for v in table.get(kind, [])]
        return float(np.mean(values)) if values else None


def response_quality(dialogues: Sequence[Dialogue], judge: Judge) -> ResponseQuality:
    """Judge accuracy/completeness of post-tool and direct responses."""
    quality = ResponseQuality()
    for dialogue in dialogues:
        turns = dialogue.turns
        for i, turn in enumerate(turns):
            if turn.speaker is not Speaker.AGENT or turn.action is not AgentAction.RESPONSE:
                continue
            prev = turns[i - 1] if i else None
            if prev is not None and prev.speaker is Speaker.AGENT \
                    and prev.action in TOOL_ACTIONS and prev.tool_output.is_valid:
                kind = {ToolName.CLASSIFICATION: "post_classification",
                        ToolName.MEASUREMENT: "post_measurement",
                        ToolName.EXPLANATION: "post_explanation"}[prev.tool_output.tool]
                reference = reference_for_turn(prev.tool_output)
            else:
                kind = "direct"
                reference = {"numeric": {}, "labels": [], "text": turn.content}
            verdict = judge.judge_response(turn.content, reference)
            quality.accuracy_by_kind.setdefault(kind, []).append(verdict.accuracy)
            quality.completeness_by_kind.setdefault(kind, []).append(verdict.completeness)
    return quality


def explanation_tiou(dialogues: Sequence[Dialogue],
                     record_meta: dict[str, dict]) -> dict[str, float]:
    """Mean TIoU of explanation tool outputs against injected ground truth."""
    per_class: dict[str, list[float]] = {}
    for dialogue in dialogues:
        meta = record_meta.get(dialogue.ecg_record_ref)
        if not meta or "gt_interval_s" not in meta:
            continue
        for turn in dialogue.turns:
            if turn.tool_output is None or turn.tool_output.tool is not ToolName.EXPLANATION:
                continue
            if not turn.tool_output.is_valid:
                continue
            body = turn.tool_output.body
            if body.get("class") != meta.get("explained_class"):
                continue
            intervals = body.get("intervals", [])
            if not intervals:
                continue
            top = max(intervals, key=lambda iv: (iv.get("saliency") or 0.0))
            score = tiou([(top["start_s"], top["end_s"])], [tuple(meta["gt_interval_s"])])
            per_class.setdefault(body["class"], []).append(score)
    return {code: float(np.mean(vals)) for code, vals in sorted(per_class.items())}


# ---------------------------------------------------------------------------
# Report


REPORT_SCHEMA_VERSION = 1

_METRIC_KEYS = ("accuracy", "completeness", "nap_with_gt", "nap_without_gt",
                "faithfulness_pct", "tiou_per_class", "naturalness_mean",
                "cefr_adherence_mean")


def build_report(lead_config_value: str, metrics: dict, metadata: dict,
                 notes: Optional[dict] = None) -> dict:
    """Assemble the versioned report; absent metrics stay as explicit nulls."""
    notes = dict(notes or {})
    section: dict = {}
    for key in _METRIC_KEYS:
        if key in metrics and metrics[key] is not None:
            section[key] = metrics[key]
        else:
            section[key] = None
            notes.setdefault(key, "metric not computed in this run")
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "metadata": {
            "model_id": metadata.get("model_id", "unknown"),
            "dataset_sha256": metadata.get("dataset_sha256"),
            "seed": metadata.get("seed"),
            "judge": metadata.get("judge"),
            "numeric_tolerance": {
                "relative": NUMERIC_TOLERANCE_REL,
                "absolute_ms": NUMERIC_TOLERANCE_ABS_MS,
            },
        },
        "per_lead_config": {lead_config_value: section},
        "notes": notes,
    }
    if report["metadata"]["dataset_sha256"] is None:
        raise ValueError("report metadata requires the dataset hash")
    return report


def render_report_table(report: dict) -> str:
    """Human-readable table; percentages and scores with two decimals."""
    lines = [f"model: {report['metadata']['model_id']}   "
             f"judge: {report['metadata']['judge']}"]
    for lead, section in report["per_lead_config"].items():
        lines.append(f"[{lead}]")
        for key in _METRIC_KEYS:
            value = section.get(key)
            if value is None:
                rendered = "null"
            elif isinstance(value, dict):
                rendered = "  ".join(
                    f"{k}={'null' if v is None else format(v, '.2f')}"
                    for k, v in value.items()) or "null"
            else:
                rendered = f"{value:.2f}"
            lines.append(f"  {key:20s} {rendered}")
    return "\n".join(lines)


def run_evaluation(dataset_dir, agent: EvalAgent, judge: Judge,
                   mode: str = "with_gt", split: str = "test",
                   model_id: Optional[str] = None,
                   seed: Optional[int] = None) -> dict:
    """End-to-end evaluation of one corpus directory; returns the report."""
    from .corpus import load_corpus

    dataset_dir = Path(dataset_dir)
    split_path = dataset_dir / f"{split}.jsonl"
    if not split_path.exists():
        split_path = dataset_dir / "dialogues.jsonl"
    dialogues = load_corpus(split_path)
    if not dialogues:
        raise ValueError(f"no dialogues found in {split_path}")
    dataset_hash = hashlib.sha256(split_path.read_bytes()).hexdigest()

    record_meta: dict[str, dict] = {}
    meta_path = dataset_dir / "records_meta.jsonl"
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            if line.strip():
                entry = json.loads(line)
                record_meta[entry["record_id"]] = entry

    lead_values = {d.lead_config.value for d in dialogues}
    lead_value = lead_values.pop() if len(lead_values) == 1 else "mixed"

    notes: dict[str, str] = {}
    metrics: dict = {}
    metrics["nap_with_gt"] = nap(dialogues, agent, "with_gt")
    metrics["nap_without_gt"] = nap(dialogues, agent, "without_gt")
    if mode == "with_gt":
        notes["nap_mode"] = "primary mode with_gt; without_gt also computed"
    try:
        metrics["faithfulness_pct"] = faithfulness(dialogues, judge)
    except ValueError as exc:
        notes["faithfulness_pct"] = str(exc)

    quality = response_quality(dialogues, judge)
    post_kinds = ("post_classification", "post_measurement")
    metrics["accuracy"] = {
        "post_tool_mean": quality.mean_over(post_kinds, quality.accuracy_by_kind),
        "post_classification": quality.mean_over(("post_classification",),
                                                 quality.accuracy_by_kind),
        "post_measurement": quality.mean_over(("post_measurement",),
                                              quality.accuracy_by_kind),
        "direct": quality.mean_over(("direct",), quality.accuracy_by_kind),
    }
    metrics["completeness"] = {
        "post_tool_mean": quality.mean_over(post_kinds, quality.completeness_by_kind),
        "post_classification": quality.mean_over(("post_classification",),
                                                 quality.completeness_by_kind),
        "post_measurement": quality.mean_over(("post_measurement",),
                                              quality.completeness_by_kind),
        "direct": quality.mean_over(("direct",), quality.completeness_by_kind),
    }

    naturalness, adherence = dialogue_quality(dialogues, judge)
    metrics["naturalness_mean"] = naturalness
    metrics["cefr_adherence_mean"] = adherence

    tiou_scores = explanation_tiou(dialogues, record_meta)
    if tiou_scores:
        metrics["tiou_per_class"] = tiou_scores
    else:
        notes["tiou_per_class"] = "no explanation turns with ground-truth intervals"

    return build_report(lead_value, metrics, {
        "model_id": model_id or agent.name,
        "dataset_sha256": dataset_hash,
        "seed": seed,
        "judge": judge.name,
    }, notes)
