"""Dialogue action schema, turn model, grammar, and state machine.

Grammar rules (named in rejections):

* G1: a dialogue starts with an ECG inquiry.
* G2: user and agent turns alternate, except an agent tool turn is
  immediately followed by another agent turn (the response to the tool).
* G3: a tool action is followed by a response-family action: ``response``
  after valid tool output, ``response_fail`` after invalid output.
* G4: ``response_follow_up`` answers a follow-up request directly, with no
  intervening tool turn, and appears nowhere else.
* G5: ``user_bye`` is followed only by ``system_bye``, which is terminal.
* G6: ``response_fail`` is legal after an invalid tool output (where it is
  the only option) and as the give-up action in an agent slot that follows a
  user turn (retry exhaustion in the agent loop).
* G7: ``call_explanation`` is illegal in twelve-lead sessions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .errors import ParseError, TransitionRejected
from .records import LeadConfig
from .tools import ToolName, ToolOutput

SCHEMA_VERSION = 1


class Speaker(Enum):
    USER = "user"
    AGENT = "agent"


class UserAction(Enum):
    ECG_INQUIRY = "ecg_inquiry"
    REQUEST_FOLLOW_UP = "request_follow_up"
    USER_BYE = "user_bye"


class AgentAction(Enum):
    RESPONSE = "response"
    RESPONSE_FAIL = "response_fail"
    RESPONSE_FOLLOW_UP = "response_follow_up"
    SYSTEM_BYE = "system_bye"
    CALL_CLASSIFICATION = "call_classification"
    CALL_MEASUREMENT = "call_measurement"
    CALL_EXPLANATION = "call_explanation"


Action = Union[UserAction, AgentAction]

TOOL_ACTIONS = frozenset({AgentAction.CALL_CLASSIFICATION,
                          AgentAction.CALL_MEASUREMENT,
                          AgentAction.CALL_EXPLANATION})

ACTION_TOOL = {
    AgentAction.CALL_CLASSIFICATION: ToolName.CLASSIFICATION,
    AgentAction.CALL_MEASUREMENT: ToolName.MEASUREMENT,
    AgentAction.CALL_EXPLANATION: ToolName.EXPLANATION,
}


def parse_action(name: str) -> Action:
    for enum in (UserAction, AgentAction):
        try:
            return enum(name)
        except ValueError:
            continue
    raise ValueError(f"unknown action {name!r}")


@dataclass(frozen=True)
class DialogueTurn:
    speaker: Speaker
    action: Action
    content: Optional[str] = None
    thought: Optional[str] = None
    tool_output: Optional[ToolOutput] = None

    def __post_init__(self):
        if self.speaker is Speaker.USER:
            if not isinstance(self.action, UserAction):
                raise ValueError(f"user turn with agent action {self.action}")
            if not self.content:
                raise ValueError("user turn requires content")
            if self.thought is not None or self.tool_output is not None:
                raise ValueError("user turn carries only content")
        else:
            if not isinstance(self.action, AgentAction):
                raise ValueError(f"agent turn with user action {self.action}")
            if not self.thought:
                raise ValueError("agent turn requires a non-empty thought")
            if self.action in TOOL_ACTIONS:
                if self.tool_output is None or self.content is not None:
                    raise ValueError("tool turn carries a tool output, not content")
                if self.tool_output.tool is not ACTION_TOOL[self.action]:
                    raise ValueError(
                        f"{self.action.value} turn carries output from "
                        f"{self.tool_output.tool.value}")
            else:
                if self.content is None or self.tool_output is not None:
                    raise ValueError("non-tool agent turn carries content")

    @classmethod
    def user(cls, action: UserAction, content: str) -> "DialogueTurn":
        return cls(Speaker.USER, action, content=content)

    @classmethod
    def agent(cls, action: AgentAction, thought: str, content: Optional[str] = None,
              tool_output: Optional[ToolOutput] = None) -> "DialogueTurn":
        return cls(Speaker.AGENT, action, content=content, thought=thought,
                   tool_output=tool_output)

    def to_dict(self) -> dict:
        out: dict = {"speaker": self.speaker.value, "action": self.action.value}
        if self.content is not None:
            out["content"] = self.content
        if self.thought is not None:
            out["thought"] = self.thought
        if self.tool_output is not None:
            out["tool_output"] = self.tool_output.to_dict()
        return out


@dataclass(frozen=True)
class Scenario:
    topic: str
    cefr: str
    action_sequence_id: str

    def __post_init__(self):
        if self.cefr not in ("A", "B", "C"):
            raise ValueError(f"cefr must be A, B or C, got {self.cefr!r}")

    def to_dict(self) -> dict:
        return {"topic": self.topic, "cefr": self.cefr,
                "action_sequence_id": self.action_sequence_id}


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    scenario: Scenario
    lead_config: LeadConfig
    ecg_record_ref: str
    turns: tuple[DialogueTurn, ...]

    def agent_turns(self) -> list[DialogueTurn]:
        return [t for t in self.turns if t.speaker is Speaker.AGENT]

    def action_sequence(self) -> list[Action]:
        return [t.action for t in self.turns]

    def is_complete(self) -> bool:
        return bool(self.turns) and self.turns[-1].action is AgentAction.SYSTEM_BYE

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dialogue_id": self.dialogue_id,
            "scenario": self.scenario.to_dict(),
            "lead_config": self.lead_config.value,
            "ecg_record_ref": self.ecg_record_ref,
            "turns": [t.to_dict() for t in self.turns],
        }


# ---------------------------------------------------------------------------
# State machine


class Phase(Enum):
    START = "start"
    USER_TURN = "user_turn"
    AGENT_AFTER_INQUIRY = "agent_after_inquiry"
    AGENT_AFTER_FOLLOW_UP = "agent_after_follow_up"
    AGENT_AFTER_TOOL_VALID = "agent_after_tool_valid"
    AGENT_AFTER_TOOL_INVALID = "agent_after_tool_invalid"
    AGENT_AFTER_BYE = "agent_after_bye"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class DialogueState:
    phase: Phase = Phase.START
    lead_config: Optional[LeadConfig] = None
    turn_index: int = 0

    @property
    def is_terminal(self) -> bool:
        return self.phase is Phase.TERMINAL


def initial_state(lead_config: Optional[LeadConfig] = None) -> DialogueState:
    return DialogueState(Phase.START, lead_config, 0)


def _tool_actions_for(lead_config: Optional[LeadConfig]) -> set[AgentAction]:
    actions = set(TOOL_ACTIONS)
    if lead_config is LeadConfig.TWELVE_LEAD:
        actions.discard(AgentAction.CALL_EXPLANATION)
    return actions


def legal_next_actions(state: DialogueState) -> set[Action]:
    """Exactly the actions ``step`` would accept in this state."""
    phase = state.phase
    if phase is Phase.START:
        return {UserAction.ECG_INQUIRY}
    if phase is Phase.USER_TURN:
        return {UserAction.ECG_INQUIRY, UserAction.REQUEST_FOLLOW_UP,
                UserAction.USER_BYE}
    if phase is Phase.AGENT_AFTER_INQUIRY:
        return {AgentAction.RESPONSE, AgentAction.RESPONSE_FAIL} | \
            _tool_actions_for(state.lead_config)
    if phase is Phase.AGENT_AFTER_FOLLOW_UP:
        return {AgentAction.RESPONSE_FOLLOW_UP, AgentAction.RESPONSE_FAIL} | \
            _tool_actions_for(state.lead_config)
    if phase is Phase.AGENT_AFTER_TOOL_VALID:
        return {AgentAction.RESPONSE}
    if phase is Phase.AGENT_AFTER_TOOL_INVALID:
        return {AgentAction.RESPONSE_FAIL}
    if phase is Phase.AGENT_AFTER_BYE:
        return {AgentAction.SYSTEM_BYE}
    return set()


_USER_PHASE = {
    UserAction.ECG_INQUIRY: Phase.AGENT_AFTER_INQUIRY,
    UserAction.REQUEST_FOLLOW_UP: Phase.AGENT_AFTER_FOLLOW_UP,
    UserAction.USER_BYE: Phase.AGENT_AFTER_BYE,
}

_REJECTION_RULES = {
    Phase.START: "G1",
    Phase.USER_TURN: "G2",
    Phase.AGENT_AFTER_INQUIRY: "G6" ,
    Phase.AGENT_AFTER_FOLLOW_UP: "G4",
    Phase.AGENT_AFTER_TOOL_VALID: "G3",
    Phase.AGENT_AFTER_TOOL_INVALID: "G3",
    Phase.AGENT_AFTER_BYE: "G5",
}


def _rejection_rule(state: DialogueState, action: Action) -> str:
    if state.phase is Phase.TERMINAL:
        return "terminal"
    if action is AgentAction.CALL_EXPLANATION and \
            AgentAction.CALL_EXPLANATION not in _tool_actions_for(state.lead_config) and \
            state.phase in (Phase.AGENT_AFTER_INQUIRY, Phase.AGENT_AFTER_FOLLOW_UP):
        return "G7"
    user_slot = state.phase in (Phase.START, Phase.USER_TURN)
    if user_slot != isinstance(action, UserAction):
        return "G2"
    if action is AgentAction.RESPONSE_FAIL:
        return "G6"
    if action is AgentAction.RESPONSE_FOLLOW_UP:
        return "G4"
    if action is AgentAction.SYSTEM_BYE:
        return "G5"
    if state.phase is Phase.AGENT_AFTER_TOOL_INVALID:
        return "G3"
    return _REJECTION_RULES.get(state.phase, "G2")


def step(state: DialogueState, turn: DialogueTurn) -> DialogueState:
    """Apply one turn; raises TransitionRejected naming the violated rule."""
    if state.is_terminal:
        raise TransitionRejected("terminal", "dialogue already ended with system_bye")
    action = turn.action
    if action not in legal_next_actions(state):
        rule = _rejection_rule(state, action)
        raise TransitionRejected(
            rule, f"action {action.value!r} not legal in phase {state.phase.value!r} "
                  f"(turn {state.turn_index})")

    if turn.speaker is Speaker.USER:
        next_phase = _USER_PHASE[turn.action]
    elif action in TOOL_ACTIONS:
        assert turn.tool_output is not None
        next_phase = (Phase.AGENT_AFTER_TOOL_VALID if turn.tool_output.is_valid
                      else Phase.AGENT_AFTER_TOOL_INVALID)
    elif action is AgentAction.SYSTEM_BYE:
        next_phase = Phase.TERMINAL
    else:
        next_phase = Phase.USER_TURN
    return DialogueState(next_phase, state.lead_config, state.turn_index + 1)


def replay_dialogue(dialogue: Dialogue) -> DialogueState:
    """Run every turn through ``step``; raises on the first rejection."""
    state = initial_state(dialogue.lead_config)
    for turn in dialogue.turns:
        state = step(state, turn)
    return state


# ---------------------------------------------------------------------------
# Action-sequence grammar (tool validity unknown at this level)


@dataclass(frozen=True)
class Violation:
    position: int
    rule: str
    message: str


_SEQ_AGENT_RESPONSES = {AgentAction.RESPONSE, AgentAction.RESPONSE_FAIL}


def validate_action_sequence(sequence) -> list[Violation]:
    """Check a bare action list against the grammar; empty result means ok.

    After a tool action both ``response`` and ``response_fail`` are accepted,
    since tool validity is a runtime property.
    """
    actions = [parse_action(a) if isinstance(a, str) else a for a in sequence]
    violations: list[Violation] = []
    # phases: start, user, agent(after-inquiry), agent_fu, after_tool, done
    phase = "start"
    for pos, action in enumerate(actions):
        if phase == "done":
            violations.append(Violation(pos, "terminal",
                                        "actions after system_bye"))
            break
        if phase == "start":
            if action is not UserAction.ECG_INQUIRY:
                violations.append(Violation(
                    pos, "G1", "dialogue must start with ecg_inquiry"))
                break
            phase = "agent"
            continue
        if phase == "user":
            if not isinstance(action, UserAction):
                violations.append(Violation(
                    pos, "G2", f"expected a user action, got {action.value}"))
                break
            phase = {UserAction.ECG_INQUIRY: "agent",
                     UserAction.REQUEST_FOLLOW_UP: "agent_fu",
                     UserAction.USER_BYE: "bye"}[action]
            continue
        if phase == "bye":
            if action is not AgentAction.SYSTEM_BYE:
                violations.append(Violation(
                    pos, "G5", "user_bye must be followed by system_bye"))
                break
            phase = "done"
            continue
        if phase == "after_tool":
            if action not in _SEQ_AGENT_RESPONSES:
                violations.append(Violation(
                    pos, "G3",
                    "a tool action must be followed by response or response_fail"))
                break
            phase = "user"
            continue
        # agent slots following a user turn
        if not isinstance(action, AgentAction):
            violations.append(Violation(
                pos, "G2", f"expected an agent action, got {action.value}"))
            break
        if action is AgentAction.SYSTEM_BYE:
            violations.append(Violation(
                pos, "G5", "system_bye is only legal after user_bye"))
            break
        if action in TOOL_ACTIONS:
            phase = "after_tool"
        elif action is AgentAction.RESPONSE_FOLLOW_UP:
            if phase != "agent_fu":
                violations.append(Violation(
                    pos, "G4",
                    "response_follow_up must directly answer request_follow_up"))
                break
            phase = "user"
        elif action is AgentAction.RESPONSE:
            if phase == "agent_fu":
                violations.append(Violation(
                    pos, "G4",
                    "a follow-up request is answered by response_follow_up"))
                break
            phase = "user"
        else:  # RESPONSE_FAIL, recovery slot
            phase = "user"
    else:
        if phase != "done" and not violations:
            violations.append(Violation(
                len(actions), "G5", "sequence must end with system_bye"))
    return violations


# ---------------------------------------------------------------------------
# Bundled action sequences

_I, _F, _B = "ecg_inquiry", "request_follow_up", "user_bye"
_R, _RF, _RFU, _SB = "response", "response_fail", "response_follow_up", "system_bye"
_CC, _CM, _CE = "call_classification", "call_measurement", "call_explanation"

_RAW_SEQUENCES = {
    "seq-01": [_I, _CC, _R, _B, _SB],
    "seq-02": [_I, _CM, _R, _B, _SB],
    "seq-03": [_I, _CE, _R, _B, _SB],
    "seq-04": [_I, _R, _B, _SB],
    "seq-05": [_I, _CC, _R, _F, _RFU, _B, _SB],
    "seq-06": [_I, _CM, _R, _F, _RFU, _B, _SB],
    "seq-07": [_I, _R, _F, _RFU, _B, _SB],
    "seq-08": [_I, _CC, _R, _I, _CM, _R, _B, _SB],
    "seq-09": [_I, _CM, _R, _I, _CC, _R, _B, _SB],
    "seq-10": [_I, _CC, _R, _F, _CM, _R, _B, _SB],
    "seq-11": [_I, _CM, _RF, _B, _SB],
    "seq-12": [_I, _CC, _RF, _I, _R, _B, _SB],
    "seq-13": [_I, _R, _I, _R, _B, _SB],
    "seq-14": [_I, _CE, _R, _F, _RFU, _B, _SB],
    "seq-15": [_I, _CM, _R, _F, _CC, _R, _B, _SB],
    "seq-16": [_I, _CC, _R, _F, _RFU, _I, _CM, _R, _B, _SB],
    "seq-17": [_I, _R, _F, _CM, _R, _B, _SB],
    "seq-18": [_I, _CM, _R, _I, _R, _B, _SB],
    "seq-19": [_I, _CC, _R, _I, _CE, _R, _B, _SB],
    "seq-20": [_I, _CM, _R, _F, _RFU, _F, _RFU, _B, _SB],
}


@dataclass(frozen=True)
class ActionSequence:
    sequence_id: str
    actions: tuple[Action, ...]

    @property
    def requires_tool_failure(self) -> bool:
        return AgentAction.RESPONSE_FAIL in self.actions

    @property
    def uses_explanation(self) -> bool:
        return AgentAction.CALL_EXPLANATION in self.actions

    def agent_turn_count(self) -> int:
        return sum(isinstance(a, AgentAction) for a in self.actions)


ACTION_SEQUENCES: dict[str, ActionSequence] = {
    seq_id: ActionSequence(seq_id, tuple(parse_action(a) for a in raw))
    for seq_id, raw in _RAW_SEQUENCES.items()
}


def sequences_for(lead_config: LeadConfig) -> list[ActionSequence]:
    """Bundled sequences usable under this lead configuration."""
    return [s for s in ACTION_SEQUENCES.values()
            if not (s.uses_explanation and lead_config is LeadConfig.TWELVE_LEAD)]


# ---------------------------------------------------------------------------
# Serialization


def serialize_dialogue(dialogue: Dialogue, compact: bool = True) -> bytes:
    payload = dialogue.to_dict()
    if compact:
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    else:
        text = json.dumps(payload, sort_keys=True, indent=2)
    return text.encode("utf-8")


def _require(data: dict, key: str, kind, path: str):
    if key not in data:
        raise ParseError(f"missing key {key!r}", location=path)
    value = data[key]
    if not isinstance(value, kind):
        raise ParseError(f"{key!r} must be {kind.__name__}", location=f"{path}.{key}")
    return value


def parse_dialogue(data) -> Dialogue:
    """Parse and fully validate a dialogue (schema plus grammar replay)."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", location="$") from None
    if not isinstance(data, dict):
        raise ParseError("dialogue must be a JSON object", location="$")

    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {version}",
                         location="$.schema_version")
    dialogue_id = _require(data, "dialogue_id", str, "$")
    scenario_raw = _require(data, "scenario", dict, "$")
    try:
        scenario = Scenario(
            topic=_require(scenario_raw, "topic", str, "$.scenario"),
            cefr=_require(scenario_raw, "cefr", str, "$.scenario"),
            action_sequence_id=_require(scenario_raw, "action_sequence_id", str,
                                        "$.scenario"),
        )
    except ValueError as exc:
        raise ParseError(str(exc), location="$.scenario") from None
    try:
        lead_config = LeadConfig(_require(data, "lead_config", str, "$"))
    except ValueError as exc:
        raise ParseError(str(exc), location="$.lead_config") from None
    record_ref = _require(data, "ecg_record_ref", str, "$")
    turns_raw = _require(data, "turns", list, "$")

    turns = []
    for i, turn_raw in enumerate(turns_raw):
        path = f"$.turns[{i}]"
        if not isinstance(turn_raw, dict):
            raise ParseError("turn must be an object", location=path)
        try:
            speaker = Speaker(_require(turn_raw, "speaker", str, path))
            action = parse_action(_require(turn_raw, "action", str, path))
            tool_output = None
            if "tool_output" in turn_raw:
                tool_output = ToolOutput.from_dict(
                    _require(turn_raw, "tool_output", dict, path))
            turns.append(DialogueTurn(
                speaker=speaker, action=action,
                content=turn_raw.get("content"),
                thought=turn_raw.get("thought"),
                tool_output=tool_output))
        except (ValueError, KeyError) as exc:
            raise ParseError(str(exc), location=path) from None

    dialogue = Dialogue(dialogue_id, scenario, lead_config, record_ref, tuple(turns))
    state = initial_state(lead_config)
    for i, turn in enumerate(dialogue.turns):
        try:
            state = step(state, turn)
        except TransitionRejected as exc:
            raise ParseError(f"grammar violation: {exc}",
                             location=f"$.turns[{i}]") from exc
    return dialogue
