"""Agent loop: backends, output parsing, tool dispatch, and the session runner.

A backend receives the serialized conversation so far, split into the
dialogue history, the accumulated reasoning trace, and the current user
utterance, and returns raw text in the line-tagged format::

    Action: measurement
    Thought: the user asks for their heart rate
    ToolInput: {}

or, for non-tool actions::

    Action: response
    Thought: ...
    Response: ...

The session runner enforces the dialogue grammar: unparseable or illegal
backend output is retried up to the configured budget (retries carry a note
naming the legal actions), after which the agent gives up with a
``response_fail`` turn.  After a tool turn whose output is invalid, the next
turn is always ``response_fail``.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import time
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Protocol, Sequence

from .classify import Classifier, DiagnosticClass, class_registry
from .compose import compose_fail, compose_follow_up, compose_response, compose_system_bye
from .dialogue import (ACTION_TOOL, TOOL_ACTIONS, AgentAction, Dialogue,
                       DialogueState, DialogueTurn, Scenario, Speaker,
                       initial_state, legal_next_actions, step)
from .errors import AgentOutputError, BackendError, ScriptExhaustedError
from .explain import ExplainerConfig, explanation_tool_call
from .measure import measurement_tool_call
from .classify import classification_tool_call
from .records import EcgRecord
from .tools import ToolCall, ToolName, ToolOutput

ENV_BACKEND_URL = "ECGTALK_BACKEND_URL"
ENV_BACKEND_KEY = "ECGTALK_BACKEND_KEY"
ENV_BACKEND_MODEL = "ECGTALK_BACKEND_MODEL"

DEFAULT_TOKEN_BUDGET = 4096
CHARS_PER_TOKEN = 4

_TOOL_ALIASES = {
    "measurement": AgentAction.CALL_MEASUREMENT,
    "classification": AgentAction.CALL_CLASSIFICATION,
    "explanation": AgentAction.CALL_EXPLANATION,
}

_TOOL_ARG_KEYS = {
    AgentAction.CALL_MEASUREMENT: set(),
    AgentAction.CALL_CLASSIFICATION: set(),
    AgentAction.CALL_EXPLANATION: {"class_code"},
}


def default_system_prompt() -> str:
    return resources.files("ecgtalk.data").joinpath("system_prompt.txt").read_text()


# ---------------------------------------------------------------------------
# Requests


@dataclass(frozen=True)
class BackendRequest:
    system_prompt: str
    scenario_header: str
    history: str
    reasoning: str
    user_utterance: str
    token_budget: int = DEFAULT_TOKEN_BUDGET
    constraint_note: str = ""

    def serialized(self) -> str:
        blocks = [self.scenario_header]
        if self.history:
            blocks.append("History:\n" + self.history)
        if self.reasoning:
            blocks.append("Reasoning so far:\n" + self.reasoning)
        blocks.append("Current user turn:\n" + self.user_utterance)
        if self.constraint_note:
            blocks.append(self.constraint_note)
        return "\n\n".join(blocks)

    @property
    def token_estimate(self) -> int:
        chars = len(self.system_prompt) + len(self.serialized())
        return math.ceil(chars / CHARS_PER_TOKEN)


def _history_line(turn: DialogueTurn) -> str:
    if turn.speaker is Speaker.USER:
        return f"user[{turn.action.value}]: {turn.content}"
    if turn.action in TOOL_ACTIONS:
        payload = json.dumps(turn.tool_output.to_dict(), sort_keys=True)
        return f"agent[{turn.action.value}]: {payload}"
    return f"agent[{turn.action.value}]: {turn.content}"


def build_request(system_prompt: str, scenario_header: str,
                  turns: Sequence[DialogueTurn], user_utterance: str,
                  token_budget: int = DEFAULT_TOKEN_BUDGET,
                  constraint_note: str = "") -> BackendRequest:
    """Serialize (history, reasoning, current utterance) under the token budget.

    Oldest turns are dropped first when over budget; the scenario header and
    the current utterance always survive.
    """
    kept = list(turns)

    def render(remaining: Sequence[DialogueTurn]) -> BackendRequest:
        history = "\n".join(_history_line(t) for t in remaining)
        reasoning = "\n".join(
            f"thought[{i}]: {t.thought}"
            for i, t in enumerate(remaining) if t.speaker is Speaker.AGENT)
        return BackendRequest(system_prompt, scenario_header, history, reasoning,
                              user_utterance, token_budget, constraint_note)

    request = render(kept)
    while request.token_estimate > token_budget and kept:
        kept.pop(0)
        request = render(kept)
    return request


# ---------------------------------------------------------------------------
# Backends


class Backend(Protocol):
    def complete(self, request: BackendRequest) -> str: ...


class ScriptedBackend:
    """Deterministic canned-output backend; records every request it received."""

    def __init__(self, outputs: Sequence[str]):
        self._outputs = list(outputs)
        self._cursor = 0
        self.requests: list[BackendRequest] = []

    def complete(self, request: BackendRequest) -> str:
        self.requests.append(request)
        if self._cursor >= len(self._outputs):
            raise ScriptExhaustedError(
                f"script exhausted after {len(self._outputs)} outputs")
        output = self._outputs[self._cursor]
        self._cursor += 1
        return output


class KeywordBackend:
    """Heuristic backend: maps utterance keywords to actions.

    Good enough to drive live demo sessions without a trained model.  Honors
    the legal-action note added on retries.
    """

    MEASUREMENT_WORDS = ("rate", "fast", "slow", "beat", "interval", "qt",
                         "pr ", "qrs", "measure", "how many", "bpm", "pulse")
    EXPLANATION_WORDS = ("why", "which part", "where", "explain", "show me",
                         "evidence", "point to")
    CLASSIFICATION_WORDS = ("rhythm", "diagnos", "classif", "normal",
                            "abnormal", "wrong", "arrhythmia", "afib",
                            "fibrillation", "condition", "what does my ecg show")

    def complete(self, request: BackendRequest) -> str:
        utterance = request.user_utterance.lower()
        legal = None
        if request.constraint_note:
            legal = {name.strip() for name in
                     request.constraint_note.split(":", 1)[1].split(",")}

        def allowed(name: str) -> bool:
            return legal is None or name in legal

        if "[user_bye]" in utterance and allowed("system_bye"):
            return ("Action: system_bye\nThought: the user said goodbye.\n"
                    f"Response: {compose_system_bye()}")
        if "[request_follow_up]" in utterance and allowed("response_follow_up"):
            return ("Action: response_follow_up\n"
                    "Thought: the user wants more detail on the previous answer.\n"
                    "Response: __compose_follow_up__")
        if any(w in utterance for w in self.EXPLANATION_WORDS) and allowed("call_explanation"):
            return ("Action: explanation\nThought: the user asks which part of "
                    "the recording supports the finding.\nToolInput: {}")
        if any(w in utterance for w in self.MEASUREMENT_WORDS) and allowed("call_measurement"):
            return ("Action: measurement\nThought: the user asks for a measured "
                    "quantity; the measurement tool provides it.\nToolInput: {}")
        if any(w in utterance for w in self.CLASSIFICATION_WORDS) and allowed("call_classification"):
            return ("Action: classification\nThought: the user asks what the "
                    "recording shows; the classifier answers that.\nToolInput: {}")
        if allowed("response"):
            return ("Action: response\nThought: no tool is needed for this.\n"
                    "Response: I can check your heart rate, intervals, the "
                    "rhythm class, or point at the supporting part of the "
                    "recording. What would you like to know?")
        return ("Action: response_fail\nThought: no legal action fits.\n"
                "Response: I cannot act on that request right now.")


class ChatCompletionBackend:
    """Adapter speaking the common chat-completion wire protocol over HTTP."""

    def __init__(self, url: Optional[str] = None, model: Optional[str] = None,
                 api_key: Optional[str] = None, timeout_s: float = 60.0,
                 max_attempts: int = 3, transport=None):
        import httpx

        self.url = url or os.environ.get(ENV_BACKEND_URL, "")
        self.model = model or os.environ.get(ENV_BACKEND_MODEL, "")
        self.api_key = api_key or os.environ.get(ENV_BACKEND_KEY, "")
        if not self.url:
            raise BackendError(
                f"no backend URL configured (set {ENV_BACKEND_URL})")
        self.max_attempts = max_attempts
        self._client = httpx.Client(transport=transport, timeout=timeout_s)

    def complete(self, request: BackendRequest) -> str:
        import httpx

        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.serialized()},
            ],
            "temperature": 0.0,
        }
        last_error: Optional[Exception] = None
        for attempt in range(self.max_attempts):
            try:
                response = self._client.post(self.url, json=payload, headers=headers)
                response.raise_for_status()
                body = response.json()
                return body["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                time.sleep(min(0.2 * 2 ** attempt, 2.0))
        raise BackendError(f"backend unreachable after {self.max_attempts} "
                           f"attempts: {last_error!r}")


# ---------------------------------------------------------------------------
# Output parsing


@dataclass(frozen=True)
class ParsedAgentOutput:
    action: AgentAction
    thought: str
    content: Optional[str] = None
    tool_arguments: Optional[dict] = None


def parse_agent_output(raw: str) -> ParsedAgentOutput:
    """Parse the line-tagged (action, thought, payload) format.

    Unknown actions and malformed payloads raise AgentOutputError; nothing is
    silently coerced.
    """
    lines = raw.strip().splitlines()
    sections: list[tuple[str, str]] = []
    for line in lines:
        matched = False
        for tag in ("Action:", "Thought:", "ToolInput:", "Response:"):
            if line.startswith(tag):
                sections.append((tag[:-1], line[len(tag):].strip()))
                matched = True
                break
        if not matched:
            if not sections:
                continue  # leading prose before the first tag is ignored
            head, body = sections[-1]
            sections[-1] = (head, (body + "\n" + line).strip())

    fields = {}
    for head, body in sections:
        if head in fields:
            raise AgentOutputError(f"duplicate {head} line")
        fields[head] = body

    if "Action" not in fields:
        raise AgentOutputError("missing Action line")
    name = fields["Action"].strip().lower()
    if name in _TOOL_ALIASES:
        action = _TOOL_ALIASES[name]
    else:
        try:
            action = AgentAction(name)
        except ValueError:
            raise AgentOutputError(f"unknown action {fields['Action']!r}") from None

    thought = fields.get("Thought", "")
    if not thought:
        raise AgentOutputError("missing or empty Thought line")

    if action in TOOL_ACTIONS:
        if "Response" in fields:
            raise AgentOutputError(
                f"tool action {action.value} must carry ToolInput, not Response")
        raw_args = fields.get("ToolInput", "{}") or "{}"
        try:
            arguments = json.loads(raw_args)
        except json.JSONDecodeError as exc:
            raise AgentOutputError(f"malformed ToolInput JSON: {exc}") from None
        if not isinstance(arguments, dict):
            raise AgentOutputError("ToolInput must be a JSON object")
        unknown = set(arguments) - _TOOL_ARG_KEYS[action]
        if unknown:
            raise AgentOutputError(
                f"unknown ToolInput keys for {action.value}: {sorted(unknown)}")
        return ParsedAgentOutput(action, thought, tool_arguments=arguments)

    if "ToolInput" in fields:
        raise AgentOutputError(
            f"action {action.value} must carry Response, not ToolInput")
    if "Response" not in fields or not fields["Response"]:
        raise AgentOutputError("missing Response line")
    return ParsedAgentOutput(action, thought, content=fields["Response"])


# ---------------------------------------------------------------------------
# Tool dispatch


@dataclass
class SessionContext:
    record: EcgRecord
    registry: Sequence[DiagnosticClass]
    classifier: Optional[Classifier] = None
    explainer_config: Optional[ExplainerConfig] = None


def _default_explanation_class(context: SessionContext) -> str:
    output = classification_tool_call(context.record, context.registry,
                                      context.classifier)
    if output.is_valid and output.body.get("predicted"):
        predicted = output.body["predicted"]
        non_default = [c for c in predicted if c != "SR"]
        return (non_default or predicted)[0]
    return "SR"


def dispatch_tool(call: ToolCall, context: SessionContext) -> ToolOutput:
    """Route a tool call to its module; failures come back as invalid outputs."""
    if call.tool is ToolName.MEASUREMENT:
        return measurement_tool_call(context.record)
    if call.tool is ToolName.CLASSIFICATION:
        return classification_tool_call(context.record, context.registry,
                                        context.classifier)
    class_code = call.arguments.get("class_code") or _default_explanation_class(context)
    return explanation_tool_call(context.record, class_code,
                                 classifier=context.classifier,
                                 registry=context.registry,
                                 config=context.explainer_config)


# ---------------------------------------------------------------------------
# Session runner


@dataclass(frozen=True)
class OrchestratorConfig:
    retry_budget: int = 2
    token_budget: int = DEFAULT_TOKEN_BUDGET
    composer: str = "rule"  # "rule": deterministic post-tool responses; "backend": ask the model
    cefr: str = "B"

    def __post_init__(self):
        if self.composer not in ("rule", "backend"):
            raise ValueError(f"composer must be 'rule' or 'backend', got {self.composer}")


_session_counter = itertools.count(1)


class AgentSession:
    """One conversation: dialogue state, transcript, tool context, trace."""

    def __init__(self, record: EcgRecord, backend: Backend,
                 config: Optional[OrchestratorConfig] = None,
                 registry: Optional[Sequence[DiagnosticClass]] = None,
                 classifier: Optional[Classifier] = None,
                 explainer_config: Optional[ExplainerConfig] = None,
                 scenario: Optional[Scenario] = None,
                 session_id: Optional[str] = None,
                 system_prompt: Optional[str] = None):
        self.record = record
        self.backend = backend
        self.config = config or OrchestratorConfig()
        self.context = SessionContext(
            record=record,
            registry=registry if registry is not None else class_registry(record.lead_config),
            classifier=classifier,
            explainer_config=explainer_config)
        self.scenario = scenario or Scenario("live-session", self.config.cefr, "live")
        self.session_id = session_id or f"session-{next(_session_counter):06d}"
        self.system_prompt = system_prompt or default_system_prompt()
        self.state: DialogueState = initial_state(record.lead_config)
        self.turns: list[DialogueTurn] = []
        self.trace: list[dict] = []

    # -- request plumbing ---------------------------------------------------

    def scenario_header(self) -> str:
        return (f"Session {self.session_id}: record={self.record.record_id}, "
                f"lead_config={self.record.lead_config.value}, "
                f"topic={self.scenario.topic}, cefr={self.scenario.cefr}")

    def build_request(self, turns: Sequence[DialogueTurn], user_turn: DialogueTurn,
                      constraint_note: str = "") -> BackendRequest:
        return build_request(self.system_prompt, self.scenario_header(),
                             turns, _history_line(user_turn),
                             token_budget=self.config.token_budget,
                             constraint_note=constraint_note)

    @property
    def is_terminal(self) -> bool:
        return self.state.is_terminal

    def to_dialogue(self, dialogue_id: Optional[str] = None) -> Dialogue:
        return Dialogue(dialogue_id or self.session_id, self.scenario,
                        self.record.lead_config, self.record.record_id,
                        tuple(self.turns))

    # -- core loop ------------------------------------------------------------

    def _ask_backend(self, history: list[DialogueTurn], user_turn: DialogueTurn,
                     state: DialogueState) -> Optional[ParsedAgentOutput]:
        """Query with retries; None when the budget is exhausted."""
        legal = legal_next_actions(state)
        note = ""
        for attempt in range(1 + self.config.retry_budget):
            request = self.build_request(history, user_turn, constraint_note=note)
            raw = self.backend.complete(request)
            entry = {"turn_index": state.turn_index, "attempt": attempt,
                     "request": request.serialized(), "raw": raw}
            try:
                parsed = parse_agent_output(raw)
            except AgentOutputError as exc:
                entry["error"] = f"parse: {exc}"
                self.trace.append(entry)
                note = ("Your last output was invalid. Legal actions: "
                        + ", ".join(sorted(a.value for a in legal)))
                continue
            if parsed.action not in legal:
                entry["error"] = f"illegal action {parsed.action.value}"
                self.trace.append(entry)
                note = ("Action not legal here. Legal actions: "
                        + ", ".join(sorted(a.value for a in legal)))
                continue
            entry["action"] = parsed.action.value
            self.trace.append(entry)
            return parsed
        return None

    def run_turn(self, user_turn: DialogueTurn) -> list[DialogueTurn]:
        """Process one user turn; returns the agent turns it produced.

        Emits either [direct-response turn] or [tool turn, response turn].
        Backend failures surface to the caller with the session unchanged.
        """
        state = step(self.state, user_turn)  # raises TransitionRejected if illegal
        prior = list(self.turns)  # history excludes the current utterance
        trace_checkpoint = len(self.trace)
        try:
            agent_turns, state = self._agent_turns(prior, user_turn, state)
        except BackendError:
            del self.trace[trace_checkpoint:]
            raise
        self.turns = prior + [user_turn] + agent_turns
        self.state = state
        return agent_turns

    def _agent_turns(self, prior: list[DialogueTurn], user_turn: DialogueTurn,
                     state: DialogueState) -> tuple[list[DialogueTurn], DialogueState]:
        parsed = self._ask_backend(prior, user_turn, state)
        if parsed is None:
            # retry budget exhausted: give up within the schema
            fail = DialogueTurn.agent(
                AgentAction.RESPONSE_FAIL,
                thought="I could not produce a legal action for this turn.",
                content=("I am unable to handle that request right now; "
                         "could you rephrase it?"))
            return [fail], step(state, fail)

        if parsed.action in TOOL_ACTIONS:
            call = ToolCall(ACTION_TOOL[parsed.action], parsed.tool_arguments or {})
            output = dispatch_tool(call, self.context)
            tool_turn = DialogueTurn.agent(parsed.action, thought=parsed.thought,
                                           tool_output=output)
            state = step(state, tool_turn)
            response_turn = self._post_tool_response(prior + [tool_turn],
                                                     user_turn, state, output)
            state = step(state, response_turn)
            return [tool_turn, response_turn], state

        turn = DialogueTurn.agent(parsed.action, thought=parsed.thought,
                                  content=self._render_content(parsed))
        return [turn], step(state, turn)

    def _render_content(self, parsed: ParsedAgentOutput) -> str:
        # scripted/keyword backends may delegate follow-up wording to the composer
        if parsed.content == "__compose_follow_up__":
            last_output = next((t.tool_output for t in reversed(self.turns)
                                if t.tool_output is not None), None)
            return compose_follow_up(last_output, self.config.cefr)
        return parsed.content or ""

    def _post_tool_response(self, history: list[DialogueTurn], user_turn: DialogueTurn,
                            state: DialogueState, output: ToolOutput) -> DialogueTurn:
        if not output.is_valid:
            return DialogueTurn.agent(
                AgentAction.RESPONSE_FAIL,
                thought="The tool returned an invalid output; I must report failure.",
                content=compose_fail(output, self.config.cefr))
        if self.config.composer == "rule":
            return DialogueTurn.agent(
                AgentAction.RESPONSE,
                thought="Converting the tool output into an answer.",
                content=compose_response(output, self.config.cefr))
        parsed = self._ask_backend(history, user_turn, state)
        if parsed is None or parsed.action is not AgentAction.RESPONSE:
            # the grammar allows only `response` here; fall back to the composer
            return DialogueTurn.agent(
                AgentAction.RESPONSE,
                thought="Converting the tool output into an answer.",
                content=compose_response(output, self.config.cefr))
        return DialogueTurn.agent(AgentAction.RESPONSE, thought=parsed.thought,
                                  content=parsed.content or "")
