import json

import httpx
import pytest

from ecgtalk.agent import (AgentSession, BackendRequest, ChatCompletionBackend,
                           KeywordBackend, OrchestratorConfig, ScriptedBackend,
                           SessionContext, build_request, dispatch_tool,
                           parse_agent_output, _history_line)
from ecgtalk.classify import class_registry
from ecgtalk.dialogue import (AgentAction, DialogueTurn, Speaker, UserAction,
                              replay_dialogue)
from ecgtalk.errors import (AgentOutputError, BackendError,
                            ScriptExhaustedError, TransitionRejected)
from ecgtalk.records import LeadConfig
from ecgtalk.synth import flat_record, synthesize_ecg
from ecgtalk.tools import ToolCall, ToolName


# -- parsing -----------------------------------------------------------------

def test_parse_tool_action():
    parsed = parse_agent_output(
        "Action: measurement\nThought: user asks heart rate\nToolInput: {}")
    assert parsed.action is AgentAction.CALL_MEASUREMENT
    assert parsed.tool_arguments == {}


def test_parse_response_action():
    parsed = parse_agent_output("Action: response\nThought: t\nResponse: text")
    assert parsed.action is AgentAction.RESPONSE
    assert parsed.thought == "t"
    assert parsed.content == "text"


def test_parse_missing_action_line():
    with pytest.raises(AgentOutputError, match="missing Action"):
        parse_agent_output("Thought: ...\nResponse: Your heart rate is 75 bpm.")


def test_parse_unknown_action():
    with pytest.raises(AgentOutputError, match="unknown action"):
        parse_agent_output("Action: dance\nThought: t\nResponse: x")


def test_parse_payload_mismatch():
    with pytest.raises(AgentOutputError, match="ToolInput, not Response"):
        parse_agent_output("Action: measurement\nThought: t\nResponse: x")
    with pytest.raises(AgentOutputError, match="Response, not ToolInput"):
        parse_agent_output("Action: response\nThought: t\nToolInput: {}")


def test_parse_malformed_tool_args():
    with pytest.raises(AgentOutputError, match="malformed ToolInput"):
        parse_agent_output("Action: explanation\nThought: t\nToolInput: {nope")
    with pytest.raises(AgentOutputError, match="unknown ToolInput keys"):
        parse_agent_output('Action: measurement\nThought: t\nToolInput: {"x": 1}')


def test_parse_explanation_args():
    parsed = parse_agent_output(
        'Action: explanation\nThought: t\nToolInput: {"class_code": "PVC"}')
    assert parsed.tool_arguments == {"class_code": "PVC"}


def test_parse_multiline_thought_and_response():
    parsed = parse_agent_output(
        "Action: response\nThought: line one\nline two\nResponse: answer\nmore")
    assert parsed.thought == "line one\nline two"
    assert parsed.content == "answer\nmore"


# -- request building --------------------------------------------------------

def test_token_budget_truncates_oldest_first():
    turns = [DialogueTurn.user(UserAction.ECG_INQUIRY, f"question {i} " + "x" * 200)
             for i in range(40)]
    request = build_request("sys", "HEADER", turns, "user[ecg_inquiry]: now",
                            token_budget=1000)
    assert request.token_estimate <= 1000
    assert request.scenario_header == "HEADER"
    assert request.user_utterance.endswith("now")
    kept = request.history.splitlines()
    assert kept, "some history must survive"
    # the survivors are the newest turns
    assert kept[-1].startswith("user[ecg_inquiry]: question 39")


def test_request_serialization_stable():
    turns = [DialogueTurn.user(UserAction.ECG_INQUIRY, "q")]
    a = build_request("s", "h", turns, "u")
    b = build_request("s", "h", turns, "u")
    assert a.serialized() == b.serialized()


# -- scripted backend --------------------------------------------------------

def test_scripted_backend_order_and_exhaustion():
    backend = ScriptedBackend(["a", "b", "c"])
    req = BackendRequest("s", "h", "", "", "u")
    assert [backend.complete(req) for _ in range(3)] == ["a", "b", "c"]
    with pytest.raises(ScriptExhaustedError):
        backend.complete(req)
    assert len(backend.requests) == 4


# -- tool dispatch -----------------------------------------------------------

def test_dispatch_measurement(sinus_record_75):
    record, _ = sinus_record_75
    context = SessionContext(record, class_registry(record.lead_config))
    output = dispatch_tool(ToolCall(ToolName.MEASUREMENT), context)
    assert output.is_valid
    assert output.body["heart_rate_bpm"] == pytest.approx(75.0, abs=1.0)


def test_dispatch_classification(sinus_record_75):
    record, _ = sinus_record_75
    context = SessionContext(record, class_registry(record.lead_config))
    output = dispatch_tool(ToolCall(ToolName.CLASSIFICATION), context)
    assert output.is_valid
    assert output.body["predicted"] == ["SR"]


def test_dispatch_explanation_twelve_lead_invalid():
    record, _ = synthesize_ecg(70, 10, 500, 0, seed=0,
                               lead_config=LeadConfig.TWELVE_LEAD)
    context = SessionContext(record, class_registry(record.lead_config))
    output = dispatch_tool(ToolCall(ToolName.EXPLANATION,
                                    {"class_code": "PVC"}), context)
    assert not output.is_valid
    assert output.reason == "unsupported_lead_config"


# -- session loop ------------------------------------------------------------

def scripted_session(record, outputs, **kwargs):
    return AgentSession(record, ScriptedBackend(outputs), **kwargs)


def test_flagship_sequence(sinus_record_75):
    record, _ = sinus_record_75
    session = scripted_session(record, [
        "Action: classification\nThought: classify the rhythm.\nToolInput: {}",
        "Action: system_bye\nThought: user says bye.\nResponse: Goodbye.",
    ])
    turns = session.run_turn(DialogueTurn.user(UserAction.ECG_INQUIRY,
                                               "Is my rhythm normal?"))
    assert [t.action for t in turns] == [AgentAction.CALL_CLASSIFICATION,
                                         AgentAction.RESPONSE]
    turns = session.run_turn(DialogueTurn.user(UserAction.USER_BYE, "bye"))
    assert [t.action for t in turns] == [AgentAction.SYSTEM_BYE]
    assert session.is_terminal
    actions = [t.action.value for t in session.to_dialogue().turns]
    assert actions == ["ecg_inquiry", "call_classification", "response",
                       "user_bye", "system_bye"]
    replay_dialogue(session.to_dialogue())


def test_invalid_tool_output_forces_response_fail():
    session = scripted_session(flat_record(), [
        "Action: measurement\nThought: compute the heart rate.\nToolInput: {}"])
    turns = session.run_turn(DialogueTurn.user(UserAction.ECG_INQUIRY,
                                               "what is my heart rate?"))
    assert [t.action for t in turns] == [AgentAction.CALL_MEASUREMENT,
                                         AgentAction.RESPONSE_FAIL]
    assert not turns[0].tool_output.is_valid


def test_retry_then_success(sinus_record_75):
    record, _ = sinus_record_75
    session = scripted_session(record, [
        "garbage with no tags",
        "Action: response\nThought: ok now.\nResponse: I can help.",
    ], config=OrchestratorConfig(retry_budget=2))
    turns = session.run_turn(DialogueTurn.user(UserAction.ECG_INQUIRY, "hi"))
    assert [t.action for t in turns] == [AgentAction.RESPONSE]
    # retry carried a constraint note naming the legal actions
    backend = session.backend
    assert "Legal actions" in backend.requests[1].constraint_note


def test_retry_exhaustion_yields_response_fail(sinus_record_75):
    record, _ = sinus_record_75
    session = scripted_session(record, [
        "bad", "Action: response_follow_up\nThought: t\nResponse: x", "bad again",
    ], config=OrchestratorConfig(retry_budget=2))
    turns = session.run_turn(DialogueTurn.user(UserAction.ECG_INQUIRY, "hi"))
    assert [t.action for t in turns] == [AgentAction.RESPONSE_FAIL]
    replay_dialogue(session.to_dialogue())


def test_backend_error_leaves_state_unchanged(sinus_record_75):
    record, _ = sinus_record_75

    class FailingBackend:
        def complete(self, request):
            raise BackendError("backend unreachable")

    session = AgentSession(record, FailingBackend())
    before_turns = list(session.turns)
    before_state = session.state
    with pytest.raises(BackendError):
        session.run_turn(DialogueTurn.user(UserAction.ECG_INQUIRY, "hi"))
    assert session.turns == before_turns
    assert session.state == before_state


def test_illegal_user_turn_rejected(sinus_record_75):
    record, _ = sinus_record_75
    session = scripted_session(record, [])
    with pytest.raises(TransitionRejected):
        session.run_turn(DialogueTurn.user(UserAction.USER_BYE, "bye"))


def test_recorded_requests_carry_self_history(sinus_record_75):
    record, _ = sinus_record_75
    backend = ScriptedBackend([
        "Action: measurement\nThought: get the rate.\nToolInput: {}",
        "Action: response\nThought: direct.\nResponse: Anything else?",
        "Action: system_bye\nThought: bye.\nResponse: Goodbye.",
    ])
    session = AgentSession(record, backend)
    u1 = DialogueTurn.user(UserAction.ECG_INQUIRY, "heart rate?")
    session.run_turn(u1)
    u2 = DialogueTurn.user(UserAction.ECG_INQUIRY, "anything else?")
    session.run_turn(u2)

    # request 0: empty history, u = first utterance
    assert backend.requests[0].history == ""
    assert backend.requests[0].reasoning == ""
    assert backend.requests[0].user_utterance == _history_line(u1)
    # request 1: history = the session's own prior turns, u = second utterance
    expected_history = "\n".join(_history_line(t) for t in session.turns[:3])
    assert backend.requests[1].history == expected_history
    assert backend.requests[1].user_utterance == _history_line(u2)
    thoughts = [t.thought for t in session.turns[:3] if t.speaker is Speaker.AGENT]
    for thought in thoughts:
        assert thought in backend.requests[1].reasoning


def test_transcript_tool_outputs_not_mutated(sinus_record_75):
    record, _ = sinus_record_75
    session = scripted_session(record, [
        "Action: measurement\nThought: rate.\nToolInput: {}"])
    turns = session.run_turn(DialogueTurn.user(UserAction.ECG_INQUIRY, "rate?"))
    tool_turn = turns[0]
    assert session.turns[1] is tool_turn
    from ecgtalk.measure import measurement_tool_call

    assert tool_turn.tool_output == measurement_tool_call(record)


def test_history_serialization_stable(sinus_record_75):
    record, _ = sinus_record_75
    session = scripted_session(record, [
        "Action: measurement\nThought: rate.\nToolInput: {}"])
    session.run_turn(DialogueTurn.user(UserAction.ECG_INQUIRY, "rate?"))
    u = DialogueTurn.user(UserAction.ECG_INQUIRY, "again?")
    a = session.build_request(session.turns, u).serialized()
    b = session.build_request(session.turns, u).serialized()
    assert a == b


def test_keyword_backend_actions(sinus_record_75):
    record, _ = sinus_record_75
    session = AgentSession(record, KeywordBackend())
    turns = session.run_turn(DialogueTurn.user(UserAction.ECG_INQUIRY,
                                               "How fast is my pulse?"))
    assert turns[0].action is AgentAction.CALL_MEASUREMENT
    turns = session.run_turn(DialogueTurn.user(UserAction.REQUEST_FOLLOW_UP,
                                               "tell me more"))
    assert turns[0].action is AgentAction.RESPONSE_FOLLOW_UP
    turns = session.run_turn(DialogueTurn.user(UserAction.USER_BYE, "bye"))
    assert turns[0].action is AgentAction.SYSTEM_BYE


def test_chat_completion_backend_wire_format():
    def handler(request):
        payload = json.loads(request.content)
        assert payload["model"] == "test-model"
        assert payload["messages"][0]["role"] == "system"
        assert request.headers["Authorization"] == "Bearer sekret"
        return httpx.Response(200, json={
            "choices": [{"message": {"content":
                         "Action: response\nThought: t\nResponse: hi"}}]})

    backend = ChatCompletionBackend(
        url="http://llm.test/v1/chat/completions", model="test-model",
        api_key="sekret", transport=httpx.MockTransport(handler))
    raw = backend.complete(BackendRequest("sys", "h", "", "", "u"))
    assert raw.startswith("Action: response")


def test_chat_completion_backend_unreachable():
    def handler(request):
        raise httpx.ConnectError("refused")

    backend = ChatCompletionBackend(
        url="http://llm.test/x", model="m", api_key="",
        max_attempts=2, transport=httpx.MockTransport(handler))
    with pytest.raises(BackendError, match="unreachable"):
        backend.complete(BackendRequest("sys", "h", "", "", "u"))
