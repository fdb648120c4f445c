import itertools

import pytest
from hypothesis import given, settings, strategies as st

from ecgtalk.dialogue import (ACTION_SEQUENCES, ACTION_TOOL, TOOL_ACTIONS,
                              AgentAction, Dialogue, DialogueTurn, Scenario,
                              Speaker, UserAction, initial_state,
                              legal_next_actions, parse_dialogue,
                              replay_dialogue, sequences_for,
                              serialize_dialogue, step, validate_action_sequence)
from ecgtalk.errors import ParseError, TransitionRejected
from ecgtalk.records import LeadConfig
from ecgtalk.tools import ToolName, ToolOutput


def make_turn(action, valid=True, content="hello"):
    if isinstance(action, UserAction):
        return DialogueTurn.user(action, content)
    if action in TOOL_ACTIONS:
        tool = ACTION_TOOL[action]
        output = (ToolOutput.valid(tool, {"x": 1}) if valid
                  else ToolOutput.invalid(tool, "reason"))
        return DialogueTurn.agent(action, "thinking", tool_output=output)
    return DialogueTurn.agent(action, "thinking", content=content)


def run_sequence(actions, lead=LeadConfig.LEAD_II, tool_valid=None):
    state = initial_state(lead)
    for i, action in enumerate(actions):
        valid = tool_valid[i] if tool_valid else (
            actions[i + 1] is not AgentAction.RESPONSE_FAIL
            if action in TOOL_ACTIONS and i + 1 < len(actions) else True)
        state = step(state, make_turn(action, valid))
    return state


# -- turn model --------------------------------------------------------------

def test_turn_validation():
    with pytest.raises(ValueError, match="thought"):
        DialogueTurn.agent(AgentAction.RESPONSE, "", content="x")
    with pytest.raises(ValueError, match="tool output"):
        DialogueTurn.agent(AgentAction.CALL_MEASUREMENT, "t", content="x")
    with pytest.raises(ValueError, match="content"):
        DialogueTurn.user(UserAction.ECG_INQUIRY, "")
    with pytest.raises(ValueError, match="carries output from"):
        DialogueTurn.agent(AgentAction.CALL_MEASUREMENT, "t",
                           tool_output=ToolOutput.valid(ToolName.CLASSIFICATION,
                                                        {"a": 1}))


# -- action-sequence grammar -------------------------------------------------

def test_paper_example_sequence_validates():
    ok = validate_action_sequence(
        ["ecg_inquiry", "call_classification", "response", "user_bye", "system_bye"])
    assert ok == []


def test_sequence_must_start_with_inquiry():
    violations = validate_action_sequence(["response", "user_bye", "system_bye"])
    assert violations and violations[0].rule == "G1" and violations[0].position == 0


def test_tool_must_be_followed_by_response_family():
    violations = validate_action_sequence(
        ["ecg_inquiry", "call_measurement", "user_bye", "system_bye"])
    assert violations and violations[0].rule == "G3" and violations[0].position == 2


def test_all_bundled_sequences_validate():
    assert len(ACTION_SEQUENCES) == 20
    for sequence in ACTION_SEQUENCES.values():
        assert validate_action_sequence(sequence.actions) == []


def test_transposition_sensitivity():
    total = rejected = 0
    for sequence in ACTION_SEQUENCES.values():
        actions = list(sequence.actions)
        for i, j in itertools.combinations(range(len(actions)), 2):
            mutated = actions.copy()
            mutated[i], mutated[j] = mutated[j], mutated[i]
            if mutated == actions:
                continue
            total += 1
            if validate_action_sequence(mutated):
                rejected += 1
    assert rejected / total >= 0.90


def test_sequences_for_lead_config():
    assert len(sequences_for(LeadConfig.LEAD_I)) == 20
    twelve = sequences_for(LeadConfig.TWELVE_LEAD)
    assert len(twelve) < 20
    assert all(not s.uses_explanation for s in twelve)


# -- state machine -----------------------------------------------------------

def test_initial_state_only_inquiry():
    assert legal_next_actions(initial_state()) == {UserAction.ECG_INQUIRY}


def test_after_inquiry_actions():
    state = step(initial_state(LeadConfig.LEAD_II), make_turn(UserAction.ECG_INQUIRY))
    legal = legal_next_actions(state)
    assert {AgentAction.RESPONSE, AgentAction.CALL_CLASSIFICATION,
            AgentAction.CALL_MEASUREMENT, AgentAction.CALL_EXPLANATION} <= legal
    assert AgentAction.RESPONSE_FOLLOW_UP not in legal
    assert AgentAction.SYSTEM_BYE not in legal


def test_twelve_lead_excludes_explanation():
    state = step(initial_state(LeadConfig.TWELVE_LEAD),
                 make_turn(UserAction.ECG_INQUIRY))
    assert AgentAction.CALL_EXPLANATION not in legal_next_actions(state)
    with pytest.raises(TransitionRejected) as err:
        step(state, make_turn(AgentAction.CALL_EXPLANATION))
    assert err.value.rule == "G7"


def test_invalid_tool_forces_response_fail():
    state = step(initial_state(LeadConfig.LEAD_II), make_turn(UserAction.ECG_INQUIRY))
    state = step(state, make_turn(AgentAction.CALL_MEASUREMENT, valid=False))
    assert legal_next_actions(state) == {AgentAction.RESPONSE_FAIL}
    with pytest.raises(TransitionRejected) as err:
        step(state, make_turn(AgentAction.RESPONSE))
    assert err.value.rule == "G3"
    state = step(state, make_turn(AgentAction.RESPONSE_FAIL))
    assert not state.is_terminal


def test_valid_tool_forces_response():
    state = step(initial_state(LeadConfig.LEAD_II), make_turn(UserAction.ECG_INQUIRY))
    state = step(state, make_turn(AgentAction.CALL_MEASUREMENT, valid=True))
    assert legal_next_actions(state) == {AgentAction.RESPONSE}


def test_user_bye_then_system_bye_terminal():
    state = run_sequence([UserAction.ECG_INQUIRY, AgentAction.RESPONSE,
                          UserAction.USER_BYE])
    assert legal_next_actions(state) == {AgentAction.SYSTEM_BYE}
    state = step(state, make_turn(AgentAction.SYSTEM_BYE))
    assert state.is_terminal
    assert legal_next_actions(state) == set()
    with pytest.raises(TransitionRejected, match="terminal"):
        step(state, make_turn(UserAction.ECG_INQUIRY))


def test_step_and_legal_agree_exhaustively():
    all_actions = list(UserAction) + list(AgentAction)
    seen = set()

    def explore(state, depth):
        key = (state.phase, state.lead_config)
        if key in seen or depth > 10:
            return
        seen.add(key)
        legal = legal_next_actions(state)
        for action in all_actions:
            for valid in (True, False):
                turn = make_turn(action, valid)
                try:
                    nxt = step(state, turn)
                    accepted = True
                except TransitionRejected:
                    accepted = False
                assert accepted == (action in legal), (state.phase, action)
                if accepted:
                    explore(nxt, depth + 1)

    for lead in (None, LeadConfig.LEAD_I, LeadConfig.TWELVE_LEAD):
        seen.clear()
        explore(initial_state(lead), 0)


def test_all_bundled_sequences_replay():
    for sequence in ACTION_SEQUENCES.values():
        lead = (LeadConfig.LEAD_II if sequence.uses_explanation
                else LeadConfig.TWELVE_LEAD)
        state = run_sequence(sequence.actions, lead=LeadConfig.LEAD_II)
        assert state.is_terminal


# -- serialization -----------------------------------------------------------

def build_dialogue(seq_id="seq-01", contents=("Is my rhythm ok?",)):
    sequence = ACTION_SEQUENCES[seq_id]
    turns = []
    for i, action in enumerate(sequence.actions):
        valid = True
        if action in TOOL_ACTIONS and i + 1 < len(sequence.actions):
            valid = sequence.actions[i + 1] is not AgentAction.RESPONSE_FAIL
        turns.append(make_turn(action, valid,
                               content=contents[i % len(contents)]))
    return Dialogue("d-1", Scenario("measurement-meaning", "B", seq_id),
                    LeadConfig.LEAD_II, "rec-1", tuple(turns))


def test_serialize_parse_round_trip():
    dialogue = build_dialogue()
    data = serialize_dialogue(dialogue)
    parsed = parse_dialogue(data)
    assert parsed == dialogue
    assert serialize_dialogue(parsed) == data


@settings(max_examples=25, deadline=None)
@given(seq_id=st.sampled_from(sorted(ACTION_SEQUENCES)),
       content=st.text(st.characters(codec="utf-8",
                                     exclude_categories=("Cs", "Cc")),
                       min_size=1, max_size=40).filter(str.strip))
def test_round_trip_property(seq_id, content):
    dialogue = build_dialogue(seq_id, contents=(content,))
    assert parse_dialogue(serialize_dialogue(dialogue)) == dialogue


def test_parse_rejects_missing_thought():
    payload = serialize_dialogue(build_dialogue()).decode()
    broken = payload.replace('"thought":"thinking",', "", 1)
    with pytest.raises(ParseError, match="thought"):
        parse_dialogue(broken)


def test_parse_rejects_grammar_violation():
    dialogue = build_dialogue()
    # swap the first two turns: agent speaks first now
    turns = (dialogue.turns[1], dialogue.turns[0]) + dialogue.turns[2:]
    payload = Dialogue("d-2", dialogue.scenario, dialogue.lead_config,
                       "rec-1", turns)
    import json

    raw = json.dumps(payload.to_dict())
    with pytest.raises(ParseError, match="grammar violation") as err:
        parse_dialogue(raw)
    assert "turns[0]" in str(err.value)


def test_parsed_dialogues_replay_cleanly():
    dialogue = parse_dialogue(serialize_dialogue(build_dialogue("seq-16")))
    final = replay_dialogue(dialogue)
    assert final.is_terminal
