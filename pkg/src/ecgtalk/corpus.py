"""Desk-scale multi-turn dialogue (MTD) corpus construction.

Scenario = (topic, user-proficiency tier, action sequence).  Scenarios are
sampled uniformly over the eligible combinations; the action sequence is the
skeleton that fixes the action of every turn.  The templated generator fills
user turns from tier-matched utterance banks, runs the real tools for tool
turns, and composes agent responses from the tool outputs, so generated
dialogues replay through the state machine and are faithful by construction.

Sequences containing ``response_fail`` are paired with a flat record (every
tool fails on it); sequences calling the explanation tool get a record with
an injected ectopic beat so the explained class is actually active.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agent import SessionContext, dispatch_tool
from .classify import class_registry
from .compose import (compose_fail, compose_follow_up, compose_response,
                      compose_system_bye)
from .dialogue import (ACTION_SEQUENCES, ACTION_TOOL, TOOL_ACTIONS, ActionSequence,
                       AgentAction, Dialogue, DialogueTurn, Scenario, Speaker,
                       UserAction, parse_dialogue, replay_dialogue,
                       sequences_for, serialize_dialogue)
from .errors import ParseError
from .explain import ExplainerConfig
from .io import write_csv
from .records import EcgRecord, LeadConfig
from .synth import PrematureBeat, beat_interval_s, flat_record, synthesize_ecg
from .tools import ToolOutput

TOPICS = (
    "symptom-interpretation",
    "medication-effects",
    "measurement-meaning",
    "device-usage",
    "arrhythmia-diagnosis",
    "lifestyle-risk",
    "report-clarification",
)
CEFR_LEVELS = ("A", "B", "C")

# explanation is slow at the acceptance-grade stride; corpus generation uses
# a coarser deterministic configuration
CORPUS_EXPLAINER = ExplainerConfig(stride_s=0.1, spectral=False)


@dataclass(frozen=True)
class TrainingInstance:
    dialogue_id: str
    turn_index: int
    history: tuple[DialogueTurn, ...]
    target: DialogueTurn

    def to_dict(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "turn_index": self.turn_index,
            "history": [t.to_dict() for t in self.history],
            "target": self.target.to_dict(),
        }


# ---------------------------------------------------------------------------
# Utterance banks (tier-matched wording; A avoids higher-tier vocabulary)

_TOPIC_CONTEXT = {
    "symptom-interpretation": {
        "A": "when my chest feels strange",
        "B": "given the palpitations I keep noticing",
        "C": "in the context of my recurring palpitations",
    },
    "medication-effects": {
        "A": "since I started my new pills",
        "B": "since my dosage was changed last week",
        "C": "after the recent adjustment of my antiarrhythmic prescription",
    },
    "measurement-meaning": {
        "A": "from this test",
        "B": "from this recording",
        "C": "from this electrocardiogram",
    },
    "device-usage": {
        "A": "from my wrist band",
        "B": "from my wearable patch",
        "C": "captured by my single-lead wearable device",
    },
    "arrhythmia-diagnosis": {
        "A": "because my heart jumps sometimes",
        "B": "because of the irregular episodes I mentioned",
        "C": "given my suspected arrhythmia",
    },
    "lifestyle-risk": {
        "A": "after coffee and little sleep",
        "B": "after caffeine and a stressful week",
        "C": "considering my risk factors and stimulant intake",
    },
    "report-clarification": {
        "A": "that my doctor wrote about",
        "B": "mentioned in my screening report",
        "C": "flagged in my cardiology report",
    },
}

_INQUIRY_TEMPLATES = {
    AgentAction.CALL_MEASUREMENT: {
        "A": ("How fast is my heart going {ctx}?",
              "Can you check how my heart beats {ctx}?"),
        "B": ("Could you measure my heart rate and intervals {ctx}?",
              "What are the timing measurements {ctx}?"),
        "C": ("Please quantify the PR interval, QRS complex and QTc {ctx}.",
              "Could you extract the fiducial timing measurements {ctx}?"),
    },
    AgentAction.CALL_CLASSIFICATION: {
        "A": ("Is my heart okay {ctx}?",
              "Does this test look normal {ctx}?"),
        "B": ("Does the rhythm look normal {ctx}?",
              "Can you classify what this recording shows {ctx}?"),
        "C": ("Which diagnostic classes does this electrocardiogram support {ctx}?",
              "Is there evidence of an arrhythmia {ctx}?"),
    },
    AgentAction.CALL_EXPLANATION: {
        "A": ("Can you show me where the problem is {ctx}?",
              "Which part of the test looks bad {ctx}?"),
        "B": ("Which part of the recording points to that finding {ctx}?",
              "Can you show me where this appears {ctx}?"),
        "C": ("Which intervals of the tracing carry the evidence {ctx}?",
              "Please localize the segments supporting the diagnosis {ctx}."),
    },
    AgentAction.RESPONSE: {
        "A": ("What should I do about my heart {ctx}?",
              "Is it bad to feel my heart {ctx}?"),
        "B": ("What does this usually mean {ctx}?",
              "Should I be worried about what I feel {ctx}?"),
        "C": ("How should I interpret such findings {ctx}?",
              "What is the clinical significance of this {ctx}?"),
    },
}

_FOLLOW_UP_TEMPLATES = {
    "A": ("Can you tell me more?", "What does that mean for me?"),
    "B": ("Could you expand on that a little?", "How should I read that result?"),
    "C": ("Could you elaborate on the implications?",
          "How robust is that conclusion?"),
}

_BYE_TEMPLATES = {
    "A": ("Okay, thank you. Bye!", "Thanks, goodbye."),
    "B": ("That helps, thanks. Goodbye!", "Understood, thank you. Bye."),
    "C": ("Much appreciated, goodbye.", "That clarifies it, thank you. Goodbye."),
}

_DIRECT_ANSWERS = {
    "symptom-interpretation": {
        "A": "A strange feeling in the chest is not always a heart problem. "
             "If it hurts a lot or you feel weak, see your doctor soon.",
        "B": "Occasional palpitations are common and often benign, but pair "
             "them with this recording when you talk to your doctor.",
        "C": "Transient palpitations without corroborating electrocardiographic "
             "findings are usually benign; persistent or exertional symptoms "
             "warrant clinical correlation.",
    },
    "medication-effects": {
        "A": "Some pills can make the heart go faster or slower. Do not stop "
             "them on your own; ask your doctor.",
        "B": "Several prescriptions influence heart rate and rhythm; any dosage "
             "question belongs with your prescriber.",
        "C": "Chronotropic and dromotropic medication effects are expected; "
             "correlate any interval changes with your prescriber before "
             "altering the regimen.",
    },
    "measurement-meaning": {
        "A": "The numbers from this test describe how fast and how steady "
             "your heart beats.",
        "B": "These measurements describe the timing of each heartbeat phase; "
             "normal ranges depend on age and context.",
        "C": "The intervals characterize conduction and repolarization timing; "
             "reference ranges are population-derived and context-dependent.",
    },
    "device-usage": {
        "A": "Keep the band snug on your wrist and sit still while it works. "
             "That gives the best test.",
        "B": "Keep the sensor in steady contact with your skin and stay still "
             "during the recording for a clean signal.",
        "C": "Stable electrode contact and minimal motion artifact are the main "
             "determinants of single-lead signal quality.",
    },
    "arrhythmia-diagnosis": {
        "A": "One test alone cannot say everything. If your heart often jumps "
             "or races, your doctor may want a longer check.",
        "B": "A single recording cannot exclude an intermittent problem; longer "
             "monitoring is how irregular episodes get confirmed.",
        "C": "Paroxysmal arrhythmias often evade a single tracing; extended "
             "ambulatory monitoring improves diagnostic yield.",
    },
    "lifestyle-risk": {
        "A": "Coffee, smoking, stress and little sleep can all make the heart "
             "race. Cutting down usually helps.",
        "B": "Caffeine, nicotine, stress and poor sleep are common triggers; "
             "reducing them usually lowers the episode frequency.",
        "C": "Stimulant intake, sleep deprivation and sympathetic stress are "
             "established modulators of ectopy burden and heart rate.",
    },
    "report-clarification": {
        "A": "I can read this test for you, and your doctor can explain what "
             "the report words mean for you.",
        "B": "I can restate what the recording itself shows; report wording and "
             "treatment decisions stay with your clinician.",
        "C": "I can reconcile the tracing with the report terminology, but "
             "clinical interpretation remains with your cardiologist.",
    },
}

_TOOL_THOUGHTS = {
    AgentAction.CALL_MEASUREMENT: "The user asks for measured quantities; "
                                  "the measurement tool provides them.",
    AgentAction.CALL_CLASSIFICATION: "The user asks what the recording shows; "
                                     "the classifier answers that.",
    AgentAction.CALL_EXPLANATION: "The user asks where the evidence lies; "
                                  "the explanation tool localizes it.",
}


# ---------------------------------------------------------------------------
# Scenario sampling


@lru_cache(maxsize=None)
def _scenario_space_cached(lead_config: LeadConfig) -> tuple[Scenario, ...]:
    return tuple(Scenario(topic, cefr, seq.sequence_id)
                 for topic in TOPICS
                 for cefr in CEFR_LEVELS
                 for seq in sequences_for(lead_config))


def scenario_space(lead_config: LeadConfig) -> list[Scenario]:
    """All eligible (topic, cefr, sequence) combinations for a lead config."""
    return list(_scenario_space_cached(lead_config))


def sample_scenario(rng: np.random.Generator,
                    lead_config: LeadConfig = LeadConfig.LEAD_II) -> Scenario:
    """Uniform draw over the eligible scenario combinations."""
    space = _scenario_space_cached(lead_config)
    if not space:
        raise ValueError("empty scenario space")
    return space[int(rng.integers(len(space)))]


# ---------------------------------------------------------------------------
# Record selection


def record_for_sequence(sequence: ActionSequence, lead_config: LeadConfig,
                        rng: np.random.Generator,
                        record_id: str) -> tuple[EcgRecord, dict]:
    """Pick a record whose tool behavior matches the skeleton's needs."""
    if sequence.requires_tool_failure:
        return flat_record(10.0, 500.0, lead_config, record_id=record_id), {
            "kind": "flat"}
    if sequence.uses_explanation:
        hr = float(rng.uniform(60, 90))
        idx = int(rng.integers(3, 7))
        seed = int(rng.integers(2 ** 31))
        record, fiducials = synthesize_ecg(
            hr, 10.0, 500.0, 0.01, seed=seed, lead_config=lead_config,
            premature=[PrematureBeat(idx, 0.6, "ventricular")],
            record_id=record_id)
        gt_interval = beat_interval_s(fiducials, idx, 500.0)
        return record, {"kind": "ectopic", "heart_rate_bpm": hr, "beat": idx,
                        "explained_class": "PVC",
                        "gt_interval_s": [gt_interval[0], gt_interval[1]]}
    hr = float(rng.uniform(50, 110))
    seed = int(rng.integers(2 ** 31))
    record, _ = synthesize_ecg(hr, 10.0, 500.0, 0.02, seed=seed,
                               lead_config=lead_config, record_id=record_id)
    return record, {"kind": "sinus", "heart_rate_bpm": hr}


# ---------------------------------------------------------------------------
# Templated generation


class SkeletonDeviation(Exception):
    """The record's tool behavior cannot realize the scenario's skeleton."""


def _pick(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


def _user_content(action: UserAction, next_action, scenario: Scenario,
                  rng: np.random.Generator) -> str:
    tier = scenario.cefr
    if action is UserAction.USER_BYE:
        return _pick(rng, _BYE_TEMPLATES[tier])
    if action is UserAction.REQUEST_FOLLOW_UP:
        base = _pick(rng, _FOLLOW_UP_TEMPLATES[tier])
        if next_action in TOOL_ACTIONS:
            ctx = _TOPIC_CONTEXT[scenario.topic][tier]
            ask = _pick(rng, _INQUIRY_TEMPLATES[next_action][tier]).format(ctx=ctx)
            return f"{base} Also: {ask}"
        return base
    kind = next_action if next_action in _INQUIRY_TEMPLATES else AgentAction.RESPONSE
    ctx = _TOPIC_CONTEXT[scenario.topic][tier]
    return _pick(rng, _INQUIRY_TEMPLATES[kind][tier]).format(ctx=ctx)


def generate_dialogue(scenario: Scenario, record: EcgRecord,
                      rng: Optional[np.random.Generator] = None,
                      dialogue_id: Optional[str] = None,
                      explainer_config: ExplainerConfig = CORPUS_EXPLAINER) -> Dialogue:
    """Deterministically realize a scenario skeleton on a record."""
    if scenario.action_sequence_id not in ACTION_SEQUENCES:
        raise ValueError(f"unknown action sequence {scenario.action_sequence_id!r}")
    sequence = ACTION_SEQUENCES[scenario.action_sequence_id]
    if sequence.uses_explanation and record.lead_config is LeadConfig.TWELVE_LEAD:
        raise SkeletonDeviation(
            "explanation sequences cannot run under twelve_lead")
    rng = rng if rng is not None else np.random.default_rng(0)
    tier = scenario.cefr
    context = SessionContext(record=record,
                             registry=class_registry(record.lead_config),
                             explainer_config=explainer_config)

    turns: list[DialogueTurn] = []
    last_output: Optional[ToolOutput] = None
    actions = sequence.actions
    for pos, action in enumerate(actions):
        nxt = actions[pos + 1] if pos + 1 < len(actions) else None
        if isinstance(action, UserAction):
            turns.append(DialogueTurn.user(
                action, _user_content(action, nxt, scenario, rng)))
            continue
        if action in TOOL_ACTIONS:
            from .tools import ToolCall

            output = dispatch_tool(ToolCall(ACTION_TOOL[action], {}), context)
            if nxt is AgentAction.RESPONSE and not output.is_valid:
                raise SkeletonDeviation(
                    f"{action.value} returned invalid output ({output.reason}) "
                    "but the skeleton expects a response")
            if nxt is AgentAction.RESPONSE_FAIL and output.is_valid:
                raise SkeletonDeviation(
                    f"{action.value} returned valid output but the skeleton "
                    "expects response_fail")
            turns.append(DialogueTurn.agent(action, thought=_TOOL_THOUGHTS[action],
                                            tool_output=output))
            last_output = output
            continue
        if action is AgentAction.RESPONSE:
            if turns and turns[-1].action in TOOL_ACTIONS:
                content = compose_response(turns[-1].tool_output, tier)
                thought = "Converting the tool output into an answer."
            else:
                content = _DIRECT_ANSWERS[scenario.topic][tier]
                thought = "No tool is needed; answering from general knowledge."
        elif action is AgentAction.RESPONSE_FAIL:
            content = compose_fail(turns[-1].tool_output, tier)
            thought = "The tool returned an invalid output; I must report failure."
        elif action is AgentAction.RESPONSE_FOLLOW_UP:
            content = compose_follow_up(last_output, tier)
            thought = "Answering the follow-up from what was already established."
        else:  # SYSTEM_BYE
            content = compose_system_bye(tier)
            thought = "The user said goodbye; closing the conversation."
        turns.append(DialogueTurn.agent(action, thought=thought, content=content))

    dialogue = Dialogue(
        dialogue_id=dialogue_id or f"{scenario.topic}-{tier}-{scenario.action_sequence_id}",
        scenario=scenario,
        lead_config=record.lead_config,
        ecg_record_ref=record.record_id,
        turns=tuple(turns))
    replay_dialogue(dialogue)
    return dialogue


# ---------------------------------------------------------------------------
# Format filter


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: Optional[str] = None


def filter_dialogue(dialogue) -> FilterDecision:
    """Drop schema-invalid, grammar-invalid, or skeleton-deviating dialogues."""
    if not isinstance(dialogue, Dialogue):
        try:
            dialogue = parse_dialogue(dialogue)
        except ParseError as exc:
            reason = "grammar" if "grammar violation" in str(exc) else "schema"
            return FilterDecision(False, reason)
    else:
        try:
            replay_dialogue(dialogue)
        except Exception:
            return FilterDecision(False, "grammar")
    sequence = ACTION_SEQUENCES.get(dialogue.scenario.action_sequence_id)
    if sequence is None:
        return FilterDecision(False, "unknown-sequence")
    if tuple(dialogue.action_sequence()) != sequence.actions:
        return FilterDecision(False, "action-mismatch")
    return FilterDecision(True)


# ---------------------------------------------------------------------------
# Splitting and turn explosion


def split_dataset(dialogues: Sequence[Dialogue], seed: int) -> dict[str, list[Dialogue]]:
    """80/10/10 split by dialogue; remainder goes to train; deterministic."""
    n = len(dialogues)
    if n < 10:
        raise ValueError(f"need at least 10 dialogues to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = n // 10
    n_test = n // 10
    val_idx = set(order[:n_val].tolist())
    test_idx = set(order[n_val:n_val + n_test].tolist())
    splits = {"train": [], "val": [], "test": []}
    for i, dialogue in enumerate(dialogues):
        if i in val_idx:
            splits["val"].append(dialogue)
        elif i in test_idx:
            splits["test"].append(dialogue)
        else:
            splits["train"].append(dialogue)
    return splits


def explode_turns(dialogue: Dialogue) -> list[TrainingInstance]:
    """One training instance per agent turn, with the full prior history."""
    instances = []
    for k, turn in enumerate(dialogue.turns):
        if turn.speaker is Speaker.AGENT:
            instances.append(TrainingInstance(
                dialogue_id=dialogue.dialogue_id,
                turn_index=k,
                history=dialogue.turns[:k],
                target=turn))
    return instances


# ---------------------------------------------------------------------------
# Corpus assembly


def build_corpus(n_dialogues: int, lead_config: LeadConfig, seed: int,
                 out_dir, write_records: bool = True) -> dict:
    """Generate, filter, split and write a corpus; returns the stats payload."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_dir = out / "records"
    if write_records:
        records_dir.mkdir(exist_ok=True)

    dialogues: list[Dialogue] = []
    dropped: list[tuple[str, str]] = []
    record_meta: list[dict] = []
    for i in range(n_dialogues):
        rng = np.random.default_rng((seed, i))
        scenario = sample_scenario(rng, lead_config)
        sequence = ACTION_SEQUENCES[scenario.action_sequence_id]
        record_id = f"rec-{seed}-{i:05d}"
        record, meta = record_for_sequence(sequence, lead_config, rng, record_id)
        dialogue_id = f"dlg-{seed}-{i:05d}"
        dialogue = generate_dialogue(scenario, record, rng=rng,
                                     dialogue_id=dialogue_id)
        decision = filter_dialogue(dialogue)
        if not decision.keep:
            dropped.append((dialogue_id, decision.reason or "unknown"))
            continue
        if write_records:
            write_csv(record, records_dir / f"{record_id}.csv")
        record_meta.append({"record_id": record_id, **meta})
        dialogues.append(dialogue)

    lines = [serialize_dialogue(d).decode() for d in dialogues]
    (out / "dialogues.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    meta_lines = [json.dumps(m, sort_keys=True) for m in record_meta]
    (out / "records_meta.jsonl").write_text(
        "\n".join(meta_lines) + ("\n" if meta_lines else ""))

    splits = split_dataset(dialogues, seed) if len(dialogues) >= 10 else {
        "train": dialogues, "val": [], "test": []}
    for name, items in splits.items():
        text = "\n".join(serialize_dialogue(d).decode() for d in items)
        (out / f"{name}.jsonl").write_text(text + ("\n" if text else ""))

    instances = [inst for d in dialogues for inst in explode_turns(d)]
    dataset_hash = hashlib.sha256(
        (out / "dialogues.jsonl").read_bytes()).hexdigest()

    counts = {"topic": {}, "cefr": {}, "sequence": {}}
    for d in dialogues:
        counts["topic"][d.scenario.topic] = counts["topic"].get(d.scenario.topic, 0) + 1
        counts["cefr"][d.scenario.cefr] = counts["cefr"].get(d.scenario.cefr, 0) + 1
        sid = d.scenario.action_sequence_id
        counts["sequence"][sid] = counts["sequence"].get(sid, 0) + 1

    stats = {
        "n_dialogues": len(dialogues),
        "n_dropped": len(dropped),
        "dropped": dropped,
        "lead_config": lead_config.value,
        "seed": seed,
        "counts": {k: dict(sorted(v.items())) for k, v in counts.items()},
        "mean_turns": (float(np.mean([len(d.turns) for d in dialogues]))
                       if dialogues else 0.0),
        "mean_agent_turns": (float(np.mean([len(d.agent_turns()) for d in dialogues]))
                             if dialogues else 0.0),
        "n_training_instances": len(instances),
        "splits": {name: len(items) for name, items in splits.items()},
        "dataset_sha256": dataset_hash,
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return stats


def load_corpus(path) -> list[Dialogue]:
    """Read a dialogues.jsonl (or split) file back into validated dialogues."""
    dialogues = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            dialogues.append(parse_dialogue(line))
    return dialogues
