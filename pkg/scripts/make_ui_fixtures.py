#!/usr/bin/env python3
"""Regenerate the frontend test fixtures from the dialogue generator.

Each fixture is a served-transcript payload (dialogue dict plus timing
metadata) exactly as GET /v1/sessions/{id} returns it.

Usage: python scripts/make_ui_fixtures.py [--out frontend/test/fixtures]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from ecgtalk.corpus import generate_dialogue, record_for_sequence
from ecgtalk.dialogue import ACTION_SEQUENCES, Scenario
from ecgtalk.records import LeadConfig


def transcript_payload(dialogue, record) -> dict:
    payload = dialogue.to_dict()
    payload["created_at"] = 1700000000.0
    payload["updated_at"] = 1700000060.0
    payload["terminal"] = dialogue.is_complete()
    payload["record_duration_s"] = record.duration_s
    return payload


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="frontend/test/fixtures")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cases = [
        ("classification", Scenario("arrhythmia-diagnosis", "B", "seq-01")),
        ("measurement_followup", Scenario("measurement-meaning", "A", "seq-06")),
        ("explanation", Scenario("symptom-interpretation", "C", "seq-03")),
        ("tool_failure", Scenario("device-usage", "B", "seq-11")),
    ]
    for name, scenario in cases:
        rng = np.random.default_rng(hash(name) % (2 ** 31))
        sequence = ACTION_SEQUENCES[scenario.action_sequence_id]
        record, _ = record_for_sequence(sequence, LeadConfig.LEAD_II, rng,
                                        f"fixture-{name}")
        dialogue = generate_dialogue(scenario, record, rng=rng,
                                     dialogue_id=f"fixture-{name}")
        path = out / f"{name}.json"
        path.write_text(json.dumps(transcript_payload(dialogue, record),
                                   indent=2, sort_keys=True) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
