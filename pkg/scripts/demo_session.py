#!/usr/bin/env python3
"""Run a full scripted conversation against a synthetic record and print the
transcript with thoughts and tool statuses.

Usage: python scripts/demo_session.py [--hr 75]
"""

import argparse

from ecgtalk.agent import AgentSession, KeywordBackend
from ecgtalk.dialogue import DialogueTurn, UserAction
from ecgtalk.synth import synthesize_ecg


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--hr", type=float, default=75.0)
    args = parser.parse_args()

    record, _ = synthesize_ecg(args.hr, 10, 500, 0.02, seed=7)
    session = AgentSession(record, KeywordBackend())
    script = [
        (UserAction.ECG_INQUIRY, "How fast is my heart beating?"),
        (UserAction.REQUEST_FOLLOW_UP, "Can you tell me more about that?"),
        (UserAction.ECG_INQUIRY, "Does the rhythm look normal?"),
        (UserAction.USER_BYE, "Great, thanks. Bye!"),
    ]
    for action, text in script:
        print(f"user [{action.value}]: {text}")
        for turn in session.run_turn(DialogueTurn.user(action, text)):
            if turn.tool_output is not None:
                print(f"  agent [{turn.action.value}] "
                      f"(thought: {turn.thought}) -> {turn.tool_output.status}")
            else:
                print(f"  agent [{turn.action.value}]: {turn.content}")
    print("\ntranscript replays cleanly:",
          session.to_dialogue().is_complete())


if __name__ == "__main__":
    main()
