#!/usr/bin/env python3
"""Build a desk-scale dialogue corpus per lead configuration and run the
identity evaluation (ground-truth replay agent + rule judge) over each.

Usage: python scripts/build_and_eval_corpus.py --n 120 --out runs/corpus
"""

import argparse
import json
from pathlib import Path

from ecgtalk.corpus import build_corpus
from ecgtalk.evaluation import (GroundTruthReplayAgent, RuleJudge,
                                render_report_table, run_evaluation)
from ecgtalk.records import LeadConfig


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=120)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/corpus")
    args = parser.parse_args()

    for lead in (LeadConfig.TWELVE_LEAD, LeadConfig.LEAD_I, LeadConfig.LEAD_II):
        out_dir = Path(args.out) / lead.value
        stats = build_corpus(args.n, lead, args.seed, out_dir)
        print(f"[{lead.value}] {stats['n_dialogues']} dialogues, "
              f"{stats['n_dropped']} dropped, "
              f"mean turns {stats['mean_turns']:.2f}, "
              f"{stats['n_training_instances']} training instances")
        report = run_evaluation(out_dir, GroundTruthReplayAgent(), RuleJudge(),
                                split="test", model_id="replay", seed=args.seed)
        print(render_report_table(report))
        (out_dir / "report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n")
        print()


if __name__ == "__main__":
    main()
