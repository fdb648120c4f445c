"""Top-level command line interface.

Subcommands: chat | measure | classify | explain | synth-ecg | synth-mtd |
eval | serve.  All subcommands honor ``--config <file>`` plus flag overrides
and exit 0 only on full success.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
from pathlib import Path

from . import __version__
from .errors import EcgTalkError


def _add_record_args(parser: argparse.ArgumentParser):
    parser.add_argument("record", help="path to the record (CSV or WFDB .hea)")
    parser.add_argument("--format", choices=("csv", "wfdb_subset"), default="csv")
    parser.add_argument("--sampling-rate", type=float, default=None,
                        help="CSV sampling rate override (else sidecar)")


def _load_record(args):
    from .io import load_record

    return load_record(args.record, args.format,
                       sampling_rate_hz=args.sampling_rate)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecgtalk",
        description="Tool-calling agent runtime for multi-turn ECG dialogue.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", default=None, help="path to a JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("measure", help="run the measurement tool on a record")
    _add_record_args(p)
    p.add_argument("--json", action="store_true", help="print raw JSON")

    p = sub.add_parser("classify", help="run the classification tool on a record")
    _add_record_args(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("explain", help="locate evidence intervals for a class")
    _add_record_args(p)
    p.add_argument("--class", dest="class_code", required=True,
                   help="diagnostic class code (e.g. PVC)")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("synth-ecg", help="generate a synthetic record")
    p.add_argument("--hr", type=float, default=60.0, help="heart rate in bpm")
    p.add_argument("--duration", type=float, default=10.0, help="seconds")
    p.add_argument("--rate", type=float, default=500.0, help="sampling rate Hz")
    p.add_argument("--noise", type=float, default=0.0, help="noise std in mV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lead", choices=("twelve_lead", "lead_i", "lead_ii"),
                   default="lead_ii")
    p.add_argument("--no-p-wave", action="store_true")
    p.add_argument("--premature", type=int, default=None,
                   help="inject a ventricular ectopic at this beat index")
    p.add_argument("--st-depression", type=float, default=0.0, help="mV")
    p.add_argument("--jitter", type=float, default=0.0, help="RR jitter fraction")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--fiducials", help="optional JSON path for the landmark oracle")

    p = sub.add_parser("synth-mtd", help="build a multi-turn dialogue corpus")
    p.add_argument("--n", type=int, required=True, help="number of dialogues")
    p.add_argument("--lead", choices=("twelve_lead", "lead_i", "lead_ii"),
                   default="lead_ii")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="evaluate an agent over a corpus")
    p.add_argument("--dataset", required=True, help="corpus directory")
    p.add_argument("--agent", default="replay",
                   help="replay | keyword | backend (uses --config backend)")
    p.add_argument("--judge", choices=("rule", "llm"), default="rule")
    p.add_argument("--mode", choices=("with_gt", "without_gt"), default="with_gt")
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None, help="write the report JSON here")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000,
                   help="0 picks a free port and prints it")
    p.add_argument("--sessions-dir", default=None)
    p.add_argument("--records-dir", default=None)
    p.add_argument("--static-dir", default=None,
                   help="serve the chat UI bundle from this directory")
    p.add_argument("--debug-trace", action="store_true")

    p = sub.add_parser("chat", help="interactive terminal session")
    _add_record_args(p)

    return parser


def _cmd_measure(args) -> int:
    from .measure import measurement_tool_call

    output = measurement_tool_call(_load_record(args))
    if args.json:
        print(json.dumps(output.to_dict(), indent=2, sort_keys=True))
    elif output.is_valid:
        from .compose import compose_measurement

        print(compose_measurement(output.body, "C"))
    else:
        print(f"measurement invalid: {output.reason}", file=sys.stderr)
        return 1
    return 0


def _cmd_classify(args) -> int:
    from .classify import classification_tool_call

    output = classification_tool_call(_load_record(args))
    if args.json:
        print(json.dumps(output.to_dict(), indent=2, sort_keys=True))
    elif output.is_valid:
        from .compose import compose_classification

        print(compose_classification(output.body, "C"))
        for code, rule in sorted(output.body.get("rule_trace", {}).items()):
            print(f"  {code}: {rule}")
    else:
        print(f"classification invalid: {output.reason}", file=sys.stderr)
        return 1
    return 0


def _cmd_explain(args) -> int:
    from .explain import explanation_tool_call

    output = explanation_tool_call(_load_record(args), args.class_code)
    if args.json:
        print(json.dumps(output.to_dict(), indent=2, sort_keys=True))
    elif output.is_valid:
        from .compose import compose_explanation

        print(compose_explanation(output.body, "C"))
    else:
        print(f"explanation invalid: {output.reason}", file=sys.stderr)
        return 1
    return 0


def _cmd_synth_ecg(args) -> int:
    from .io import write_csv
    from .records import LeadConfig
    from .synth import EcgTemplate, PrematureBeat, synthesize_ecg

    template = EcgTemplate.default()
    if args.no_p_wave:
        template = template.without_p_wave()
    premature = [PrematureBeat(args.premature)] if args.premature is not None else []
    record, fiducials = synthesize_ecg(
        args.hr, args.duration, args.rate, args.noise, args.seed,
        template=template, lead_config=LeadConfig(args.lead),
        rr_jitter_frac=args.jitter, premature=premature,
        st_depression_mv=args.st_depression)
    write_csv(record, args.out)
    if args.fiducials:
        payload = [{name: getattr(b, name) for name in b.LANDMARK_ORDER}
                   for b in fiducials.beats]
        Path(args.fiducials).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {record.record_id}: {record.n_samples} samples x "
          f"{len(record.leads)} leads, {len(fiducials)} beats -> {args.out}")
    return 0


def _cmd_synth_mtd(args) -> int:
    from .corpus import build_corpus
    from .records import LeadConfig

    stats = build_corpus(args.n, LeadConfig(args.lead), args.seed, args.out)
    print(json.dumps({k: stats[k] for k in
                      ("n_dialogues", "n_dropped", "mean_turns", "splits",
                       "n_training_instances", "dataset_sha256")},
                     indent=2, sort_keys=True))
    return 0 if stats["n_dropped"] == 0 else 1


def _cmd_eval(args, config) -> int:
    from .evaluation import (GroundTruthReplayAgent, LlmJudge,
                             OrchestratorEvalAgent, RuleJudge, render_report_table,
                             run_evaluation)

    if args.agent == "replay":
        agent = GroundTruthReplayAgent()
    elif args.agent in ("keyword", "backend"):
        from .config import make_backend
        from .io import load_csv

        records_dir = Path(args.dataset) / "records"

        def resolve(record_ref: str):
            return load_csv(records_dir / f"{record_ref}.csv")

        if args.agent == "keyword":
            from .agent import KeywordBackend

            agent = OrchestratorEvalAgent(KeywordBackend, resolve)
        else:
            agent = OrchestratorEvalAgent(lambda: make_backend(config.backend),
                                          resolve)
    else:
        print(f"unknown agent {args.agent!r}", file=sys.stderr)
        return 1

    if args.judge == "rule":
        judge = RuleJudge()
    else:
        from .config import make_backend

        judge = LlmJudge(make_backend(config.backend))

    report = run_evaluation(args.dataset, agent, judge, mode=args.mode,
                            split=args.split, seed=args.seed)
    print(render_report_table(report))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        print(f"report written to {args.out}")
    return 0


def _cmd_serve(args, config) -> int:
    import uvicorn

    from .config import AppConfig
    from .service import create_app

    overrides = {}
    if args.sessions_dir:
        overrides["sessions_dir"] = args.sessions_dir
    if args.records_dir:
        overrides["records_dir"] = args.records_dir
    if args.debug_trace:
        overrides["debug_trace"] = True
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    app = create_app(config, static_dir=args.static_dir)

    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((args.host, args.port))
    host, port = sock.getsockname()[:2]
    print(f"ecgtalk service listening on http://{host}:{port}", flush=True)
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning"))
    server.run(sockets=[sock])
    return 0


def _cmd_chat(args, config) -> int:
    from .agent import AgentSession, OrchestratorConfig
    from .config import make_backend
    from .dialogue import DialogueTurn, UserAction

    record = _load_record(args)
    session = AgentSession(
        record, make_backend(config.backend),
        config=OrchestratorConfig(retry_budget=config.retry_budget,
                                  token_budget=config.token_budget,
                                  composer=config.composer))
    print(f"chatting about record {record.record_id} "
          f"({record.lead_config.value}); actions: inquiry | follow-up | bye")
    action_map = {"inquiry": UserAction.ECG_INQUIRY,
                  "follow-up": UserAction.REQUEST_FOLLOW_UP,
                  "bye": UserAction.USER_BYE}
    while not session.is_terminal:
        try:
            raw = input("you> ").strip()
        except EOFError:
            break
        if not raw:
            continue
        action = UserAction.ECG_INQUIRY
        for prefix, mapped in action_map.items():
            if raw.lower().startswith(prefix + ":"):
                action = mapped
                raw = raw[len(prefix) + 1:].strip() or raw
                break
        else:
            if raw.lower() in ("bye", "goodbye", "quit", "exit"):
                action = UserAction.USER_BYE
        for turn in session.run_turn(DialogueTurn.user(action, raw)):
            if turn.tool_output is not None:
                print(f"  [{turn.action.value}] -> {turn.tool_output.status}")
            else:
                print(f"agent ({turn.action.value})> {turn.content}")
    print("session ended.")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    from .config import load_config

    try:
        config = load_config(args.config)
        if args.command == "measure":
            return _cmd_measure(args)
        if args.command == "classify":
            return _cmd_classify(args)
        if args.command == "explain":
            return _cmd_explain(args)
        if args.command == "synth-ecg":
            return _cmd_synth_ecg(args)
        if args.command == "synth-mtd":
            return _cmd_synth_mtd(args)
        if args.command == "eval":
            return _cmd_eval(args, config)
        if args.command == "serve":
            return _cmd_serve(args, config)
        if args.command == "chat":
            return _cmd_chat(args, config)
        parser.error(f"unknown command {args.command}")
    except EcgTalkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
