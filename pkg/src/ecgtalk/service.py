"""HTTP service: chat sessions, tool endpoints, evaluation jobs.

Sessions persist as append-only JSONL logs (one header line, then one line
per turn), so a restart reproduces every transcript byte-identically.  A
per-session lock serializes message handling: concurrent posts to the same
session yield 409 for the loser.  Evaluation jobs run on a small worker pool.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from . import __version__
from .agent import AgentSession, OrchestratorConfig
from .config import AppConfig, make_backend
from .dialogue import DialogueTurn, Speaker, UserAction, parse_action, step
from .errors import EcgTalkError, TransitionRejected
from .io import load_csv
from .records import EcgRecord, LeadConfig
from .tools import ToolOutput


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail=None):
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail
        super().__init__(message)


class SessionStore:
    """Append-only JSONL log per session, with an in-memory index."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.jsonl"

    def create(self, session_id: str, header: dict):
        line = json.dumps({"header": header}, sort_keys=True)
        self.path(session_id).write_text(line + "\n")

    def append_turn(self, session_id: str, turn: DialogueTurn, ts: float):
        line = json.dumps({"turn": turn.to_dict(), "ts": ts}, sort_keys=True)
        with self.path(session_id).open("a") as fh:
            fh.write(line + "\n")

    def load_all(self) -> dict[str, tuple[dict, list[tuple[dict, float]]]]:
        sessions = {}
        for path in sorted(self.directory.glob("*.jsonl")):
            lines = [json.loads(l) for l in path.read_text().splitlines() if l.strip()]
            if not lines or "header" not in lines[0]:
                continue
            header = lines[0]["header"]
            turns = [(entry["turn"], entry["ts"]) for entry in lines[1:]]
            sessions[path.stem] = (header, turns)
        return sessions


def _parse_turn_dict(data: dict) -> DialogueTurn:
    tool_output = None
    if data.get("tool_output") is not None:
        tool_output = ToolOutput.from_dict(data["tool_output"])
    return DialogueTurn(
        speaker=Speaker(data["speaker"]),
        action=parse_action(data["action"]),
        content=data.get("content"),
        thought=data.get("thought"),
        tool_output=tool_output)


class ServiceSession:
    def __init__(self, agent_session: AgentSession, created_at: float):
        self.agent = agent_session
        self.lock = threading.Lock()
        self.created_at = created_at
        self.turn_timestamps: list[float] = []

    @property
    def updated_at(self) -> float:
        return self.turn_timestamps[-1] if self.turn_timestamps else self.created_at

    def transcript(self) -> dict:
        dialogue = self.agent.to_dialogue()
        payload = dialogue.to_dict()
        payload["created_at"] = self.created_at
        payload["updated_at"] = self.updated_at
        payload["terminal"] = self.agent.is_terminal
        return payload


def _record_from_payload(payload: dict) -> EcgRecord:
    try:
        leads = [(name, np.asarray(samples, dtype=np.float64))
                 for name, samples in payload["leads"].items()]
        return EcgRecord.build(payload.get("record_id", "uploaded"),
                               float(payload["sampling_rate_hz"]), leads)
    except (KeyError, TypeError, ValueError, EcgTalkError) as exc:
        raise ApiError(400, "invalid_record", "record payload rejected",
                       detail=str(exc)) from None


def create_app(config: Optional[AppConfig] = None,
               static_dir: Optional[str] = None) -> FastAPI:
    config = config or AppConfig()
    app = FastAPI(title="ecgtalk", version=__version__)
    store = SessionStore(config.sessions_dir)
    sessions: dict[str, ServiceSession] = {}
    executor = ThreadPoolExecutor(max_workers=2)
    jobs: dict[str, dict] = {}
    jobs_lock = threading.Lock()

    custom_classes = None
    if config.registry_path:
        from .classify import load_registry_file

        custom_classes = load_registry_file(config.registry_path)

    def new_agent_session(record: EcgRecord, session_id: str) -> AgentSession:
        registry = None
        if custom_classes is not None:
            from .classify import class_registry

            registry = class_registry(record.lead_config, classes=custom_classes)
        return AgentSession(
            record, make_backend(config.backend),
            config=OrchestratorConfig(retry_budget=config.retry_budget,
                                      token_budget=config.token_budget,
                                      composer=config.composer),
            registry=registry,
            session_id=session_id)

    # restore persisted sessions
    for session_id, (header, turn_entries) in store.load_all().items():
        try:
            record = _record_from_payload(header["record"])
        except ApiError:
            continue
        service_session = ServiceSession(new_agent_session(record, session_id),
                                         created_at=header["created_at"])
        for turn_dict, ts in turn_entries:
            turn = _parse_turn_dict(turn_dict)
            service_session.agent.state = step(service_session.agent.state, turn)
            service_session.agent.turns.append(turn)
            service_session.turn_timestamps.append(ts)
        sessions[session_id] = service_session

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={
            "code": exc.code, "message": exc.message, "detail": exc.detail})

    def get_session(session_id: str) -> ServiceSession:
        session = sessions.get(session_id)
        if session is None:
            raise ApiError(404, "session_not_found", f"no session {session_id}")
        return session

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/v1/sessions", status_code=201)
    async def create_session(request: Request):
        payload = await request.json()
        if "record" in payload:
            record = _record_from_payload(payload["record"])
        elif "record_id" in payload:
            if not config.records_dir:
                raise ApiError(400, "no_records_dir",
                               "server has no records directory configured")
            path = Path(config.records_dir) / f"{payload['record_id']}.csv"
            if not path.exists():
                raise ApiError(404, "record_not_found",
                               f"record {payload['record_id']} not found")
            record = load_csv(path)
        else:
            raise ApiError(400, "missing_record",
                           "provide 'record' inline or a 'record_id'")
        if "lead_config" in payload:
            try:
                requested = LeadConfig(payload["lead_config"])
            except ValueError:
                raise ApiError(400, "invalid_lead_config",
                               f"unknown lead_config {payload['lead_config']!r}")
            if requested is not record.lead_config:
                from .records import select_leads

                try:
                    record = select_leads(record, requested)
                except EcgTalkError as exc:
                    raise ApiError(400, "invalid_lead_config", str(exc))
        session_id = f"s-{uuid.uuid4().hex[:12]}"
        service_session = ServiceSession(new_agent_session(record, session_id),
                                         created_at=time.time())
        sessions[session_id] = service_session
        store.create(session_id, {
            "created_at": service_session.created_at,
            "record": {
                "record_id": record.record_id,
                "sampling_rate_hz": record.sampling_rate_hz,
                "leads": {name: samples.tolist() for name, samples in record.leads},
            },
        })
        return {"session_id": session_id,
                "lead_config": record.lead_config.value,
                "record_id": record.record_id}

    @app.post("/v1/sessions/{session_id}/messages")
    async def post_message(session_id: str, request: Request):
        session = get_session(session_id)
        payload = await request.json()
        try:
            action = UserAction(payload.get("action", ""))
        except ValueError:
            raise ApiError(400, "invalid_action",
                           f"unknown user action {payload.get('action')!r}")
        content = payload.get("content")
        if not content or not isinstance(content, str):
            raise ApiError(400, "missing_content", "message needs text content")
        if session.agent.is_terminal:
            raise ApiError(410, "session_terminal",
                           "dialogue already ended with system_bye")
        if not session.lock.acquire(blocking=False):
            raise ApiError(409, "turn_in_flight",
                           "another message is being processed for this session")
        try:
            user_turn = DialogueTurn.user(action, content)
            before = len(session.agent.turns)
            try:
                agent_turns = session.agent.run_turn(user_turn)
            except TransitionRejected as exc:
                raise ApiError(400, "illegal_action", str(exc))
            now = time.time()
            for turn in session.agent.turns[before:]:
                store.append_turn(session_id, turn, now)
                session.turn_timestamps.append(now)
            return {"turns": [t.to_dict() for t in agent_turns],
                    "terminal": session.agent.is_terminal}
        finally:
            session.lock.release()

    @app.get("/v1/sessions/{session_id}")
    def get_transcript(session_id: str):
        # canonical JSON so transcripts survive restarts byte-identically
        payload = get_session(session_id).transcript()
        return Response(content=json.dumps(payload, sort_keys=True),
                        media_type="application/json")

    @app.get("/v1/sessions/{session_id}/trace")
    def get_trace(session_id: str):
        if not config.debug_trace:
            raise ApiError(403, "trace_disabled",
                           "start the server with debug_trace enabled")
        session = get_session(session_id)
        return {"session_id": session_id, "trace": session.agent.trace}

    @app.post("/v1/eval", status_code=202)
    async def submit_eval(request: Request):
        from .evaluation import GroundTruthReplayAgent, RuleJudge, run_evaluation

        payload = await request.json()
        dataset_dir = payload.get("dataset_dir")
        if not dataset_dir or not Path(dataset_dir).exists():
            raise ApiError(400, "invalid_dataset", f"dataset_dir {dataset_dir!r} "
                                                   "missing or does not exist")
        agent_kind = payload.get("agent", "replay")
        if agent_kind != "replay":
            raise ApiError(400, "invalid_agent",
                           "only the 'replay' identity agent is served here")
        mode = payload.get("mode", "with_gt")
        split = payload.get("split", "test")
        job_id = f"j-{uuid.uuid4().hex[:12]}"
        with jobs_lock:
            jobs[job_id] = {"status": "running", "report": None, "error": None}

        def run():
            try:
                report = run_evaluation(dataset_dir, GroundTruthReplayAgent(),
                                        RuleJudge(), mode=mode, split=split)
                with jobs_lock:
                    jobs[job_id].update(status="done", report=report)
            except Exception as exc:  # surfaced through the job status
                with jobs_lock:
                    jobs[job_id].update(status="failed", error=str(exc))

        executor.submit(run)
        return {"job_id": job_id}

    @app.get("/v1/eval/{job_id}")
    def get_eval(job_id: str):
        with jobs_lock:
            job = jobs.get(job_id)
            if job is None:
                raise ApiError(404, "job_not_found", f"no evaluation job {job_id}")
            return dict(job)

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=static_dir, html=True), name="ui")

        @app.get("/")
        def index():
            return Response(status_code=307, headers={"Location": "/ui/"})

    return app
